// skf: verification, training, probing and benchmarking for the
// superposition-kernel attention library.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "skf/bench.hpp"
#include "skf/checkpoint.hpp"
#include "skf/config.hpp"
#include "skf/probe.hpp"
#include "skf/train.hpp"
#include "skf/verify.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::string precision = "f64";
  std::int64_t seed = -1;  // -1: keep config value
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "flat-key JSON config file");
  cmd->add_option("--out", args.out_dir, "artifact output directory");
  cmd->add_option("--seed", args.seed, "RNG seed (overrides the config key)");
  cmd->add_option("--precision", args.precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  cmd->add_option("--set", args.overrides,
                  "key=value config override, repeatable");
}

skf::FlatConfig resolve_config(const CommonArgs& args) {
  skf::FlatConfig cfg = skf::default_run_config();
  if (!args.config_path.empty()) {
    cfg.merge(skf::FlatConfig::from_file(args.config_path));
  }
  for (const std::string& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw skf::Error("--set expects key=value, got '" + kv + "'");
    }
    cfg.set_from_text(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed >= 0) cfg.set("seed", args.seed);
  return cfg;
}

skf::RunManifest begin_manifest(const std::string& command,
                                const CommonArgs& args,
                                const skf::FlatConfig& cfg) {
  skf::RunManifest m;
  m.command = command;
  m.config_path = args.config_path;
  m.config = cfg;
  m.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  m.out_dir = args.out_dir;
  m.started_at = skf::iso8601_now();
  m.write(args.out_dir);
  return m;
}

void finish_manifest(skf::RunManifest& m, const std::string& dir) {
  m.finished_at = skf::iso8601_now();
  m.write(dir);
}

std::vector<skf::BenchPoint> parse_grid(const std::string& text) {
  std::vector<skf::BenchPoint> grid;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find(';', pos);
    if (end == std::string::npos) end = text.size();
    const std::string item = text.substr(pos, end - pos);
    skf::BenchPoint pt;
    if (std::sscanf(item.c_str(), "%zu,%zu,%zu", &pt.b, &pt.s, &pt.d) != 3) {
      throw skf::Error("bench grid entry '" + item + "' is not B,S,D");
    }
    grid.push_back(pt);
    pos = end + 1;
  }
  if (grid.empty()) throw skf::Error("bench grid is empty");
  return grid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"superposition-kernel attention toolkit"};
  app.require_subcommand(1);

  CommonArgs verify_args, pretrain_args, finetune_args, probe_args, bench_args;

  auto* verify = app.add_subcommand("verify", "run a verification suite");
  std::string suite = "all";
  verify->add_option("--suite", suite,
                     "superposition|conv|embed|variance|params|bspline|all");
  add_common(verify, verify_args);

  auto* pretrain = app.add_subcommand("pretrain", "MAE pretraining loop");
  std::string resume;
  pretrain->add_option("--resume", resume, "checkpoint directory to resume");
  add_common(pretrain, pretrain_args);

  auto* finetune =
      app.add_subcommand("finetune", "classifier training with layer-prefix "
                         "initialization from a pretrain checkpoint");
  std::string finetune_ckpt;
  finetune->add_option("--checkpoint", finetune_ckpt,
                       "pretrain checkpoint directory (optional)");
  add_common(finetune, finetune_args);

  auto* probe = app.add_subcommand("probe", "export attention heatmaps");
  skf::ProbeOptions probe_opts;
  std::string layers = "";
  probe->add_option("--checkpoint", probe_opts.checkpoint_dir,
                    "checkpoint directory")
      ->required();
  probe->add_option("--images", probe_opts.images,
                    "'synthetic' or a CIFAR-10 directory");
  probe->add_option("--index", probe_opts.image_index, "image index");
  probe->add_option("--layers", layers, "layer range begin:end (exclusive)");
  probe->add_flag("--raw-scores", probe_opts.raw_scores,
                  "also dump scaled pre-softmax scores");
  add_common(probe, probe_args);

  auto* bench = app.add_subcommand(
      "bench", "materialized vs streamed kernel-tensor timing");
  std::string grid_text = "1,4,4;2,8,8;2,16,16;4,64,256";
  std::string bench_kernel = "linear";
  skf::BenchOptions bench_opts;
  bench->add_option("--grid", grid_text, "semicolon-separated B,S,D triples");
  bench->add_option("--reps", bench_opts.repetitions, "timing repetitions");
  bench->add_option("--budget-bytes", bench_opts.byte_budget,
                    "materialization byte budget");
  bench->add_option("--kernel", bench_kernel, "linear|gaussian");
  add_common(bench, bench_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (verify->parsed()) {
      skf::FlatConfig cfg = resolve_config(verify_args);
      auto manifest = begin_manifest("verify", verify_args, cfg);
      auto report = skf::run_verify_suite(
          suite, skf::precision_from_string(verify_args.precision),
          static_cast<std::uint64_t>(cfg.get_int("seed", 0)));
      report.print(stdout);
      report.write_json(
          (std::filesystem::path(verify_args.out_dir) / "verify_report.json")
              .string());
      finish_manifest(manifest, verify_args.out_dir);
      return report.all_pass() ? 0 : 1;
    }
    if (pretrain->parsed()) {
      skf::FlatConfig cfg = resolve_config(pretrain_args);
      auto manifest = begin_manifest("pretrain", pretrain_args, cfg);
      auto result = skf::run_pretrain(cfg, pretrain_args.out_dir, resume);
      finish_manifest(manifest, pretrain_args.out_dir);
      std::printf("pretrain: %zu steps, loss %.6f -> %.6f, checkpoint %s\n",
                  result.steps, result.first_loss, result.final_loss,
                  result.checkpoint_dir.c_str());
      return 0;
    }
    if (finetune->parsed()) {
      skf::FlatConfig cfg = resolve_config(finetune_args);
      auto manifest = begin_manifest("finetune", finetune_args, cfg);
      auto result =
          skf::run_finetune(cfg, finetune_ckpt, finetune_args.out_dir);
      finish_manifest(manifest, finetune_args.out_dir);
      std::printf(
          "finetune: %zu steps, loss %.6f -> %.6f, test accuracy %.4f\n",
          result.steps, result.first_loss, result.final_loss,
          result.test_accuracy);
      return 0;
    }
    if (probe->parsed()) {
      skf::FlatConfig cfg = resolve_config(probe_args);
      auto manifest = begin_manifest("probe", probe_args, cfg);
      probe_opts.out_dir = probe_args.out_dir;
      probe_opts.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
      if (!layers.empty()) {
        const auto colon = layers.find(':');
        if (colon == std::string::npos) {
          throw skf::Error("--layers expects begin:end");
        }
        probe_opts.layer_begin = std::stoul(layers.substr(0, colon));
        probe_opts.layer_end = std::stoul(layers.substr(colon + 1));
      }
      auto summary = skf::run_probe(probe_opts);
      finish_manifest(manifest, probe_args.out_dir);
      std::printf("probe: %zu layers x %zu heads, %zu files\n",
                  summary.layers, summary.heads, summary.files_written);
      return 0;
    }
    if (bench->parsed()) {
      skf::FlatConfig cfg = resolve_config(bench_args);
      auto manifest = begin_manifest("bench", bench_args, cfg);
      bench_opts.grid = parse_grid(grid_text);
      bench_opts.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
      if (bench_kernel == "gaussian") {
        bench_opts.kernel =
            skf::KernelSpec::gaussian(cfg.get_double("model.sigma", 1.0));
      } else if (bench_kernel != "linear") {
        throw skf::Error("bench kernel must be linear or gaussian");
      }
      auto rows = skf::run_kernel_bench(bench_opts);
      const std::string csv =
          (std::filesystem::path(bench_args.out_dir) / "bench.csv").string();
      skf::write_bench_csv(csv, rows);
      finish_manifest(manifest, bench_args.out_dir);
      for (const auto& r : rows) {
        std::printf("B=%zu S=%zu D=%zu estimate=%zu bytes %s\n", r.point.b,
                    r.point.s, r.point.d, r.estimate_bytes,
                    r.materialized_refused ? "(materialization refused)" : "");
      }
      std::printf("bench: %zu rows -> %s\n", rows.size(), csv.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
