#include "skf/verify.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "json.hpp"
#include "skf/attention.hpp"
#include "skf/superposition.hpp"
#include "skf/vit.hpp"

namespace skf {

Precision precision_from_string(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw Error("unknown precision '" + s + "' (expected f32 or f64)");
}

void VerifyReport::print(std::FILE* out) const {
  for (const auto& c : checks) {
    std::fprintf(out, "[%s] %-48s value=%-13.6g threshold=%-10.4g %s\n",
                 c.pass ? "PASS" : "FAIL", c.name.c_str(), c.value,
                 c.threshold, c.note.c_str());
  }
  std::fprintf(out, "%s: %zu checks, %s\n", suite.c_str(), checks.size(),
               all_pass() ? "all passed" : "FAILURES PRESENT");
}

void VerifyReport::write_json(const std::string& path) const {
  nlohmann::json doc;
  doc["suite"] = suite;
  doc["precision"] = precision == Precision::f64 ? "f64" : "f32";
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : checks) {
    nlohmann::json j;
    j["name"] = c.name;
    j["value"] = c.value;
    j["threshold"] = c.threshold;
    j["pass"] = c.pass;
    if (!c.note.empty()) j["note"] = c.note;
    arr.push_back(std::move(j));
  }
  doc["checks"] = std::move(arr);
  doc["all_pass"] = all_pass();
  std::filesystem::create_directories(
      std::filesystem::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw Error("verify: cannot write report to " + path);
  out << doc.dump(2) << "\n";
}

namespace {

void add_check(VerifyReport& rep, const std::string& name, double value,
               double threshold, bool pass, const std::string& note = "") {
  rep.checks.push_back(CheckResult{name, value, threshold, pass, note});
}

void add_max_check(VerifyReport& rep, const std::string& name, double value,
                   double threshold, const std::string& note = "") {
  add_check(rep, name, value, threshold, value <= threshold, note);
}

template <class T>
void embed_suite(VerifyReport& rep, std::uint64_t seed, double threshold) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto cfg = AttentionConfig::make(AttentionVariant::pseudo, 16, 4);
    auto p = AttentionParams<T>::init(cfg, rng);
    p.b1 = uniform_tensor<T>({16}, T(-0.5), T(0.5), rng);
    p.b2 = uniform_tensor<T>({16}, T(-0.5), T(0.5), rng);
    auto x = uniform_tensor<T>({2, 8, 16}, T(-1), T(1), rng);
    auto s = pseudo_to_standard_embed(p);
    AttentionTrace<T> tp, ts;
    auto y_pseudo = pseudo_mhsa_forward(p, x, &tp);
    auto y_std = standard_mhsa_forward(s, x, &ts);
    worst = std::max(worst, max_abs_diff(y_pseudo, y_std));
    worst = std::max(worst, max_abs_diff(tp.maps, ts.maps));
  }
  add_max_check(rep, "embed.pseudo_vs_standard.max_abs_diff", worst, threshold,
                "100 draws, B=2 S=8 D=16 n=4, outputs and maps");
}

template <class T>
void superposition_suite(VerifyReport& rep, std::uint64_t seed,
                         double threshold) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> ext(2, 8);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t s = ext(rng), d = ext(rng), e = ext(rng);
    auto x = uniform_tensor<T>({s, d}, T(-1), T(1), rng);
    auto wq = uniform_tensor<T>({d, e}, T(-1), T(1), rng);
    auto wk = uniform_tensor<T>({d, e}, T(-1), T(1), rng);
    auto wv = uniform_tensor<T>({d, e}, T(-1), T(1), rng);
    worst = std::max(worst,
                     attention_as_superposition(x, wq, wk, wv).max_abs_diff);
  }
  add_max_check(rep, "superposition.attention_identity.max_abs_diff", worst,
                threshold, "100 random instances, S,D,E <= 8");
}

template <class T>
void conv_suite(VerifyReport& rep, std::uint64_t seed, double threshold) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> ext(2, 6);
  std::uniform_int_distribution<std::size_t> bext(1, 3);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = bext(rng), s = ext(rng), d = ext(rng);
    auto x = uniform_tensor<T>({b, s, d}, T(-1), T(1), rng);
    auto w = uniform_tensor<T>({d, d}, T(-1), T(1), rng);
    worst = std::max(worst, conv_equivalence_check(x, w).max_abs_diff);
  }
  add_max_check(rep, "conv.strided_equivalence.max_abs_diff", worst, threshold,
                "50 random instances, S,D <= 6");
}

void variance_suite(VerifyReport& rep, std::uint64_t seed) {
  {
    auto r = variance_probe(KernelSpec::linear(), 8, 0.1, 100000, seed);
    const bool pass = r.ratio >= 0.8 && r.ratio <= 1.25;
    add_check(rep, "variance.linear.ratio", r.ratio, 1.25, pass,
              "band [0.8, 1.25], d_head=8, sigma_w=0.1, 1e5 trials");
  }
  {
    auto r = variance_probe(KernelSpec::gaussian(1.0), 4, 0.1, 100000,
                            seed + 1);
    const bool pass = r.ratio >= 0.7 && r.ratio <= 1.4;
    add_check(rep, "variance.gaussian.ratio", r.ratio, 1.4, pass,
              "band [0.7, 1.4], d_head=4, sigma=1, 1e5 trials");
  }
}

EncoderConfig table_config(AttentionVariant v, std::size_t d_model,
                           std::size_t mlp) {
  EncoderConfig e;
  e.d_model = d_model;
  e.mlp_dim = mlp;
  e.n_layers = 6;
  e.n_heads = 8;
  e.variant = v;
  e.patch_size = 4;
  e.image_h = e.image_w = 32;
  return e;
}

void params_suite(VerifyReport& rep) {
  const auto std_cfg = AttentionConfig::make(AttentionVariant::standard, 256, 8);
  const auto pse_cfg = AttentionConfig::make(AttentionVariant::pseudo, 256, 8);
  const auto sem_cfg = AttentionConfig::make(AttentionVariant::semi, 256, 8);
  const std::size_t n_std = count_params(std_cfg);
  const std::size_t n_pse = count_params(pse_cfg);
  const std::size_t n_sem = count_params(sem_cfg);
  add_check(rep, "params.attention_block.standard",
            static_cast<double>(n_std), 263168.0, n_std == 263168, "exact");
  add_check(rep, "params.attention_block.pseudo", static_cast<double>(n_pse),
            139776.0, n_pse == 139776, "exact");
  add_check(rep, "params.attention_block.semi", static_cast<double>(n_sem),
            147968.0, n_sem == 147968, "exact");
  const double ratio =
      static_cast<double>(n_pse) / static_cast<double>(n_std);
  add_check(rep, "params.pseudo_over_standard_ratio", ratio, 0.531,
            std::abs(ratio - 0.531) < 0.001, "near-half reduction");

  struct Target {
    AttentionVariant variant;
    const char* name;
    double target;
  };
  const Target targets[] = {
      {AttentionVariant::standard, "standard", 3.20e6},
      {AttentionVariant::pseudo, "pseudo", 2.45e6},
      {AttentionVariant::semi, "semi", 2.50e6},
  };
  for (const auto& t : targets) {
    const auto breakdown = count_model_params(table_config(t.variant, 256, 512));
    const double rel =
        std::abs(static_cast<double>(breakdown.total) - t.target) / t.target;
    add_check(rep, std::string("params.model_total.") + t.name,
              static_cast<double>(breakdown.total), t.target, rel <= 0.03,
              "within 3% of " + std::to_string(t.target));
  }
  const auto semi_total = count_model_params(table_config(AttentionVariant::semi, 256, 512)).total;
  const auto pseudo_total = count_model_params(table_config(AttentionVariant::pseudo, 256, 512)).total;
  const double gap = static_cast<double>(semi_total - pseudo_total);
  add_check(rep, "params.semi_minus_pseudo_gap", gap, 49152.0, gap == 49152.0,
            "6 layers x D^2/n");

  // reported, not enforced
  const auto gauss = count_model_params(table_config(AttentionVariant::gaussian, 64, 128));
  add_check(rep, "params.model_total.gaussian(reported)",
            static_cast<double>(gauss.total), 0.0, true,
            "informational (D=64)");
  EncoderConfig lin = table_config(AttentionVariant::linear_sim, 256, 512);
  const auto lin_total = count_model_params(lin);
  add_check(rep, "params.model_total.linear_sim(reported)",
            static_cast<double>(lin_total.total), 0.0, true,
            "informational (position-indexed W_inner)");
}

void bspline_suite(VerifyReport& rep, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // degree-3 partition of unity on the interior of a uniform knot span
  std::vector<double> knots;
  for (int i = 0; i <= 13; ++i) knots.push_back(static_cast<double>(i));
  const int degree = 3;
  const std::size_t n_basis = knots.size() - degree - 1;
  std::uniform_real_distribution<double> interior(knots[degree],
                                                  knots[n_basis]);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double x = interior(rng);
    double sum = 0.0;
    for (std::size_t i = 0; i < n_basis; ++i) {
      sum += bspline_basis(knots, degree, i, x);
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  add_max_check(rep, "bspline.partition_of_unity", worst, 1e-12,
                "degree 3, uniform knots, 100 interior samples");

  // degree-0 basis as a difference of translated steps, exact on a grid
  double step_diff = 0.0;
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    for (double x = -1.0; x <= 14.0; x += 0.25) {
      step_diff = std::max(step_diff,
                           std::abs(bspline_basis(knots, 0, i, x) -
                                    bspline_step_difference(knots, i, x)));
    }
  }
  add_check(rep, "bspline.degree0_step_difference", step_diff, 0.0,
            step_diff == 0.0, "exact identity");
}

}  // namespace

VerifyReport run_verify_suite(const std::string& suite, Precision precision,
                              std::uint64_t seed) {
  VerifyReport rep;
  rep.suite = suite;
  rep.precision = precision;
  const bool f64 = precision == Precision::f64;
  bool known = false;
  if (suite == "embed" || suite == "all") {
    known = true;
    if (f64) {
      embed_suite<double>(rep, seed, 1e-10);
    } else {
      embed_suite<float>(rep, seed, 1e-5);
    }
  }
  if (suite == "superposition" || suite == "all") {
    known = true;
    if (f64) {
      superposition_suite<double>(rep, seed + 11, 1e-9);
    } else {
      superposition_suite<float>(rep, seed + 11, 1e-3);
    }
  }
  if (suite == "conv" || suite == "all") {
    known = true;
    if (f64) {
      conv_suite<double>(rep, seed + 22, 1e-9);
    } else {
      conv_suite<float>(rep, seed + 22, 1e-3);
    }
  }
  if (suite == "variance" || suite == "all") {
    known = true;
    variance_suite(rep, seed + 33);
  }
  if (suite == "params" || suite == "all") {
    known = true;
    params_suite(rep);
  }
  if (suite == "bspline" || suite == "all") {
    known = true;
    bspline_suite(rep, seed + 44);
  }
  if (!known) {
    throw Error("unknown verify suite '" + suite +
                "' (expected superposition|conv|embed|variance|params|"
                "bspline|all)");
  }
  return rep;
}

}  // namespace skf
