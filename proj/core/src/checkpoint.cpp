#include "skf/checkpoint.hpp"

#include <bit>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace skf {

using nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t arch_hash(const FlatConfig& config) {
  // only the keys that shape parameter tensors
  static const char* keys[] = {"model.variant",   "model.d_model",
                               "model.mlp_dim",   "model.heads",
                               "model.patch_size", "model.image_size",
                               "model.sigma"};
  FlatConfig subset;
  for (const char* k : keys) {
    if (config.has(k)) {
      subset.set(k, config.entries().at(k));
    }
  }
  return subset.hash_subset("");
}

namespace detail {

void write_checkpoint_files(const std::string& dir,
                            const CheckpointManifest& manifest,
                            const std::vector<float>& blob) {
  fs::create_directories(dir);
  json doc;
  doc["format"] = "skf-checkpoint-v1";
  doc["config"] = json::parse(manifest.config.to_json());
  doc["step"] = manifest.step;
  doc["seed"] = manifest.seed;
  doc["arch_hash"] = manifest.arch_hash;
  doc["adam_t"] = manifest.adam_t;
  doc["created"] = manifest.created;
  json params = json::array();
  for (const auto& rec : manifest.params) {
    json r;
    r["path"] = rec.path;
    r["shape"] = rec.shape;
    r["offset"] = rec.offset;
    r["count"] = rec.count;
    params.push_back(std::move(r));
  }
  doc["params"] = std::move(params);
  {
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw Error("checkpoint: cannot write manifest in " + dir);
    out << doc.dump(2) << "\n";
  }
  std::ofstream bin(fs::path(dir) / "params.bin", std::ios::binary);
  if (!bin) throw Error("checkpoint: cannot write params.bin in " + dir);
  std::vector<unsigned char> bytes(blob.size() * 4);
  for (std::size_t i = 0; i < blob.size(); ++i) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(blob[i]);
    bytes[4 * i + 0] = static_cast<unsigned char>(u & 0xff);
    bytes[4 * i + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
    bytes[4 * i + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
    bytes[4 * i + 3] = static_cast<unsigned char>((u >> 24) & 0xff);
  }
  bin.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

LoadedCheckpoint read_checkpoint_files(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw Error("checkpoint: cannot open manifest in " + dir);
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw Error(std::string("checkpoint: invalid manifest: ") + e.what());
  }
  LoadedCheckpoint ckpt;
  ckpt.manifest.config = FlatConfig::parse_json(doc.at("config").dump());
  ckpt.manifest.step = doc.at("step").get<std::uint64_t>();
  ckpt.manifest.seed = doc.at("seed").get<std::uint64_t>();
  ckpt.manifest.arch_hash = doc.at("arch_hash").get<std::uint64_t>();
  ckpt.manifest.adam_t = doc.value("adam_t", std::uint64_t{0});
  ckpt.manifest.created = doc.value("created", "");
  std::size_t total = 0;
  for (const auto& r : doc.at("params")) {
    ParamRecord rec;
    rec.path = r.at("path").get<std::string>();
    rec.shape = r.at("shape").get<Shape>();
    rec.offset = r.at("offset").get<std::uint64_t>();
    rec.count = r.at("count").get<std::uint64_t>();
    if (numel(rec.shape) != rec.count) {
      throw Error("checkpoint: corrupt record for '" + rec.path + "'");
    }
    total = std::max(total, static_cast<std::size_t>(rec.offset + rec.count));
    ckpt.manifest.params.push_back(std::move(rec));
  }

  std::ifstream bin(fs::path(dir) / "params.bin", std::ios::binary);
  if (!bin) throw Error("checkpoint: cannot open params.bin in " + dir);
  bin.seekg(0, std::ios::end);
  const std::streamoff bytes = bin.tellg();
  bin.seekg(0);
  if (static_cast<std::size_t>(bytes) != total * 4) {
    throw Error("checkpoint: params.bin holds " + std::to_string(bytes) +
                " bytes, manifest expects " + std::to_string(total * 4));
  }
  std::vector<unsigned char> raw(total * 4);
  bin.read(reinterpret_cast<char*>(raw.data()),
           static_cast<std::streamsize>(raw.size()));
  if (!bin) throw Error("checkpoint: short read of params.bin");
  std::vector<float> values(total);
  for (std::size_t i = 0; i < total; ++i) {
    const std::uint32_t u = static_cast<std::uint32_t>(raw[4 * i]) |
                            (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                            (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                            (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
    values[i] = std::bit_cast<float>(u);
  }
  for (const auto& rec : ckpt.manifest.params) {
    std::vector<float> data(values.begin() + rec.offset,
                            values.begin() + rec.offset + rec.count);
    ckpt.tensors.emplace(rec.path, Tensor<float>(rec.shape, std::move(data)));
  }
  return ckpt;
}

}  // namespace detail

}  // namespace skf
