#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "skf/config.hpp"
#include "skf/optim.hpp"
#include "skf/tensor.hpp"

namespace skf {

struct ParamRecord {
  std::string path;
  Shape shape;
  std::uint64_t offset = 0;  // element offset into params.bin
  std::uint64_t count = 0;
};

/// Checkpoint layout on disk: <dir>/manifest.json (config snapshot, step,
/// seed, hashes, parameter table) plus <dir>/params.bin holding raw 32-bit
/// little-endian values back to back. Round trips are bit exact.
struct CheckpointManifest {
  FlatConfig config;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t arch_hash = 0;
  std::uint64_t adam_t = 0;
  std::string created;
  std::vector<ParamRecord> params;
};

struct LoadedCheckpoint {
  CheckpointManifest manifest;
  std::map<std::string, Tensor<float>> tensors;
};

namespace detail {

void write_checkpoint_files(const std::string& dir,
                            const CheckpointManifest& manifest,
                            const std::vector<float>& blob);

LoadedCheckpoint read_checkpoint_files(const std::string& dir);

}  // namespace detail

/// Architecture fingerprint over the model.* keys that must agree for
/// parameter transfer between runs.
std::uint64_t arch_hash(const FlatConfig& config);

template <class T>
void save_checkpoint(const std::string& dir, const FlatConfig& config,
                     std::uint64_t step, std::uint64_t seed,
                     const std::vector<ParamRef<T>>& params,
                     AdamW<T>* optimizer = nullptr) {
  CheckpointManifest manifest;
  manifest.config = config;
  manifest.step = step;
  manifest.seed = seed;
  manifest.arch_hash = arch_hash(config);
  manifest.created = iso8601_now();

  std::vector<float> blob;
  auto append = [&](const std::string& path, const Tensor<T>& t) {
    ParamRecord rec;
    rec.path = path;
    rec.shape = t.shape();
    rec.offset = blob.size();
    rec.count = t.size();
    const T* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) {
      blob.push_back(static_cast<float>(p[i]));
    }
    manifest.params.push_back(std::move(rec));
  };
  for (const auto& p : params) append(p.path, *p.tensor);
  if (optimizer) {
    manifest.adam_t = optimizer->t();
    for (const auto& [path, t] : optimizer->first_moments()) {
      append("optim.m." + path, t);
    }
    for (const auto& [path, t] : optimizer->second_moments()) {
      append("optim.v." + path, t);
    }
  }
  detail::write_checkpoint_files(dir, manifest, blob);
}

inline LoadedCheckpoint read_checkpoint(const std::string& dir) {
  return detail::read_checkpoint_files(dir);
}

/// Copies checkpoint tensors into matching parameter slots. With
/// require_all, every target must be found (shape checked either way).
/// Returns the number of parameters assigned.
template <class T>
std::size_t assign_params(const LoadedCheckpoint& ckpt,
                          const std::vector<ParamRef<T>>& targets,
                          bool require_all) {
  std::size_t assigned = 0;
  for (const auto& tgt : targets) {
    auto it = ckpt.tensors.find(tgt.path);
    if (it == ckpt.tensors.end()) {
      if (require_all) {
        throw Error("checkpoint: missing parameter '" + tgt.path + "'");
      }
      continue;
    }
    if (it->second.shape() != tgt.tensor->shape()) {
      throw Error("checkpoint: shape mismatch for '" + tgt.path + "': " +
                  shape_str(it->second.shape()) + " vs " +
                  shape_str(tgt.tensor->shape()));
    }
    const float* src = it->second.data();
    T* dst = tgt.tensor->mutable_data();
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      dst[i] = static_cast<T>(src[i]);
    }
    ++assigned;
  }
  return assigned;
}

/// Restores AdamW moments saved under optim.m.* / optim.v.*.
template <class T>
void restore_optimizer(const LoadedCheckpoint& ckpt, AdamW<T>& optimizer) {
  optimizer.restore_step_count(ckpt.manifest.adam_t);
  for (const auto& [path, t] : ckpt.tensors) {
    const bool is_m = path.rfind("optim.m.", 0) == 0;
    const bool is_v = path.rfind("optim.v.", 0) == 0;
    if (!is_m && !is_v) continue;
    const std::string key = path.substr(8);
    Tensor<T> converted = Tensor<T>::zeros(t.shape());
    const float* src = t.data();
    T* dst = converted.mutable_data();
    for (std::size_t i = 0; i < t.size(); ++i) dst[i] = static_cast<T>(src[i]);
    if (is_m) {
      optimizer.first_moments()[key] = std::move(converted);
    } else {
      optimizer.second_moments()[key] = std::move(converted);
    }
  }
}

}  // namespace skf
