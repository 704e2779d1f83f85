#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "skf/tape.hpp"
#include "skf/tensor.hpp"

namespace skf {

template <class T>
struct ParamRef {
  std::string path;
  Tensor<T>* tensor;
};

template <class T, class Visitable>
std::vector<ParamRef<T>> collect_params(Visitable& v) {
  std::vector<ParamRef<T>> out;
  v.visit([&](const std::string& path, Tensor<T>& t) {
    out.push_back(ParamRef<T>{path, &t});
  });
  return out;
}

/// Linear warmup to base_lr over warmup_ratio * total_steps, then half-cosine
/// decay to zero; clamps to zero past the end.
double cosine_warmup_lr(std::size_t step, std::size_t total_steps,
                        double base_lr, double warmup_ratio);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Decoupled-weight-decay Adam. A step with any non-finite gradient is
/// rejected whole (parameters and moments untouched, counter incremented).
template <class T>
class AdamW {
public:
  AdamW() = default;
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  std::size_t t() const { return t_; }
  std::size_t rejected_steps() const { return rejected_; }

  bool step(const std::vector<ParamRef<T>>& params, const Gradients<T>& grads,
            double lr) {
    for (const auto& p : params) {
      const Tensor<T>* g = grads.find(*p.tensor);
      if (g && !all_finite(*g)) {
        ++rejected_;
        return false;
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& p : params) {
      Tensor<T>& w = *p.tensor;
      auto& m = moment(m_, p.path, w.shape());
      auto& v = moment(v_, p.path, w.shape());
      const Tensor<T>* g = grads.find(w);
      T* pw = w.mutable_data();
      T* pm = m.mutable_data();
      T* pv = v.mutable_data();
      const T* pg = g ? g->data() : nullptr;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = pg ? static_cast<double>(pg[i]) : 0.0;
        const double mi =
            cfg_.beta1 * static_cast<double>(pm[i]) + (1.0 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * static_cast<double>(pv[i]) +
                          (1.0 - cfg_.beta2) * gi * gi;
        pm[i] = static_cast<T>(mi);
        pv[i] = static_cast<T>(vi);
        double wi = static_cast<double>(pw[i]);
        wi -= lr * cfg_.weight_decay * wi;
        wi -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
        pw[i] = static_cast<T>(wi);
      }
    }
    return true;
  }

  /// Moment access for checkpointing; paths as passed to step().
  std::map<std::string, Tensor<T>>& first_moments() { return m_; }
  std::map<std::string, Tensor<T>>& second_moments() { return v_; }
  void restore_step_count(std::size_t t) { t_ = t; }

private:
  static Tensor<T>& moment(std::map<std::string, Tensor<T>>& store,
                           const std::string& path, const Shape& shape) {
    auto it = store.find(path);
    if (it == store.end()) {
      it = store.emplace(path, Tensor<T>::zeros(shape)).first;
    } else if (it->second.shape() != shape) {
      throw Error("adamw: moment shape mismatch for " + path);
    }
    return it->second;
  }

  AdamWConfig cfg_;
  std::map<std::string, Tensor<T>> m_;
  std::map<std::string, Tensor<T>> v_;
  std::size_t t_ = 0;
  std::size_t rejected_ = 0;
};

}  // namespace skf
