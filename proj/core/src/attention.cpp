#include "skf/attention.hpp"

#include <cmath>
#include <random>

namespace skf {

const char* variant_name(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::standard:
      return "standard";
    case AttentionVariant::pseudo:
      return "pseudo";
    case AttentionVariant::semi:
      return "semi";
    case AttentionVariant::gaussian:
      return "gaussian";
    case AttentionVariant::linear_sim:
      return "linear_sim";
  }
  return "?";
}

AttentionVariant variant_from_string(const std::string& s) {
  if (s == "standard") return AttentionVariant::standard;
  if (s == "pseudo") return AttentionVariant::pseudo;
  if (s == "semi") return AttentionVariant::semi;
  if (s == "gaussian") return AttentionVariant::gaussian;
  if (s == "linear_sim") return AttentionVariant::linear_sim;
  throw Error("unknown attention variant '" + s + "'");
}

void AttentionConfig::validate() const {
  if (d_model == 0 || n_heads == 0) {
    throw Error("attention config: d_model and n_heads must be positive");
  }
  if (d_model % n_heads != 0) {
    throw Error("attention config: d_model " + std::to_string(d_model) +
                " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (variant == AttentionVariant::gaussian && !(sigma > 0.0)) {
    throw Error("attention config: gaussian variant requires sigma > 0");
  }
  if (variant == AttentionVariant::linear_sim && seq_len == 0) {
    throw Error("attention config: linear_sim requires a fixed seq_len");
  }
}

std::size_t count_params(const AttentionConfig& c) {
  c.validate();
  const std::size_t d = c.d_model, n = c.n_heads, dh = c.d_head();
  switch (c.variant) {
    case AttentionVariant::standard:
      return 4 * d * d + 4 * d;
    case AttentionVariant::pseudo:
      return 2 * d * d + n * dh * dh + 2 * d;
    case AttentionVariant::semi:
      return 2 * d * d + 2 * n * dh * dh + 2 * d;
    case AttentionVariant::gaussian:
      return 2 * d * d + 2 * d;
    case AttentionVariant::linear_sim:
      return 2 * d * d + 2 * d + n * c.seq_len * c.seq_len * dh * dh;
  }
  throw Error("count_params: invalid variant");
}

namespace detail {

// Cyclic Jacobi rotations; good to machine precision for the small symmetric
// matrices this project factorizes.
void jacobi_eigh_desc(std::vector<double>& m, std::size_t n,
                      std::vector<double>& eigvals,
                      std::vector<double>& eigvecs) {
  eigvecs.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eigvecs[i * n + i] = 1.0;

  double norm = 0.0;
  for (double v : m) norm += v * v;
  const double tol = 1e-28 * std::max(norm, 1e-300);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += m[p * n + q] * m[p * n + q];
    }
    if (off <= tol) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m[p * n + q];
        if (apq == 0.0) continue;
        const double app = m[p * n + p];
        const double aqq = m[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m[k * n + p];
          const double mkq = m[k * n + q];
          m[k * n + p] = c * mkp - s * mkq;
          m[k * n + q] = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m[p * n + k];
          const double mqk = m[q * n + k];
          m[p * n + k] = c * mpk - s * mqk;
          m[q * n + k] = s * mpk + c * mqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = eigvecs[k * n + p];
          const double vkq = eigvecs[k * n + q];
          eigvecs[k * n + p] = c * vkp - s * vkq;
          eigvecs[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  eigvals.resize(n);
  for (std::size_t i = 0; i < n; ++i) eigvals[i] = m[i * n + i];
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return eigvals[a] > eigvals[b];
  });
  std::vector<double> sorted_vals(n);
  std::vector<double> sorted_vecs(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    sorted_vals[j] = eigvals[order[j]];
    for (std::size_t i = 0; i < n; ++i) {
      sorted_vecs[i * n + j] = eigvecs[i * n + order[j]];
    }
  }
  eigvals = std::move(sorted_vals);
  eigvecs = std::move(sorted_vecs);
}

}  // namespace detail

VarianceProbeReport variance_probe(const KernelSpec& spec, std::size_t d_head,
                                   double sigma_w, std::size_t trials,
                                   std::uint64_t seed) {
  spec.validate();
  if (trials < 10000) {
    throw Error("variance_probe: at least 1e4 trials required");
  }
  if (d_head < 2) throw Error("variance_probe: d_head must be >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> xs(d_head), xr(d_head), w(d_head * d_head);
  auto normalize = [&](std::vector<double>& v) {
    double mean = 0.0;
    for (double e : v) mean += e;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double e : v) var += (e - mean) * (e - mean);
    var /= static_cast<double>(v.size());
    const double inv = 1.0 / std::sqrt(var + 1e-12);
    for (double& e : v) e = (e - mean) * inv;
  };
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t tr = 0; tr < trials; ++tr) {
    for (auto& e : xs) e = normal(rng);
    for (auto& e : xr) e = normal(rng);
    normalize(xs);
    normalize(xr);
    for (auto& e : w) e = sigma_w * normal(rng);
    double a = 0.0;
    for (std::size_t d1 = 0; d1 < d_head; ++d1) {
      for (std::size_t d2 = 0; d2 < d_head; ++d2) {
        a += kernel_eval(spec, xs[d1], xr[d2]) * w[d1 * d_head + d2];
      }
    }
    sum += a;
    sum_sq += a * a;
  }
  VarianceProbeReport rep;
  const double mean = sum / static_cast<double>(trials);
  rep.empirical_var =
      std::max(0.0, sum_sq / static_cast<double>(trials) - mean * mean);
  rep.stats = kernel_stats(spec, std::max<std::size_t>(trials, 10000),
                           seed + 1, d_head);
  rep.predicted_var = static_cast<double>(d_head) * static_cast<double>(d_head) *
                      (rep.stats.variance + rep.stats.mean * rep.stats.mean) *
                      sigma_w * sigma_w;
  if (rep.predicted_var > 0.0) {
    rep.ratio = rep.empirical_var / rep.predicted_var;
  } else {
    rep.ratio = rep.empirical_var == 0.0 ? 1.0
               : std::numeric_limits<double>::infinity();
  }
  return rep;
}

namespace {

template <class T>
Tensor<T> xavier(Shape shape, std::size_t fan_in, std::size_t fan_out,
                 std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_tensor<T>(std::move(shape), static_cast<T>(-limit),
                           static_cast<T>(limit), rng);
}

}  // namespace

template <class T>
AttentionParams<T> AttentionParams<T>::init(const AttentionConfig& config,
                                            std::mt19937_64& rng) {
  config.validate();
  const std::size_t d = config.d_model, n = config.n_heads,
                    dh = config.d_head();
  AttentionParams<T> p;
  p.config = config;
  switch (config.variant) {
    case AttentionVariant::standard:
      p.wq = xavier<T>({d, d}, d, d, rng);
      p.wk = xavier<T>({d, d}, d, d, rng);
      p.wv = xavier<T>({d, d}, d, d, rng);
      p.wo = xavier<T>({d, d}, d, d, rng);
      p.bq = Tensor<T>::zeros({d});
      p.bk = Tensor<T>::zeros({d});
      p.bv = Tensor<T>::zeros({d});
      p.bo = Tensor<T>::zeros({d});
      break;
    case AttentionVariant::pseudo:
      p.u = xavier<T>({d, d}, d, d, rng);
      p.a = xavier<T>({n, dh, dh}, dh, dh, rng);
      p.p = xavier<T>({d, d}, d, d, rng);
      p.b1 = Tensor<T>::zeros({d});
      p.b2 = Tensor<T>::zeros({d});
      break;
    case AttentionVariant::semi:
      p.u = xavier<T>({d, d}, d, d, rng);
      p.a = xavier<T>({n, dh, dh}, dh, dh, rng);
      p.wv_tilde = xavier<T>({n, dh, dh}, dh, dh, rng);
      p.wo = xavier<T>({d, d}, d, d, rng);
      p.b1 = Tensor<T>::zeros({d});
      p.b2 = Tensor<T>::zeros({d});
      break;
    case AttentionVariant::gaussian:
      p.u = xavier<T>({d, d}, d, d, rng);
      p.p = xavier<T>({d, d}, d, d, rng);
      p.b1 = Tensor<T>::zeros({d});
      p.b2 = Tensor<T>::zeros({d});
      break;
    case AttentionVariant::linear_sim: {
      const std::size_t s = config.seq_len;
      p.u = xavier<T>({d, d}, d, d, rng);
      p.w_inner = xavier<T>({n, s, s, dh, dh}, s * dh, dh, rng);
      p.p = xavier<T>({d, d}, d, d, rng);
      p.b1 = Tensor<T>::zeros({d});
      p.b2 = Tensor<T>::zeros({d});
      break;
    }
  }
  return p;
}

template <class T>
void AttentionParams<T>::visit(
    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  switch (config.variant) {
    case AttentionVariant::standard:
      fn("wq", wq);
      fn("wk", wk);
      fn("wv", wv);
      fn("wo", wo);
      fn("bq", bq);
      fn("bk", bk);
      fn("bv", bv);
      fn("bo", bo);
      return;
    case AttentionVariant::pseudo:
      fn("u", u);
      fn("b1", b1);
      fn("a", a);
      fn("p", p);
      fn("b2", b2);
      return;
    case AttentionVariant::semi:
      fn("u", u);
      fn("b1", b1);
      fn("a", a);
      fn("wv_tilde", wv_tilde);
      fn("wo", wo);
      fn("b2", b2);
      return;
    case AttentionVariant::gaussian:
      fn("u", u);
      fn("b1", b1);
      fn("p", p);
      fn("b2", b2);
      return;
    case AttentionVariant::linear_sim:
      fn("u", u);
      fn("b1", b1);
      fn("w_inner", w_inner);
      fn("p", p);
      fn("b2", b2);
      return;
  }
  throw Error("AttentionParams::visit: invalid variant");
}

template <class T>
std::size_t AttentionParams<T>::count() const {
  std::size_t total = 0;
  const_cast<AttentionParams<T>*>(this)->visit(
      [&](const std::string&, Tensor<T>& t) { total += t.size(); });
  return total;
}

template struct AttentionParams<float>;
template struct AttentionParams<double>;

}  // namespace skf
