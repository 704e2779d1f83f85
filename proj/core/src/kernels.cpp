#include "skf/kernels.hpp"

#include <cmath>
#include <random>

namespace skf {

void KernelSpec::validate() const {
  switch (kind) {
    case KernelKind::linear:
      return;
    case KernelKind::gaussian:
      if (!(sigma > 0.0)) {
        throw Error("gaussian kernel requires sigma > 0");
      }
      return;
    case KernelKind::bspline: {
      if (degree < 0) throw Error("bspline kernel requires degree >= 0");
      if (knots.size() < static_cast<std::size_t>(degree) + 2) {
        throw Error("bspline kernel requires at least degree+2 knots");
      }
      for (std::size_t i = 1; i < knots.size(); ++i) {
        if (knots[i] < knots[i - 1]) {
          throw Error("bspline knots must be nondecreasing");
        }
      }
      return;
    }
  }
  throw Error("invalid kernel kind");
}

std::string KernelSpec::name() const {
  switch (kind) {
    case KernelKind::linear:
      return "linear";
    case KernelKind::gaussian:
      return "gaussian(sigma=" + std::to_string(sigma) + ")";
    case KernelKind::bspline:
      return "bspline(degree=" + std::to_string(degree) + ", knots=" +
             std::to_string(knots.size()) + ")";
  }
  return "?";
}

double bspline_basis(std::span<const double> knots, int degree, std::size_t i,
                     double x) {
  if (degree < 0) throw Error("bspline_basis: degree must be >= 0");
  const std::size_t span = static_cast<std::size_t>(degree) + 1;
  if (i + span >= knots.size()) {
    throw Error("bspline_basis: basis index " + std::to_string(i) +
                " out of range for " + std::to_string(knots.size()) +
                " knots at degree " + std::to_string(degree));
  }
  if (degree == 0) {
    return (x >= knots[i] && x < knots[i + 1]) ? 1.0 : 0.0;
  }
  const double left_den = knots[i + degree] - knots[i];
  const double right_den = knots[i + span] - knots[i + 1];
  double acc = 0.0;
  if (left_den > 0.0) {
    acc += (x - knots[i]) / left_den * bspline_basis(knots, degree - 1, i, x);
  }
  if (right_den > 0.0) {
    acc += (knots[i + span] - x) / right_den *
           bspline_basis(knots, degree - 1, i + 1, x);
  }
  return acc;
}

double bspline_step_difference(std::span<const double> knots, std::size_t i,
                               double x) {
  if (i + 1 >= knots.size()) {
    throw Error("bspline_step_difference: index out of range");
  }
  const auto step = [](double u) { return u >= 0.0 ? 1.0 : 0.0; };
  return step(x - knots[i]) - step(x - knots[i + 1]);
}

KernelStats kernel_stats(const KernelSpec& spec, std::size_t trials,
                         std::uint64_t seed, std::size_t vec_dim) {
  spec.validate();
  if (trials < 10000) {
    throw Error("kernel_stats: at least 1e4 trials required");
  }
  if (vec_dim < 2) throw Error("kernel_stats: vec_dim must be >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, vec_dim - 1);
  std::vector<double> u(vec_dim), v(vec_dim);
  auto normalize = [&](std::vector<double>& w) {
    double mean = 0.0;
    for (double e : w) mean += e;
    mean /= static_cast<double>(w.size());
    double var = 0.0;
    for (double e : w) var += (e - mean) * (e - mean);
    var /= static_cast<double>(w.size());
    const double inv = 1.0 / std::sqrt(var + 1e-12);
    for (double& e : w) e = (e - mean) * inv;
  };
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t tr = 0; tr < trials; ++tr) {
    for (auto& e : u) e = normal(rng);
    for (auto& e : v) e = normal(rng);
    normalize(u);
    normalize(v);
    const double k = kernel_eval(spec, u[pick(rng)], v[pick(rng)]);
    sum += k;
    sum_sq += k * k;
  }
  KernelStats st;
  st.trials = trials;
  st.mean = sum / static_cast<double>(trials);
  st.variance =
      std::max(0.0, sum_sq / static_cast<double>(trials) - st.mean * st.mean);
  st.se_mean = std::sqrt(st.variance / static_cast<double>(trials));
  return st;
}

}  // namespace skf
