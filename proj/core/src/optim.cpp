#include "skf/optim.hpp"

namespace skf {

double cosine_warmup_lr(std::size_t step, std::size_t total_steps,
                        double base_lr, double warmup_ratio) {
  if (total_steps == 0) return 0.0;
  if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) {
    throw Error("cosine_warmup_lr: warmup_ratio must lie in [0,1)");
  }
  const double total = static_cast<double>(total_steps);
  const double warmup = warmup_ratio * total;
  const double s = static_cast<double>(step);
  if (s >= total) return 0.0;
  if (warmup > 0.0 && s < warmup) {
    return base_lr * s / warmup;
  }
  const double progress = (s - warmup) / (total - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

}  // namespace skf
