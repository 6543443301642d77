#include "posefield/losses.hpp"

#include <cmath>

#include "posefield/check.hpp"

namespace posefield {

double photometric_loss(std::span<const Vec3> rendered, std::span<const Vec3> target) {
  PF_CHECK_MSG(rendered.size() == target.size(), "photometric_loss: shape mismatch");
  if (rendered.empty()) return 0.0;
  double acc = 0;
  for (size_t i = 0; i < rendered.size(); ++i) acc += (rendered[i] - target[i]).squaredNorm();
  return acc / double(rendered.size());
}

double eikonal_loss(const FieldModel& model, std::span<const Vec3> points, double alpha) {
  PF_CHECK_MSG(!points.empty(), "eikonal_loss: need at least one point");
  double acc = 0;
  for (const Vec3& p : points) {
    const double n = model.sdf_gradient(p, alpha).norm();
    acc += (n - 1.0) * (n - 1.0);
  }
  return acc / double(points.size());
}

double specular_loss(std::span<const Vec3> specular) {
  if (specular.empty()) return 0.0;
  double acc = 0;
  for (const Vec3& c : specular) acc += c.squaredNorm();
  return acc / double(specular.size());
}

double entropy_loss(std::span<const double> weights) {
  if (weights.empty()) return 0.0;
  double acc = 0;
  for (double w : weights) {
    const double wc = std::clamp(w, 1e-7, 1.0 - 1e-7);
    acc += -wc * std::log(wc) - (1.0 - wc) * std::log(1.0 - wc);
  }
  return acc / double(weights.size());
}

double total_loss(const LossParts& parts, const LossWeights& weights) {
  PF_CHECK_FINITE(std::isfinite(parts.photometric) && std::isfinite(parts.eikonal) &&
                  std::isfinite(parts.specular) && std::isfinite(parts.entropy));
  return weights.photometric * parts.photometric + weights.eikonal * parts.eikonal +
         weights.specular * parts.specular + weights.entropy * parts.entropy;
}

}  // namespace posefield
