#include "posefield/occupancy.hpp"

#include <cmath>

#include "posefield/check.hpp"

namespace posefield {

namespace {
constexpr double kDecay = 0.95;
double sigmoid_fn(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

OccupancyGrid::OccupancyGrid(int resolution, double tau)
    : res_(resolution),
      tau_(tau),
      delta_ref_(1.0 / resolution),
      logits_("occupancy_logits", size_t(resolution) * size_t(resolution) * size_t(resolution),
              4.0),
      target_(logits_.size(), 1.0),
      sigma_max_(logits_.size(), 0.0),
      sigma_round_(logits_.size(), -1.0),
      mask_(logits_.size(), 1),
      opt_({&logits_}, {}) {
  PF_CHECK_MSG(resolution >= 1, "occupancy resolution must be >= 1");
  PF_CHECK_MSG(tau > 0 && tau < 1, "tau must be in (0,1)");
}

int OccupancyGrid::cell_index(const Vec3& x) const {
  int idx[3];
  for (int d = 0; d < 3; ++d) {
    int i = int(std::clamp(x[d], 0.0, 1.0) * res_);
    if (i > res_ - 1) i = res_ - 1;
    idx[d] = i;
  }
  return (idx[2] * res_ + idx[1]) * res_ + idx[0];
}

double OccupancyGrid::probability(int cell) const { return sigmoid_fn(logits_.values[size_t(cell)]); }

double OccupancyGrid::fraction_occupied() const {
  size_t n = 0;
  for (uint8_t m : mask_) n += m;
  return double(n) / double(mask_.size());
}

void OccupancyGrid::observe(const Vec3& x, double alpha, double delta) {
  const int cell = cell_index(x);
  const double a = std::clamp(alpha, 0.0, 1.0 - 1e-9);
  const double sigma = -std::log(1.0 - a) / std::max(delta, 1e-9);
  auto& slot = sigma_round_[size_t(cell)];
  slot = std::max(slot, sigma);
}

std::vector<int> OccupancyGrid::observed_cells() const {
  std::vector<int> cells;
  for (size_t i = 0; i < sigma_round_.size(); ++i)
    if (sigma_round_[i] >= 0) cells.push_back(int(i));
  return cells;
}

void OccupancyGrid::rebuild_mask() {
  std::vector<uint8_t> core(mask_.size());
  for (size_t i = 0; i < core.size(); ++i) core[i] = probability(int(i)) >= tau_ ? 1 : 0;
  // dilate by one cell in each axis direction
  const int r = res_;
  auto at = [&](int x, int y, int z) -> uint8_t {
    return core[(size_t(z) * size_t(r) + size_t(y)) * size_t(r) + size_t(x)];
  };
  for (int z = 0; z < r; ++z)
    for (int y = 0; y < r; ++y)
      for (int x = 0; x < r; ++x) {
        uint8_t m = at(x, y, z);
        if (!m && x > 0) m = at(x - 1, y, z);
        if (!m && x + 1 < r) m = at(x + 1, y, z);
        if (!m && y > 0) m = at(x, y - 1, z);
        if (!m && y + 1 < r) m = at(x, y + 1, z);
        if (!m && z > 0) m = at(x, y, z - 1);
        if (!m && z + 1 < r) m = at(x, y, z + 1);
        mask_[(size_t(z) * size_t(r) + size_t(y)) * size_t(r) + size_t(x)] = m;
      }
}

void OccupancyGrid::update_round(double lr, int iters) {
  const std::vector<int> cells = observed_cells();
  for (size_t i = 0; i < sigma_max_.size(); ++i) {
    sigma_max_[i] *= kDecay;
    if (sigma_round_[i] >= 0) {
      sigma_max_[i] = std::max(sigma_max_[i], sigma_round_[i]);
      target_[i] = 1.0 - std::exp(-sigma_max_[i] * delta_ref_);
      sigma_round_[i] = -1.0;
    }
  }
  if (!cells.empty()) {
    const double inv_m = 1.0 / double(cells.size());
    for (int it = 0; it < iters; ++it) {
      logits_.zero_grad();
      for (int c : cells) {
        const double p = probability(c);
        logits_.grad[size_t(c)] = 2.0 * (p - target_[size_t(c)]) * p * (1.0 - p) * inv_m;
      }
      opt_.step(lr);
    }
  }
  rebuild_mask();
}

double OccupancyGrid::loss(std::span<const int> cells) const {
  if (cells.empty()) return 0.0;
  double acc = 0;
  for (int c : cells) {
    const double d = probability(c) - target_[size_t(c)];
    acc += d * d;
  }
  return acc / double(cells.size());
}

}  // namespace posefield
