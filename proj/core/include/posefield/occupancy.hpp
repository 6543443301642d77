#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "posefield/autodiff.hpp"
#include "posefield/lie.hpp"
#include "posefield/optim.hpp"

namespace posefield {

// Coarse voxel map over [0,1]^3 used to skip empty space during ray
// sampling. Per-cell occupancy probabilities are sigmoid(logits) trained
// by MSE against targets derived from a running max of observed opacity;
// the max decays each update round so stale geometry fades out.
class OccupancyGrid {
 public:
  OccupancyGrid(int resolution, double tau);

  int resolution() const { return res_; }
  double tau() const { return tau_; }
  int cell_count() const { return res_ * res_ * res_; }

  int cell_index(const Vec3& x) const;
  double probability(int cell) const;
  bool occupied(const Vec3& x) const { return mask_[size_t(cell_index(x))] != 0; }
  double fraction_occupied() const;

  // Record an opacity observation (alpha over a segment of length delta)
  // at a sampled location.
  void observe(const Vec3& x, double alpha, double delta);

  // Decay the running max, refresh targets for the cells observed since
  // the previous round, fit the logits, and rebuild the skip mask. The
  // mask is dilated by one cell so borderline surface cells keep getting
  // sampled (a skipped cell is never observed, so it could not revive).
  void update_round(double lr = 0.3, int iters = 8);

  // MSE between predicted probabilities and targets over a cell subset.
  double loss(std::span<const int> cells) const;

  ad::ParamBlock& logits() { return logits_; }
  std::vector<double>& targets() { return target_; }
  std::vector<double>& sigma_max() { return sigma_max_; }
  std::vector<uint8_t>& mask() { return mask_; }
  AdamW& optimizer() { return opt_; }
  std::vector<int> observed_cells() const;  // cells of the current round
  void rebuild_mask();

 private:
  int res_;
  double tau_;
  double delta_ref_;
  ad::ParamBlock logits_;
  std::vector<double> target_;
  std::vector<double> sigma_max_;
  std::vector<double> sigma_round_;  // max proxy seen this round, -1 if unseen
  std::vector<uint8_t> mask_;
  AdamW opt_;
};

}  // namespace posefield
