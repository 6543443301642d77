#pragma once

#include <string>
#include <vector>

#include "posefield/mesh.hpp"
#include "posefield/scene.hpp"
#include "posefield/trainer.hpp"

namespace posefield {

struct EvalOptions {
  int chamfer_samples = 100000;
  uint64_t seed = 7;
  int threads = 1;
  // reconstructed mesh in unit-box coordinates; enables the chamfer column
  const TriangleMesh* mesh = nullptr;
  // ground-truth mesh in world coordinates; falls back to the scene's
  // analytic shape when absent
  const TriangleMesh* gt_mesh = nullptr;
};

struct EvalViewRow {
  std::string name;
  double psnr_db = 0;
  double ssim = 0;
};

struct EvalReport {
  std::vector<EvalViewRow> views;
  double mean_psnr = 0, mean_ssim = 0;
  double mean_rotation_deg = 0, mean_translation = 0;  // after alignment, scene units
  double chamfer = -1;  // squared bidirectional, world units; -1 = not computed
  bool has_test = true;

  static std::string csv_header() { return "view,psnr_db,ssim"; }
  std::string to_csv() const;
  // metric,value rows (means, pose errors, chamfer when computed)
  std::string summary_csv() const;
  std::string summary() const;
};

// Test-split PSNR/SSIM (test cameras mapped into the model's gauge via the
// train-pose alignment), aligned pose errors, optional chamfer.
EvalReport evaluate(const Scene& scene, TrainState& state, const EvalOptions& opts = {});

// Per-camera aligned pose errors as CSV (camera,rot_err_deg,trans_err).
std::string pose_report_csv(const Scene& scene, const TrainState& state);

}  // namespace posefield
