#pragma once

#include <memory>
#include <string>
#include <vector>

#include "posefield/field.hpp"
#include "posefield/losses.hpp"
#include "posefield/occupancy.hpp"
#include "posefield/optim.hpp"
#include "posefield/renderer.hpp"
#include "posefield/rng.hpp"
#include "posefield/scene.hpp"

namespace posefield {

struct TrainConfig {
  int64_t iterations = 30000;
  double lr_nerf_start = 1e-3, lr_nerf_end = 1e-5;
  double lr_pose_start = 1e-4, lr_pose_end = 1e-6;
  LossWeights loss_weights;
  double c2f_start = 0.1, c2f_end = 0.5;
  bool c2f_enabled = true;  // false: all levels open from step 0
  int rays_per_batch = 4096;
  int eikonal_samples = 1024;
  uint64_t seed = 0;
  double noise_sigma = 0.0;
  int n_samples = 64;
  int grid_resolution = 64;
  double tau_occ = 0.01;
  Vec3 background = Vec3(1, 1, 1);
  int occupancy_interval = 16;
  int occupancy_warmup = 256;  // steps before empty-space skipping kicks in
  int threads = 1;
  int chunk_rays = 128;
  int64_t checkpoint_every = 5000;
  int64_t log_every = 10;
  double weight_decay = 1e-6;
  FieldConfig field;
};

// JSON round-trip for config files; unknown keys are rejected so typos in
// a config file fail loudly.
TrainConfig train_config_from_json(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& cfg);

struct TrainLogRow {
  int64_t step = 0;
  double total = 0, photo = 0, eik = 0, spec = 0, entropy = 0;
  double lr_nerf = 0, lr_pose = 0;
  double mean_rot_err_deg = 0, mean_trans_err = 0;
};
std::string train_log_header();
std::string train_log_row_csv(const TrainLogRow& row);

// Left-composes each pose with exp(xi), xi ~ N(0, sigma^2 I6), and resets
// the trainable corrections to zero.
void perturb_poses(std::vector<Camera>& cameras, double sigma, Rng& rng);

// All mutable training state. Fixed in memory (optimizers hold pointers
// into the model and cameras), hence the unique_ptr factory.
struct TrainState {
  TrainState(const Scene& scene, const TrainConfig& cfg);
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;

  TrainConfig config;
  FieldModel model;
  std::vector<Camera> cameras;  // base poses are the (possibly noisy) starts
  OccupancyGrid grid;
  AdamW opt_field;
  AdamW opt_pose;
  int64_t step = 0;
  Rng batch_rng;
  Rng eik_rng;
  std::vector<TrainLogRow> history;
  std::string scene_dir;
  // reused across steps so node arenas and gradient buffers stay warm
  std::vector<std::unique_ptr<ad::Tape>> worker_tapes;

  double window_alpha() const;  // current coarse-to-fine progress
  std::vector<Mat4> refined_train_poses(const Scene& scene) const;
  TrainLogRow pose_errors(const Scene& scene, TrainLogRow row) const;
};

std::unique_ptr<TrainState> make_train_state(const Scene& scene, const TrainConfig& cfg);

// One optimization step (batch -> losses -> backward -> two optimizer
// steps -> occupancy bookkeeping). Returns the log row for this step.
TrainLogRow train_step(TrainState& state, const Scene& scene);

// Full Stage-1 loop. When out_dir is non-empty, writes log.csv,
// metadata.json, and rolling checkpoints there. Aborts on non-finite loss,
// keeping the last checkpoint on disk.
std::unique_ptr<TrainState> train_stage1(const Scene& scene, const TrainConfig& cfg,
                                         const std::string& out_dir = "");

// ---- pieces exposed for tests and the acceptance harness ----

// A fully frozen batch: evaluating the Stage-1 loss on it is a pure
// function of the parameters, which is what finite-difference checks need.
struct FrozenBatch {
  struct FrozenRay {
    int camera = 0;
    Vec3 dir_cam = -Vec3::UnitZ();
    Vec3 target = Vec3::Zero();
    std::vector<double> t;
    double t_close = 0;
  };
  std::vector<FrozenRay> rays;
  std::vector<Vec3> eikonal_points;
  double alpha = 1e9;
};

struct BatchResult {
  LossParts parts;
  double total = 0;
  int valid_samples = 0;
  struct Observation {
    Vec3 x;
    double alpha_value;
    double delta;
  };
  std::vector<Observation> observations;
};

// Evaluate (and optionally backpropagate) the Stage-1 loss on a frozen
// batch. Gradients accumulate into the model and camera corrections.
BatchResult stage1_loss(TrainState& state, const FrozenBatch& batch, bool backward);

// Draw the step's batch from the state's rng streams.
FrozenBatch draw_batch(TrainState& state, const Scene& scene);

}  // namespace posefield
