#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "posefield/autodiff.hpp"
#include "posefield/lie.hpp"
#include "posefield/rng.hpp"

namespace posefield {

struct GridConfig {
  int levels = 16;
  int n_min = 14;
  int n_max = 4069;
  uint32_t table_size = 1u << 19;  // entries per level, power of two
  int features = 2;                // features per entry
  double init_scale = 1e-4;        // tables start uniform in [-init_scale, init_scale]
};

// Progressive cosine window gating level k at training progress alpha in
// [0, levels].
double cosine_window(int level, double alpha);

// Maps a step counter to the window progress alpha in [0, levels]; the
// schedule ramps linearly over the normalized interval [c2f_start, c2f_end].
double progress_to_alpha(int64_t step, int64_t total_steps, double c2f_start, double c2f_end,
                         int levels);

// Multi-resolution trilinear feature grid. Levels whose vertex count fits
// in the table are indexed directly; finer levels go through the spatial
// hash. Feature lookups are differentiable both in the tables and in the
// query point.
class HashGridEncoder {
 public:
  HashGridEncoder(std::string name, const GridConfig& cfg, Rng rng);

  static std::vector<int> level_resolutions(const GridConfig& cfg);
  static uint32_t hash_index(uint32_t x, uint32_t y, uint32_t z, uint32_t table_size);

  const GridConfig& config() const { return cfg_; }
  int levels() const { return cfg_.levels; }
  int feature_dim() const { return cfg_.levels * cfg_.features; }
  const std::vector<int>& resolutions() const { return res_; }
  bool level_is_hashed(int level) const { return hashed_[size_t(level)]; }
  uint32_t level_rows(int level) const { return rows_[size_t(level)]; }
  ad::ParamBlock& table(int level) { return tables_[size_t(level)]; }
  const ad::ParamBlock& table(int level) const { return tables_[size_t(level)]; }
  std::vector<ad::ParamBlock*> parameters();

  // Feature vector (levels * features) at x in [0,1]^3; points outside the
  // box are clamped. Each level's block is scaled by its cosine window.
  void encode(const Vec3& x, double alpha, std::span<double> out) const;

  // d(encode)/dx, row-major (levels*features) x 3. One-sided at cell
  // boundaries, zero along clamped axes.
  void encode_jacobian(const Vec3& x, double alpha, std::span<double> jac) const;

  // Tape versions. encode_node differentiates through both the tables and
  // the query point; encode_jacobian_node evaluates at a fixed point and
  // differentiates through the tables only.
  ad::NodeRef encode_node(ad::Tape& tape, ad::NodeRef x, double alpha);
  ad::NodeRef encode_jacobian_node(ad::Tape& tape, const Vec3& x, double alpha);
  // rows x 3 positions -> rows x feature_dim() features.
  ad::NodeRef encode_batch_node(ad::Tape& tape, ad::NodeRef positions, int rows, double alpha);

 private:
  struct Corners {
    uint32_t row[8];
    double w[8];
    double dw[8][3];
  };
  void gather(const Vec3& x, int level, Corners& c) const;
  static void encode_backward(ad::Tape& tape, const ad::CustomOp& op, int node_idx);
  static void encode_batch_backward(ad::Tape& tape, const ad::CustomOp& op, int node_idx);
  static void jacobian_backward(ad::Tape& tape, const ad::CustomOp& op, int node_idx);

  GridConfig cfg_;
  std::vector<int> res_;
  std::vector<uint32_t> rows_;
  std::vector<bool> hashed_;
  std::vector<ad::ParamBlock> tables_;
};

}  // namespace posefield
