#pragma once

#include <span>
#include <string>
#include <vector>

#include "posefield/autodiff.hpp"
#include "posefield/hashgrid.hpp"
#include "posefield/lie.hpp"
#include "posefield/rng.hpp"

namespace posefield {

// Dense ReLU network with a linear head.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string name, std::vector<int> dims, Rng& rng, double head_bias = 0.0);

  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  int layer_count() const { return int(weights_.size()); }
  ad::ParamBlock& weight(int i) { return weights_[size_t(i)]; }
  ad::ParamBlock& bias(int i) { return biases_[size_t(i)]; }
  std::vector<ad::ParamBlock*> parameters();

  void forward(std::span<const double> in, std::span<double> out) const;
  ad::NodeRef node(ad::Tape& tape, ad::NodeRef in);
  ad::NodeRef batch_node(ad::Tape& tape, ad::NodeRef in, int rows);

  // Scalar-output networks only: analytic gradient of the output w.r.t.
  // the input, and the same gradient as a tape expression that stays
  // differentiable w.r.t. the weights (ReLU masks enter as constants).
  void input_gradient(std::span<const double> in, std::span<double> din) const;
  struct ValueGrad {
    ad::NodeRef value;
    ad::NodeRef input_grad;
  };
  ValueGrad value_and_input_grad_node(ad::Tape& tape, ad::NodeRef in);

 private:
  std::vector<int> dims_;
  std::vector<ad::ParamBlock> weights_;
  std::vector<ad::ParamBlock> biases_;
};

struct AppearanceSample {
  Vec3 diffuse = Vec3::Zero();   // c_d in [0,1]^3
  Vec3 specular = Vec3::Zero();  // c_s in [0,1]^3
  Vec3 color = Vec3::Zero();     // c_d + c_s, may exceed 1
  std::vector<double> specular_feature;
};

struct AppearanceNodes {
  ad::NodeRef diffuse;
  ad::NodeRef specular;
  ad::NodeRef color;
};

struct FieldConfig {
  GridConfig geo_grid;
  GridConfig app_grid;
  int geo_hidden = 64;
  int app_hidden = 64;
  int spec_hidden = 32;
  int specular_features = 8;  // K
  double sphere_init_radius = 0.25;
  double beta_init = 3.4012;  // log(30): s = exp(beta) starts at 30
  double alpha_eps = 1e-6;
};

// Opacity from a consecutive SDF pair along a ray (prev = smaller t).
// Negative numerators (exiting the surface) clamp to zero.
double sdf_to_alpha(double sdf_prev, double sdf_next, double sharpness, double eps);
ad::NodeRef sdf_to_alpha_node(ad::Tape& tape, ad::NodeRef prev, ad::NodeRef next,
                              ad::NodeRef sharpness, double eps);

// Hash-grid SDF geometry plus diffuse/specular appearance. The geometry
// network sees the centered position next to its grid features so a fresh
// model can start as an approximate sphere of sphere_init_radius.
class FieldModel {
 public:
  FieldModel(const FieldConfig& cfg, uint64_t seed);

  const FieldConfig& config() const { return cfg_; }
  HashGridEncoder& geo_encoder() { return geo_encoder_; }
  HashGridEncoder& app_encoder() { return app_encoder_; }
  Mlp& geo_mlp() { return geo_mlp_; }
  Mlp& diffuse_mlp() { return diffuse_mlp_; }
  Mlp& specular_mlp() { return specular_mlp_; }
  ad::ParamBlock& beta() { return beta_; }
  double sharpness() const { return std::exp(beta_.values[0]); }

  double sdf(const Vec3& x, double alpha) const;
  Vec3 sdf_gradient(const Vec3& x, double alpha) const;
  AppearanceSample appearance(const Vec3& x, const Vec3& view_dir, double alpha) const;

  ad::NodeRef sdf_node(ad::Tape& tape, ad::NodeRef x, double alpha);
  // Analytic spatial gradient at a fixed point, differentiable w.r.t. the
  // geometry parameters (first-order expression; no second-order autodiff).
  ad::NodeRef sdf_gradient_node(ad::Tape& tape, const Vec3& x, double alpha);
  AppearanceNodes appearance_node(ad::Tape& tape, ad::NodeRef x, ad::NodeRef view_dir,
                                  double alpha);
  AppearanceNodes appearance_node(ad::Tape& tape, ad::NodeRef x, const Vec3& view_dir,
                                  double alpha);
  ad::NodeRef sharpness_node(ad::Tape& tape);

  // Fixed order: geo tables, geo MLP, app tables, diffuse MLP, specular
  // MLP, beta. Checkpoints and optimizers rely on this order.
  std::vector<ad::ParamBlock*> parameters();

 private:
  FieldConfig cfg_;
  Rng init_rng_;
  HashGridEncoder geo_encoder_;
  HashGridEncoder app_encoder_;
  Mlp geo_mlp_;
  Mlp diffuse_mlp_;
  Mlp specular_mlp_;
  ad::ParamBlock beta_;
};

}  // namespace posefield
