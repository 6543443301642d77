#pragma once

#include <Eigen/Dense>
#include <vector>

#include "posefield/autodiff.hpp"

namespace posefield {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Trainable se(3) correction, 3 rotation then 3 translation components.
// Starts at exactly zero.
struct PoseCorrection {
  PoseCorrection() : xi("pose_correction", 6, 0.0) {}
  ad::ParamBlock xi;
  Vec6 vector() const {
    Vec6 v;
    for (int i = 0; i < 6; ++i) v[i] = xi.values[size_t(i)];
    return v;
  }
};

// Camera-to-world pose plus its trainable correction.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  PoseCorrection correction;

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

// Rodrigues with series fallback for tiny angles; always orthonormal.
Mat3 so3_exp(const Vec3& omega);

// Full se(3) exponential: rotation block via so3_exp, translation via the
// left Jacobian V(omega) applied to the translation part.
Mat4 se3_exp(const Vec6& xi);

// exp(correction) * [R|t] as a plain matrix.
Mat4 refined_pose(const CameraPose& pose);

// Geodesic rotation distance in degrees, argument clamped to [-1, 1].
double rotation_error_deg(const Mat3& ra, const Mat3& rb);

// Differentiable refined camera-to-world transform. Returns a 12-vector
// node: rows of R (9, row-major) followed by the translation (3).
ad::NodeRef refined_transform_node(ad::Tape& tape, CameraPose& pose);

// origin + unit direction for a camera-space direction d (unit length)
// pushed through a refined-transform node; returns {origin, direction}.
struct RayNodes {
  ad::NodeRef origin;
  ad::NodeRef direction;
};
RayNodes transform_ray_node(ad::Tape& tape, ad::NodeRef transform, const Vec3& unit_dir_cam);

// Least-squares similarity alignment of estimated camera centers onto
// ground-truth centers, then per-camera errors in the aligned frame.
struct AlignmentReport {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;
  bool degenerate = false;  // collinear centers; scale forced to 1
  std::vector<double> rotation_errors_deg;
  std::vector<double> translation_errors;  // scene units
  double mean_rotation_deg = 0.0;
  double mean_translation = 0.0;
};
AlignmentReport align_trajectories(const std::vector<Mat4>& estimated,
                                   const std::vector<Mat4>& ground_truth);

}  // namespace posefield
