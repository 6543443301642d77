#include "posefield/lie.hpp"

#include <Eigen/SVD>
#include <cmath>

#include "posefield/check.hpp"

namespace posefield {

namespace {

Mat3 hat(const Vec3& w) {
  Mat3 m;
  m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return m;
}

// sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3 as functions of u = t^2.
void rot_coefs(double u, double& a, double& b, double& c) {
  if (u < 1e-8) {
    a = 1.0 - u / 6.0 + u * u / 120.0;
    b = 0.5 - u / 24.0 + u * u / 720.0;
    c = 1.0 / 6.0 - u / 120.0 + u * u / 5040.0;
    return;
  }
  const double t = std::sqrt(u);
  a = std::sin(t) / t;
  b = (1.0 - std::cos(t)) / u;
  c = (t - std::sin(t)) / (t * u);
}

}  // namespace

Mat3 so3_exp(const Vec3& omega) {
  PF_CHECK_FINITE(omega.allFinite());
  double a, b, c;
  rot_coefs(omega.squaredNorm(), a, b, c);
  const Mat3 w = hat(omega);
  return Mat3::Identity() + a * w + b * (w * w);
}

Mat4 se3_exp(const Vec6& xi) {
  PF_CHECK_FINITE(xi.allFinite());
  const Vec3 omega = xi.head<3>();
  const Vec3 rho = xi.tail<3>();
  double a, b, c;
  rot_coefs(omega.squaredNorm(), a, b, c);
  const Mat3 w = hat(omega);
  const Mat3 w2 = w * w;
  Mat4 out = Mat4::Identity();
  out.topLeftCorner<3, 3>() = Mat3::Identity() + a * w + b * w2;
  const Mat3 v = Mat3::Identity() + b * w + c * w2;
  out.topRightCorner<3, 1>() = v * rho;
  return out;
}

Mat4 refined_pose(const CameraPose& pose) { return se3_exp(pose.correction.vector()) * pose.matrix(); }

double rotation_error_deg(const Mat3& ra, const Mat3& rb) {
  const double tr = (ra.transpose() * rb).trace();
  const double arg = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(arg) * 180.0 / M_PI;
}

ad::NodeRef refined_transform_node(ad::Tape& tape, CameraPose& pose) {
  using ad::NodeRef;
  using ad::Scalar;
  NodeRef xi = tape.param(pose.correction.xi);
  auto sc = [&](NodeRef n) { return Scalar{&tape, n}; };
  auto el = [&](int i) { return sc(tape.slice(xi, i, 1)); };

  Scalar wx = el(0), wy = el(1), wz = el(2);
  Scalar px = el(3), py = el(4), pz = el(5);
  Scalar u = wx * wx + wy * wy + wz * wz;
  Scalar a = sc(tape.rot_coef_a(u.n));
  Scalar b = sc(tape.rot_coef_b(u.n));
  Scalar c = sc(tape.rot_coef_c(u.n));

  Scalar xx = wx * wx, yy = wy * wy, zz = wz * wz;
  Scalar xy = wx * wy, xz = wx * wz, yz = wy * wz;

  // R = I + a*hat(w) + b*(w w^T - u I)
  Scalar r00 = 1.0 + b * (xx - u);
  Scalar r01 = b * xy - a * wz;
  Scalar r02 = b * xz + a * wy;
  Scalar r10 = b * xy + a * wz;
  Scalar r11 = 1.0 + b * (yy - u);
  Scalar r12 = b * yz - a * wx;
  Scalar r20 = b * xz - a * wy;
  Scalar r21 = b * yz + a * wx;
  Scalar r22 = 1.0 + b * (zz - u);

  // V = I + b*hat(w) + c*(w w^T - u I), t = V * rho
  Scalar v00 = 1.0 + c * (xx - u), v01 = c * xy - b * wz, v02 = c * xz + b * wy;
  Scalar v10 = c * xy + b * wz, v11 = 1.0 + c * (yy - u), v12 = c * yz - b * wx;
  Scalar v20 = c * xz - b * wy, v21 = c * yz + b * wx, v22 = 1.0 + c * (zz - u);
  Scalar tx = v00 * px + v01 * py + v02 * pz;
  Scalar ty = v10 * px + v11 * py + v12 * pz;
  Scalar tz = v20 * px + v21 * py + v22 * pz;

  // refined = exp(xi) * [R_base | t_base]
  const Mat3& rb = pose.rotation;
  const Vec3& tb = pose.translation;
  Scalar rr[3][3] = {{r00, r01, r02}, {r10, r11, r12}, {r20, r21, r22}};
  std::vector<NodeRef> out;
  out.reserve(12);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      Scalar e = rr[i][0] * rb(0, j) + rr[i][1] * rb(1, j) + rr[i][2] * rb(2, j);
      out.push_back(e.n);
    }
  Scalar ox = rr[0][0] * tb.x() + rr[0][1] * tb.y() + rr[0][2] * tb.z() + tx;
  Scalar oy = rr[1][0] * tb.x() + rr[1][1] * tb.y() + rr[1][2] * tb.z() + ty;
  Scalar oz = rr[2][0] * tb.x() + rr[2][1] * tb.y() + rr[2][2] * tb.z() + tz;
  out.push_back(ox.n);
  out.push_back(oy.n);
  out.push_back(oz.n);
  return tape.concat(out);
}

namespace {

// backward of y = R d for the 9 rotation entries of a 12-vector transform
// node; d is a fixed unit direction in camera space.
void apply_rot_backward(ad::Tape& tape, const ad::CustomOp& op, int node_idx) {
  auto g = tape.node_adjoint(node_idx);
  auto io = tape.node_inputs(node_idx);
  auto gt = tape.node_adjoint(io.a);
  const double* d = op.data.data();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) gt[size_t(i) * 3 + j] += g[size_t(i)] * d[j];
}

}  // namespace

RayNodes transform_ray_node(ad::Tape& tape, ad::NodeRef transform, const Vec3& unit_dir_cam) {
  PF_CHECK_MSG(tape.length(transform) == 12, "transform node must have 12 entries");
  ad::CustomOp op;
  op.data = {unit_dir_cam.x(), unit_dir_cam.y(), unit_dir_cam.z()};
  op.backward = &apply_rot_backward;
  auto tv = tape.values(transform);
  double dir[3];
  for (int i = 0; i < 3; ++i)
    dir[i] = tv[size_t(i) * 3] * unit_dir_cam.x() + tv[size_t(i) * 3 + 1] * unit_dir_cam.y() +
             tv[size_t(i) * 3 + 2] * unit_dir_cam.z();
  ad::NodeRef d = tape.custom(std::span<const double>(dir, 3), transform, {}, std::move(op));
  ad::NodeRef o = tape.slice(transform, 9, 3);
  return {o, d};
}

AlignmentReport align_trajectories(const std::vector<Mat4>& estimated,
                                   const std::vector<Mat4>& ground_truth) {
  PF_CHECK_MSG(estimated.size() == ground_truth.size(), "trajectory length mismatch");
  PF_CHECK_MSG(estimated.size() >= 3, "need at least 3 poses to align");
  const int n = int(estimated.size());

  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (int i = 0; i < n; ++i) {
    src.col(i) = estimated[size_t(i)].topRightCorner<3, 1>();
    dst.col(i) = ground_truth[size_t(i)].topRightCorner<3, 1>();
  }
  const Vec3 mu_s = src.rowwise().mean();
  const Vec3 mu_d = dst.rowwise().mean();
  Eigen::Matrix3Xd cs = src.colwise() - mu_s;
  Eigen::Matrix3Xd cd = dst.colwise() - mu_d;

  const Mat3 cov = cd * cs.transpose() / double(n);
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) s(2, 2) = -1;

  AlignmentReport report;
  report.rotation = svd.matrixU() * s * svd.matrixV().transpose();

  const double var_s = cs.squaredNorm() / double(n);
  const auto& sv = svd.singularValues();
  // rank < 2 means the centers are collinear (or coincident); a similarity
  // scale is then unidentifiable, keep scale = 1.
  report.degenerate = sv(1) <= 1e-12 * std::max(sv(0), 1e-300) || var_s <= 1e-24;
  if (!report.degenerate) {
    report.scale = (sv(0) + sv(1) + sv(2) * s(2, 2)) / var_s;
  }
  report.translation = mu_d - report.scale * report.rotation * mu_s;

  report.rotation_errors_deg.resize(size_t(n));
  report.translation_errors.resize(size_t(n));
  double rsum = 0, tsum = 0;
  for (int i = 0; i < n; ++i) {
    const Mat3 re = report.rotation * estimated[size_t(i)].topLeftCorner<3, 3>();
    const Mat3 rg = ground_truth[size_t(i)].topLeftCorner<3, 3>();
    const Vec3 ce = report.scale * report.rotation * estimated[size_t(i)].topRightCorner<3, 1>() +
                    report.translation;
    const Vec3 cg = ground_truth[size_t(i)].topRightCorner<3, 1>();
    report.rotation_errors_deg[size_t(i)] = rotation_error_deg(re, rg);
    report.translation_errors[size_t(i)] = (ce - cg).norm();
    rsum += report.rotation_errors_deg[size_t(i)];
    tsum += report.translation_errors[size_t(i)];
  }
  report.mean_rotation_deg = rsum / n;
  report.mean_translation = tsum / n;
  return report;
}

}  // namespace posefield
