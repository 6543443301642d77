#include "posefield/evaluate.hpp"

#include <cstdio>
#include <sstream>

#include "posefield/chamfer.hpp"
#include "posefield/check.hpp"

namespace posefield {

namespace {
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}
}  // namespace

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << csv_header() << "\n";
  for (const auto& row : views) os << row.name << "," << fmt(row.psnr_db) << "," << fmt(row.ssim) << "\n";
  return os.str();
}

std::string EvalReport::summary_csv() const {
  std::ostringstream os;
  os << "metric,value\n";
  os << "mean_psnr_db," << fmt(mean_psnr) << "\n";
  os << "mean_ssim," << fmt(mean_ssim) << "\n";
  os << "mean_rot_err_deg," << fmt(mean_rotation_deg) << "\n";
  os << "mean_trans_err," << fmt(mean_translation) << "\n";
  if (chamfer >= 0) os << "chamfer_sq_bidirectional_world," << fmt(chamfer) << "\n";
  return os.str();
}

std::string EvalReport::summary() const {
  std::ostringstream os;
  if (!has_test) os << "warning: scene has no test split; view metrics skipped\n";
  os << "test views:        " << views.size() << "\n";
  os << "mean psnr (db):    " << fmt(mean_psnr) << "\n";
  os << "mean ssim:         " << fmt(mean_ssim) << "\n";
  os << "rot err (deg):     " << fmt(mean_rotation_deg) << "\n";
  os << "trans err (scene): " << fmt(mean_translation) << "\n";
  if (chamfer >= 0)
    os << "chamfer (sq, bidirectional, world units): " << fmt(chamfer) << "\n";
  return os.str();
}

EvalReport evaluate(const Scene& scene, TrainState& state, const EvalOptions& opts) {
  EvalReport report;

  const auto train = scene.train_indices();
  std::vector<Mat4> gt;
  for (int i : train) gt.push_back(scene.gt_poses[size_t(i)]);
  const AlignmentReport align = align_trajectories(state.refined_train_poses(scene), gt);
  report.mean_rotation_deg = align.mean_rotation_deg;
  report.mean_translation = align.mean_translation;

  const auto test = scene.test_indices();
  report.has_test = !test.empty();
  if (report.has_test) {
    // map ground-truth test poses into the model's gauge: the alignment S
    // takes estimates to ground truth, so test cameras go through S^-1
    const Mat3 rt = align.rotation.transpose();
    RenderOptions ro;
    ro.n_samples = state.config.n_samples;
    ro.near = scene.near;
    ro.far = scene.far;
    ro.background = state.config.background;
    ro.alpha = state.window_alpha();
    ro.threads = opts.threads;
    for (int i : test) {
      Camera cam = scene.cameras[size_t(i)];
      const Mat4& gt_pose = scene.gt_poses[size_t(i)];
      cam.pose.rotation = rt * gt_pose.topLeftCorner<3, 3>();
      cam.pose.translation =
          (1.0 / align.scale) * (rt * (gt_pose.topRightCorner<3, 1>() - align.translation));
      std::fill(cam.pose.correction.xi.values.begin(), cam.pose.correction.xi.values.end(), 0.0);
      const RenderResult render = render_image(state.model, cam, ro, &state.grid);
      EvalViewRow row;
      row.name = scene.names[size_t(i)].empty() ? "test_" + std::to_string(i)
                                                : scene.names[size_t(i)];
      row.psnr_db = psnr(render.rgb, scene.images[size_t(i)]);
      row.ssim = ssim(render.rgb, scene.images[size_t(i)]);
      report.views.push_back(row);
      report.mean_psnr += row.psnr_db;
      report.mean_ssim += row.ssim;
    }
    report.mean_psnr /= double(report.views.size());
    report.mean_ssim /= double(report.views.size());
  }

  if (opts.mesh && !opts.mesh->faces.empty()) {
    std::vector<Vec3> rec = sample_mesh_surface(*opts.mesh, opts.chamfer_samples, opts.seed);
    for (Vec3& p : rec) p = scene.box.to_world(p);
    std::vector<Vec3> ref;
    if (opts.gt_mesh && !opts.gt_mesh->faces.empty()) {
      ref = sample_mesh_surface(*opts.gt_mesh, opts.chamfer_samples, opts.seed + 1);
    } else if (scene.shape) {
      ref = sample_shape_surface(*scene.shape, opts.chamfer_samples, opts.seed + 1);
    }
    if (!ref.empty()) report.chamfer = chamfer_distance(rec, ref);
  }
  return report;
}

std::string pose_report_csv(const Scene& scene, const TrainState& state) {
  const auto train = scene.train_indices();
  std::vector<Mat4> gt;
  for (int i : train) gt.push_back(scene.gt_poses[size_t(i)]);
  const AlignmentReport rep = align_trajectories(state.refined_train_poses(scene), gt);
  std::ostringstream os;
  os << "camera,rot_err_deg,trans_err\n";
  for (size_t k = 0; k < train.size(); ++k)
    os << train[k] << "," << fmt(rep.rotation_errors_deg[k]) << ","
       << fmt(rep.translation_errors[k]) << "\n";
  os << "mean," << fmt(rep.mean_rotation_deg) << "," << fmt(rep.mean_translation) << "\n";
  return os.str();
}

}  // namespace posefield
