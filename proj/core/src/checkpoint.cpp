#include "posefield/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "posefield/check.hpp"

namespace posefield {

namespace {

constexpr char kMagic[8] = {'P', 'F', 'C', 'K', 'P', 'T', '0', '1'};

void wr_bytes(std::ofstream& os, const void* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}
void wr_u64(std::ofstream& os, uint64_t v) { wr_bytes(os, &v, 8); }
void wr_i64(std::ofstream& os, int64_t v) { wr_bytes(os, &v, 8); }
void wr_i32(std::ofstream& os, int32_t v) { wr_bytes(os, &v, 4); }
void wr_f64(std::ofstream& os, double v) { wr_bytes(os, &v, 8); }
void wr_string(std::ofstream& os, const std::string& s) {
  wr_u64(os, s.size());
  wr_bytes(os, s.data(), s.size());
}
void wr_doubles(std::ofstream& os, const std::vector<double>& v) {
  wr_u64(os, v.size());
  wr_bytes(os, v.data(), v.size() * 8);
}

void rd_bytes(std::ifstream& is, void* p, size_t n) {
  is.read(reinterpret_cast<char*>(p), std::streamsize(n));
  PF_CHECK_MSG(bool(is), "checkpoint: truncated file");
}
uint64_t rd_u64(std::ifstream& is) {
  uint64_t v;
  rd_bytes(is, &v, 8);
  return v;
}
int64_t rd_i64(std::ifstream& is) {
  int64_t v;
  rd_bytes(is, &v, 8);
  return v;
}
int32_t rd_i32(std::ifstream& is) {
  int32_t v;
  rd_bytes(is, &v, 4);
  return v;
}
double rd_f64(std::ifstream& is) {
  double v;
  rd_bytes(is, &v, 8);
  return v;
}
std::string rd_string(std::ifstream& is) {
  const uint64_t n = rd_u64(is);
  std::string s(n, '\0');
  rd_bytes(is, s.data(), n);
  return s;
}
std::vector<double> rd_doubles(std::ifstream& is) {
  const uint64_t n = rd_u64(is);
  std::vector<double> v(n);
  rd_bytes(is, v.data(), n * 8);
  return v;
}

void wr_optimizer(std::ofstream& os, AdamW& opt) {
  wr_i64(os, opt.step_counter());
  wr_u64(os, opt.first_moments().size());
  for (auto& m : opt.first_moments()) wr_doubles(os, m);
  for (auto& v : opt.second_moments()) wr_doubles(os, v);
}

void rd_optimizer(std::ifstream& is, AdamW& opt) {
  opt.step_counter() = rd_i64(is);
  const uint64_t n = rd_u64(is);
  PF_CHECK_MSG(n == opt.first_moments().size(), "checkpoint: optimizer layout mismatch");
  for (auto& m : opt.first_moments()) {
    auto loaded = rd_doubles(is);
    PF_CHECK_MSG(loaded.size() == m.size(), "checkpoint: moment size mismatch");
    m = std::move(loaded);
  }
  for (auto& v : opt.second_moments()) {
    auto loaded = rd_doubles(is);
    PF_CHECK_MSG(loaded.size() == v.size(), "checkpoint: moment size mismatch");
    v = std::move(loaded);
  }
}

void wr_rng(std::ofstream& os, const Rng& rng) {
  for (uint64_t w : rng.state()) wr_u64(os, w);
}
void rd_rng(std::ifstream& is, Rng& rng) {
  for (auto& w : rng.state()) w = rd_u64(is);
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw NumericalError("save_checkpoint: cannot open " + path);
  wr_bytes(os, kMagic, 8);
  wr_string(os, train_config_to_json(state.config));
  wr_string(os, state.scene_dir);
  wr_i64(os, state.step);

  wr_u64(os, state.cameras.size());
  for (const Camera& cam : state.cameras) {
    wr_f64(os, cam.focal);
    wr_f64(os, cam.cx);
    wr_f64(os, cam.cy);
    wr_i32(os, cam.width);
    wr_i32(os, cam.height);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) wr_f64(os, cam.pose.rotation(r, c));
    for (int d = 0; d < 3; ++d) wr_f64(os, cam.pose.translation[d]);
    wr_doubles(os, cam.pose.correction.xi.values);
  }

  auto params = const_cast<TrainState&>(state).model.parameters();
  wr_u64(os, params.size());
  for (const ad::ParamBlock* p : params) {
    wr_string(os, p->name());
    wr_doubles(os, p->values);
  }

  wr_optimizer(os, const_cast<TrainState&>(state).opt_field);
  wr_optimizer(os, const_cast<TrainState&>(state).opt_pose);

  OccupancyGrid& grid = const_cast<TrainState&>(state).grid;
  wr_i32(os, grid.resolution());
  wr_f64(os, grid.tau());
  wr_doubles(os, grid.logits().values);
  wr_doubles(os, grid.targets());
  wr_doubles(os, grid.sigma_max());
  wr_optimizer(os, grid.optimizer());

  wr_rng(os, state.batch_rng);
  wr_rng(os, state.eik_rng);
}

std::string checkpoint_scene_dir(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw StructuralError("checkpoint: cannot open " + path);
  char magic[8];
  rd_bytes(is, magic, 8);
  PF_CHECK_MSG(std::memcmp(magic, kMagic, 8) == 0, "checkpoint: bad magic in " << path);
  (void)rd_string(is);  // config
  return rd_string(is);
}

TrainConfig checkpoint_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw StructuralError("checkpoint: cannot open " + path);
  char magic[8];
  rd_bytes(is, magic, 8);
  PF_CHECK_MSG(std::memcmp(magic, kMagic, 8) == 0, "checkpoint: bad magic in " << path);
  return train_config_from_json(rd_string(is));
}

std::unique_ptr<TrainState> load_checkpoint(const std::string& path, const Scene& scene) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw StructuralError("checkpoint: cannot open " + path);
  char magic[8];
  rd_bytes(is, magic, 8);
  PF_CHECK_MSG(std::memcmp(magic, kMagic, 8) == 0, "checkpoint: bad magic in " << path);

  const TrainConfig cfg = train_config_from_json(rd_string(is));
  const std::string scene_dir = rd_string(is);
  auto state = std::make_unique<TrainState>(scene, cfg);
  state->scene_dir = scene_dir;
  state->step = rd_i64(is);

  const uint64_t n_cams = rd_u64(is);
  PF_CHECK_MSG(n_cams == state->cameras.size(), "checkpoint: camera count mismatch");
  for (Camera& cam : state->cameras) {
    cam.focal = rd_f64(is);
    cam.cx = rd_f64(is);
    cam.cy = rd_f64(is);
    cam.width = rd_i32(is);
    cam.height = rd_i32(is);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) cam.pose.rotation(r, c) = rd_f64(is);
    for (int d = 0; d < 3; ++d) cam.pose.translation[d] = rd_f64(is);
    auto xi = rd_doubles(is);
    PF_CHECK_MSG(xi.size() == 6, "checkpoint: correction size mismatch");
    cam.pose.correction.xi.values = std::move(xi);
  }

  auto params = state->model.parameters();
  const uint64_t n_blocks = rd_u64(is);
  PF_CHECK_MSG(n_blocks == params.size(), "checkpoint: parameter block count mismatch");
  for (ad::ParamBlock* p : params) {
    const std::string name = rd_string(is);
    PF_CHECK_MSG(name == p->name(), "checkpoint: block order mismatch, expected "
                                        << p->name() << " got " << name);
    auto values = rd_doubles(is);
    PF_CHECK_MSG(values.size() == p->size(), "checkpoint: block size mismatch for " << name);
    p->values = std::move(values);
  }

  rd_optimizer(is, state->opt_field);
  rd_optimizer(is, state->opt_pose);

  PF_CHECK_MSG(rd_i32(is) == state->grid.resolution(), "checkpoint: grid resolution mismatch");
  PF_CHECK_MSG(rd_f64(is) == state->grid.tau(), "checkpoint: grid tau mismatch");
  state->grid.logits().values = rd_doubles(is);
  state->grid.targets() = rd_doubles(is);
  state->grid.sigma_max() = rd_doubles(is);
  rd_optimizer(is, state->grid.optimizer());
  state->grid.rebuild_mask();

  rd_rng(is, state->batch_rng);
  rd_rng(is, state->eik_rng);
  return state;
}

}  // namespace posefield
