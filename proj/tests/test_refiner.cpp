#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include <Eigen/Geometry>

#include "poseflow/bench.hpp"
#include "poseflow/refiner.hpp"
#include "poseflow/rng.hpp"
#include "poseflow/synthetic.hpp"

using namespace poseflow;

namespace {

/// Distinct basis descriptors: within any +-4 window only the true match
/// correlates.
FeatureMap injective_features(int rows, int cols, int channels = 97) {
  FeatureMap f(rows, cols, channels);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) f.at(r, c)[(r * 37 + c) % channels] = 1.f;
  return f;
}

FeatureMap shifted_copy(const FeatureMap& f, int cell_shift) {
  FeatureMap out(f.rows, f.cols, f.channels);
  for (int r = 0; r < f.rows; ++r) {
    for (int c = 0; c < f.cols; ++c) {
      int src = c - cell_shift;
      if (src < 0) src += f.cols;
      auto a = f.at(r, src);
      auto b = out.at(r, c);
      std::copy(a.begin(), a.end(), b.begin());
    }
  }
  return out;
}

/// Fronto-parallel constant-depth setup: a pure in-plane shift of
/// `cell_shift` cells corresponds to a rigid x-translation.
struct RigidPlaneCase {
  Intrinsics cam{500.0, 500.0, 64.0, 64.0, 128, 128};
  double z = 1000.0;
  int cell_shift = 2;
  CorrelationPyramid pyr;
  PointCloud cloud_src;   // grid anchors
  PointCloud cloud_tgt;   // full resolution
  double t_x;             // ground-truth translation, mm

  RigidPlaneCase() {
    const int grid = cam.width / kFeatureStride;
    FeatureMap f1 = injective_features(grid, grid);
    FeatureMap f2 = shifted_copy(f1, cell_shift);
    pyr = build_volume(f1, f2, 4);
    DepthMap depth(cam.height, cam.width, z);
    cloud_src = grid_cloud(depth, cam, kFeatureStride);
    cloud_tgt = lift(depth, cam);
    t_x = cell_shift * kFeatureStride * z / cam.fx;  // 16 px at z=1000, fx=500
  }
};

}  // namespace

TEST_CASE("classical field recovers a constructed rigid shift") {
  RigidPlaneCase rig;
  RefineConfig cfg;
  FlowField zero(rig.cloud_src.rows, rig.cloud_src.cols);
  LookupWindow win = lookup(rig.pyr, zero, cfg.lookup_radius);
  DenseSE3Field field = classical_field(win, rig.cloud_src, rig.cloud_tgt, rig.cam, cfg);

  Pose gt;
  gt.t = {rig.t_x, 0, 0};
  int valid = 0;
  for (int i = 0; i < field.rows; ++i) {
    for (int j = 0; j < field.cols; ++j) {
      if (!field.valid.at(i, j)) continue;
      ++valid;
      const Pose& cell = field.cells[field.idx(i, j)];
      CHECK(rotation_angle_deg(cell.R, gt.R) < 0.5);
      CHECK((cell.t - gt.t).norm() < 1.0);
    }
  }
  // cells whose true match leaves the window are gated off; the rest must fit
  CHECK(valid > field.rows * (field.cols - 2 * rig.cell_shift) / 2);

  SUBCASE("field dispersion is near zero for a rigid pair") {
    auto [pose, diag] = vote_global_pose(field, rig.cloud_src, cfg);
    CHECK(diag.dispersion_t_mm < 1.0);
    CHECK(diag.dispersion_r_deg < 0.2);
    CHECK((pose.t - gt.t).norm() < 1.0);
    CHECK(diag.inlier_fraction == doctest::Approx(1.0));
  }
}

TEST_CASE("classical field is empty when the target depth is invalid") {
  RigidPlaneCase rig;
  RefineConfig cfg;
  DepthMap no_depth(rig.cam.height, rig.cam.width, 0.0);
  PointCloud empty_tgt = lift(no_depth, rig.cam);
  FlowField zero(rig.cloud_src.rows, rig.cloud_src.cols);
  LookupWindow win = lookup(rig.pyr, zero, cfg.lookup_radius);
  DenseSE3Field field = classical_field(win, rig.cloud_src, empty_tgt, rig.cam, cfg);
  for (auto v : field.valid.raw()) CHECK(v == 0);
}

TEST_CASE("vote_global_pose returns a constant field exactly") {
  CounterRng rng(5, "vote");
  Pose gt;
  gt.R = Eigen::AngleAxisd(0.2, Eigen::Vector3d(1, 1, 0).normalized()).toRotationMatrix();
  gt.t = {10, -5, 30};

  DenseSE3Field field(8, 8);
  PointCloud cloud;
  cloud.rows = cloud.cols = 8;
  cloud.points.resize(64);
  cloud.valid.assign(64, 1);
  for (int i = 0; i < 64; ++i) {
    cloud.points[i] = rng.gaussian3() * 80.0 + Eigen::Vector3d(0, 0, 900);
    field.cells[i] = gt;
    field.valid.raw()[i] = 1;
  }
  for (auto mode : {VoteMode::IrlsHuber, VoteMode::Ransac}) {
    RefineConfig cfg;
    cfg.vote = mode;
    auto [pose, diag] = vote_global_pose(field, cloud, cfg);
    CHECK((pose.R - gt.R).norm() < 1e-9);
    CHECK((pose.t - gt.t).norm() < 1e-9);
    CHECK(diag.inlier_fraction == doctest::Approx(1.0));
    CHECK(diag.valid_cells == 64);
  }
}

TEST_CASE("vote_global_pose survives 20% outlier cells") {
  for (int seed = 0; seed < 100; ++seed) {
    CounterRng rng(seed, "contamination");
    Pose gt;
    gt.R = Eigen::AngleAxisd(rng.uniform(0, 0.5), rng.unit_vector()).toRotationMatrix();
    gt.t = rng.gaussian3() * 20.0;

    const int n = 80;
    DenseSE3Field field(8, 10);
    PointCloud cloud;
    cloud.rows = 8;
    cloud.cols = 10;
    cloud.points.resize(n);
    cloud.valid.assign(n, 1);
    for (int i = 0; i < n; ++i) {
      cloud.points[i] = rng.gaussian3() * 70.0 + Eigen::Vector3d(0, 0, 1000);
      if (i < n / 5) {
        Pose outlier;
        outlier.R = rng.rotation();
        outlier.t = rng.gaussian3() * 100.0;
        field.cells[i] = outlier;
      } else {
        field.cells[i] = gt;
      }
      field.valid.raw()[i] = 1;
    }
    for (auto mode : {VoteMode::IrlsHuber, VoteMode::Ransac}) {
      RefineConfig cfg;
      cfg.vote = mode;
      cfg.seed = seed;
      auto [pose, diag] = vote_global_pose(field, cloud, cfg);
      CHECK(rotation_angle_deg(pose.R, gt.R) < 0.5);
      CHECK((pose.t - gt.t).norm() < 1.0);
    }
  }
}

TEST_CASE("vote_global_pose needs at least 3 cells") {
  DenseSE3Field field(1, 2);
  field.valid.at(0, 0) = field.valid.at(0, 1) = 1;
  PointCloud cloud;
  cloud.rows = 1;
  cloud.cols = 2;
  cloud.points = {{0, 0, 900}, {50, 0, 900}};
  cloud.valid = {1, 1};
  RefineConfig cfg;
  CHECK_THROWS_AS(vote_global_pose(field, cloud, cfg), Error);
}

TEST_CASE("gru cell gate equations at zero") {
  NeuralWeights w;
  w.input_dim = 1;
  w.hidden_dim = 1;
  w.w_z = w.w_r = w.w_h = Eigen::MatrixXf::Zero(1, 2);
  w.b_z = w.b_r = w.b_h = Eigen::VectorXf::Zero(1);
  w.twist_w = Eigen::MatrixXf::Zero(6, 1);
  w.twist_b = Eigen::VectorXf::Zero(6);
  w.pose_w = Eigen::MatrixXf::Zero(9, 1);
  w.pose_b = Eigen::VectorXf::Zero(9);

  Eigen::VectorXf x = Eigen::VectorXf::Zero(1);
  Eigen::VectorXf h = Eigen::VectorXf::Zero(1);
  // z = r = sigmoid(0) = 0.5, candidate = tanh(0) = 0, h' = 0.5*0 + 0.5*0
  CHECK(gru_cell(x, h, w)(0) == doctest::Approx(0.0));

  // nonzero h exposes the 0.5 update gate: h' = (1-z)*h = 0.5
  h(0) = 1.f;
  CHECK(gru_cell(x, h, w)(0) == doctest::Approx(0.5));
}

TEST_CASE("neural step with a zero twist head leaves the field unchanged") {
  RigidPlaneCase rig;
  RefineConfig cfg;
  FlowField zero(rig.cloud_src.rows, rig.cloud_src.cols);
  LookupWindow win = lookup(rig.pyr, zero, cfg.lookup_radius);

  const int input_dim = win.per_pixel() + 6;
  NeuralWeights w = make_random_weights(input_dim, 8, 3);
  w.twist_w.setZero();
  w.twist_b.setZero();

  Pose residual;
  residual.R = Eigen::AngleAxisd(0.1, Eigen::Vector3d::UnitY()).toRotationMatrix();
  residual.t = {5, 0, -10};
  Mask mask(win.rows, win.cols, 1);
  DenseSE3Field prev = field_from_residual(residual, mask);
  HiddenState hidden(win.rows, win.cols, 8);

  auto [next, hout] = neural_step(win, prev, hidden, w);
  for (int i = 0; i < next.rows * next.cols; ++i) {
    CHECK(next.valid.raw()[i] == 1);
    CHECK((next.cells[i].R - prev.cells[i].R).norm() < 1e-12);
    CHECK((next.cells[i].t - prev.cells[i].t).norm() < 1e-12);
  }
}

TEST_CASE("neural step with random weights keeps the field valid and finite") {
  RigidPlaneCase rig;
  RefineConfig cfg;
  FlowField zero(rig.cloud_src.rows, rig.cloud_src.cols);
  LookupWindow win = lookup(rig.pyr, zero, cfg.lookup_radius);
  NeuralWeights w = make_random_weights(win.per_pixel() + 6, 16, 7);

  Mask mask(win.rows, win.cols, 1);
  DenseSE3Field prev = field_from_residual(Pose::identity(), mask);
  HiddenState hidden(win.rows, win.cols, 16);
  auto [next, hout] = neural_step(win, prev, hidden, w);
  for (int i = 0; i < next.rows * next.cols; ++i) {
    REQUIRE(next.valid.raw()[i] == 1);
    CHECK(orthonormality_drift(next.cells[i].R) < 1e-9);
    CHECK(next.cells[i].t.allFinite());
  }
  for (float v : hout.data) CHECK(std::isfinite(v));

  SUBCASE("shape mismatches are rejected") {
    NeuralWeights bad = make_random_weights(win.per_pixel() + 5, 16, 8);
    CHECK_THROWS_AS(neural_step(win, prev, hidden, bad), Error);
    HiddenState wrong(win.rows, win.cols, 4);
    CHECK_THROWS_AS(neural_step(win, prev, wrong, w), Error);
  }
}

TEST_CASE("weights serialization round trip and validation") {
  namespace fs = std::filesystem;
  NeuralWeights w = make_random_weights(330, 64, 11);
  std::string path = (fs::temp_directory_path() / "pf_weights.scw2").string();
  save_weights(path, w);
  NeuralWeights back = load_weights(path);
  CHECK(back.input_dim == 330);
  CHECK(back.hidden_dim == 64);
  CHECK((back.w_z - w.w_z).norm() == 0.f);
  CHECK((back.w_h - w.w_h).norm() == 0.f);
  CHECK((back.twist_w - w.twist_w).norm() == 0.f);
  CHECK((back.pose_b - w.pose_b).norm() == 0.f);
  std::remove(path.c_str());

  // corrupt shapes must be rejected
  NeuralWeights bad = w;
  bad.twist_w = Eigen::MatrixXf::Zero(5, 64);
  save_weights(path, bad);
  CHECK_THROWS_AS(load_weights(path), Error);
  std::remove(path.c_str());
}

TEST_CASE("ransac kabsch baseline on exact flow") {
  // fronto-parallel plane, pure translation; flow endpoints are exact
  Intrinsics cam{500.0, 500.0, 64.0, 64.0, 128, 128};
  const double z = 1000.0;
  DepthMap d1(cam.height, cam.width, z);
  DepthMap d2 = d1;
  const double tx = 24.0;  // 12 px
  FlowField flow(cam.height, cam.width);
  for (int r = 8; r < cam.height - 8; r += 4) {
    for (int c = 8; c < cam.width - 20; c += 4) {
      size_t i = flow.idx(r, c);
      flow.du[i] = tx * cam.fx / z;
      flow.valid.at(r, c) = 1;
    }
  }
  RefineConfig cfg;
  Pose fit = ransac_kabsch_baseline(flow, d1, d2, cam, cfg);
  CHECK((fit.t - Eigen::Vector3d(tx, 0, 0)).norm() < 1e-6);
  CHECK(rotation_angle_deg(fit.R, Eigen::Matrix3d::Identity()) < 1e-7);
}

TEST_CASE("ransac kabsch baseline survives 30% flow outliers") {
  Intrinsics cam{500.0, 500.0, 64.0, 64.0, 128, 128};
  const double z = 900.0;
  DepthMap d1(cam.height, cam.width, z);
  DepthMap d2 = d1;
  CounterRng rng(17, "outliers");
  const double tx = 10.0, ty = -6.0;
  FlowField flow(cam.height, cam.width);
  int count = 0;
  for (int r = 10; r < cam.height - 10; r += 3) {
    for (int c = 10; c < cam.width - 16; c += 3) {
      size_t i = flow.idx(r, c);
      flow.du[i] = tx * cam.fx / z;
      flow.dv[i] = ty * cam.fy / z;
      if (count++ % 10 < 3) {  // 30% corrupted
        flow.du[i] += rng.uniform(-20, 20);
        flow.dv[i] += rng.uniform(-20, 20);
      }
      flow.valid.at(r, c) = 1;
    }
  }
  RefineConfig cfg;
  Pose fit = ransac_kabsch_baseline(flow, d1, d2, cam, cfg);
  CHECK(rotation_angle_deg(fit.R, Eigen::Matrix3d::Identity()) < 1.0);
  CHECK((fit.t - Eigen::Vector3d(tx, ty, 0)).norm() < 2.0);
}

TEST_CASE("ransac kabsch baseline error paths") {
  Intrinsics cam{500.0, 500.0, 16.0, 16.0, 32, 32};
  DepthMap none(cam.height, cam.width, 0.0);
  FlowField flow(cam.height, cam.width);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) flow.valid.at(r, c) = 1;
  RefineConfig cfg;
  CHECK_THROWS_AS(ransac_kabsch_baseline(flow, none, none, cam, cfg), Error);
}

TEST_CASE("refine holds a ground-truth initialization fixed") {
  GenParams params;
  params.shape = ShapeKind::Icosphere;
  params.noise = SensorNoise::none();
  SyntheticScene scene = gen_scene(params, 2001);

  RefineConfig cfg;
  RefineTrace trace = refine(scene.rgb, scene.depth, scene.mesh, scene.camera, scene.gt, cfg);
  REQUIRE(trace.steps.size() == static_cast<size_t>(cfg.iterations) + 1);
  for (size_t k = 1; k < trace.steps.size(); ++k) {
    const Pose& prev = trace.steps[k - 1].pose;
    const Pose& cur = trace.steps[k].pose;
    CHECK_FALSE(trace.steps[k].diag.skipped);
    CHECK(rotation_angle_deg(cur.R, prev.R) < 0.1);
    CHECK((cur.t - prev.t).norm() < 0.5);
  }
  // and the final pose stays at the ground truth
  CHECK(rotation_angle_deg(trace.final_pose().R, scene.gt.R) < 0.1);
  CHECK((trace.final_pose().t - scene.gt.t).norm() < 0.5);
}

TEST_CASE("refine trace satisfies the decoded-update identity") {
  GenParams params;
  params.shape = ShapeKind::Cube;
  SyntheticScene scene = gen_scene(params, 2002);
  NoiseSpec noise;
  noise.mode = NoiseSpec::Mode::Level;
  noise.level = 10;
  noise.seed = 5;
  Pose init = perturb_pose(scene.gt, noise);

  RefineConfig cfg;
  RefineTrace trace = refine(scene.rgb, scene.depth, scene.mesh, scene.camera, init, cfg);
  REQUIRE(trace.steps.size() == static_cast<size_t>(cfg.iterations) + 1);
  CHECK((trace.steps[0].pose.R - init.R).norm() == 0.0);
  for (size_t k = 1; k < trace.steps.size(); ++k) {
    if (trace.steps[k].diag.skipped) continue;
    Pose decoded = decode_residual(trace.steps[k - 1].pose, trace.steps[k].residual, trace.crop);
    CHECK((decoded.R - trace.steps[k].pose.R).norm() < 1e-12);
    CHECK((decoded.t - trace.steps[k].pose.t).norm() < 1e-9);
  }
}

TEST_CASE("refine converges from L15 noise on a noiseless cube scene") {
  GenParams params;
  params.shape = ShapeKind::Cube;
  params.noise = SensorNoise::none();
  SyntheticScene scene = gen_scene(params, 2024);
  CounterRng dir_rng(2024, "probe");
  Pose init = perturb_pose_level(scene.gt, 15.0, dir_rng.unit_vector(), dir_rng.unit_vector());

  RefineConfig cfg;
  RefineTrace trace = refine(scene.rgb, scene.depth, scene.mesh, scene.camera, init, cfg);
  CHECK(rotation_angle_deg(trace.final_pose().R, scene.gt.R) < 2.0);
  CHECK((trace.final_pose().t - scene.gt.t).norm() < 5.0);
}

TEST_CASE("refine is bit-deterministic") {
  GenParams params;
  params.shape = ShapeKind::Cylinder;
  SyntheticScene scene = gen_scene(params, 2004);
  NoiseSpec noise;
  noise.mode = NoiseSpec::Mode::Level;
  noise.level = 10;
  noise.seed = 3;
  Pose init = perturb_pose(scene.gt, noise);

  RefineConfig cfg;
  cfg.vote = VoteMode::Ransac;
  cfg.seed = 909;
  RefineTrace a = refine(scene.rgb, scene.depth, scene.mesh, scene.camera, init, cfg);
  RefineTrace b = refine(scene.rgb, scene.depth, scene.mesh, scene.camera, init, cfg);
  REQUIRE(a.steps.size() == b.steps.size());
  for (size_t k = 0; k < a.steps.size(); ++k) {
    CHECK((a.steps[k].pose.R - b.steps[k].pose.R).norm() == 0.0);
    CHECK((a.steps[k].pose.t - b.steps[k].pose.t).norm() == 0.0);
    CHECK(a.steps[k].flow.du == b.steps[k].flow.du);
  }
}

TEST_CASE("refine input validation") {
  GenParams params;
  SyntheticScene scene = gen_scene(params, 2005);
  RefineConfig cfg;

  SUBCASE("too few valid depth pixels") {
    DepthMap empty(scene.camera.height, scene.camera.width, 0.0);
    CHECK_THROWS_AS(refine(scene.rgb, empty, scene.mesh, scene.camera, scene.gt, cfg), Error);
  }
  SUBCASE("pose out of view") {
    Pose behind = scene.gt;
    behind.t.z() = -500;
    CHECK_THROWS_AS(refine(scene.rgb, scene.depth, scene.mesh, scene.camera, behind, cfg), Error);
  }
  SUBCASE("bad config") {
    RefineConfig bad;
    bad.iterations = 0;
    CHECK_THROWS_AS(refine(scene.rgb, scene.depth, scene.mesh, scene.camera, scene.gt, bad),
                    Error);
    RefineConfig even;
    even.patch = 4;
    CHECK_THROWS_AS(refine(scene.rgb, scene.depth, scene.mesh, scene.camera, scene.gt, even),
                    Error);
  }
}

TEST_CASE("refiner vote invariance to uniform IRLS weight scaling") {
  // scaling all weights uniformly must not change the Kabsch argmin; this is
  // exercised through two IRLS rounds with scaled Huber deltas producing the
  // same fit on inlier-only data
  CounterRng rng(23, "scale");
  Pose gt;
  gt.R = Eigen::AngleAxisd(0.15, rng.unit_vector()).toRotationMatrix();
  gt.t = {3, -2, 8};

  DenseSE3Field field(4, 4);
  PointCloud cloud;
  cloud.rows = cloud.cols = 4;
  cloud.points.resize(16);
  cloud.valid.assign(16, 1);
  for (int i = 0; i < 16; ++i) {
    cloud.points[i] = rng.gaussian3() * 60.0 + Eigen::Vector3d(0, 0, 800);
    field.cells[i] = gt;
    field.valid.raw()[i] = 1;
  }
  RefineConfig a, b;
  a.huber_delta_mm = 10;
  b.huber_delta_mm = 1000;  // residuals are ~0: all weights 1 either way
  auto [pa, da] = vote_global_pose(field, cloud, a);
  auto [pb, db] = vote_global_pose(field, cloud, b);
  CHECK((pa.R - pb.R).norm() < 1e-12);
  CHECK((pa.t - pb.t).norm() < 1e-12);
}
