#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/Geometry>

#include "poseflow/metrics.hpp"
#include "poseflow/rng.hpp"
#include "poseflow/synthetic.hpp"

using namespace poseflow;

namespace {

const Intrinsics kCam{500.0, 500.0, 128.0, 128.0, 256, 256};

Pose at_z(double z) {
  Pose p;
  p.t = {0, 0, z};
  return p;
}

SampleErrors perfect_sample(double diameter = 100) {
  SampleErrors s;
  s.vsd.assign(10, 0.0);
  s.mssd_mm = 0;
  s.mspd_px = 0;
  s.diameter_mm = diameter;
  s.image_width = 640;
  return s;
}

SampleErrors hopeless_sample(double diameter = 100) {
  SampleErrors s;
  s.vsd.assign(10, 1.0);
  s.mssd_mm = 1e9;
  s.mspd_px = 1e9;
  s.diameter_mm = diameter;
  s.image_width = 640;
  return s;
}

}  // namespace

TEST_CASE("vsd is zero for equal unoccluded poses and one for disjoint renders") {
  TriMesh mesh = make_icosphere(50, 2);
  Pose gt = at_z(800);
  RenderOutput scene = render(mesh, gt, kCam);
  CHECK(vsd(gt, gt, mesh, scene.depth, kCam, 10.0) == 0.0);

  Pose aside = gt;
  aside.t.x() += 500;  // fully outside the gt silhouette
  CHECK(vsd(aside, gt, mesh, scene.depth, kCam, 10.0) == 1.0);
}

TEST_CASE("vsd matches hand-built 3x3 fixtures exactly") {
  // 4-pixel union, one pixel exceeding tau -> 0.25
  DepthMap est(3, 3, 0.0), gt(3, 3, 0.0), scene(3, 3, 0.0);
  est.at(0, 0) = gt.at(0, 0) = 1000;
  est.at(0, 1) = gt.at(0, 1) = 1010;
  est.at(1, 0) = gt.at(1, 0) = 990;
  est.at(1, 1) = 1000;
  gt.at(1, 1) = 1030;  // 30 mm apart: exceeds tau = 10
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) scene.at(r, c) = std::max(est.at(r, c), gt.at(r, c));
  CHECK(vsd_from_depths(est, gt, scene, 10.0) == doctest::Approx(0.25));
  // with a looser tau every union pixel matches
  CHECK(vsd_from_depths(est, gt, scene, 50.0) == 0.0);

  // single-visibility pixels always count as errors
  DepthMap est2 = est;
  DepthMap scene2 = scene;
  est2.at(2, 2) = 1000;  // estimate visible where gt renders nothing
  scene2.at(2, 2) = 1000;
  CHECK(vsd_from_depths(est2, gt, scene2, 50.0) == doctest::Approx(1.0 / 5.0));

  // a pixel 20 mm behind the scene surface is invisible (delta = 15)
  DepthMap est3 = est, gt3 = gt;
  gt3.at(1, 1) = 1000;
  est3.at(1, 1) = scene.at(1, 1) + 20.0;
  CHECK(vsd_from_depths(est3, gt3, scene, 50.0) == doctest::Approx(0.25));

  // brute-force per-pixel oracle over a randomized fixture
  CounterRng rng(8, "vsd");
  for (int trial = 0; trial < 20; ++trial) {
    DepthMap a(3, 3, 0.0), b(3, 3, 0.0), s(3, 3, 0.0);
    for (int i = 0; i < 9; ++i) {
      a.raw()[i] = rng.uniform() < 0.3 ? 0.0 : rng.uniform(900, 1100);
      b.raw()[i] = rng.uniform() < 0.3 ? 0.0 : rng.uniform(900, 1100);
      s.raw()[i] = rng.uniform() < 0.2 ? 0.0 : rng.uniform(900, 1100);
    }
    const double tau = 25.0, delta = 15.0;
    int uni = 0, err = 0;
    for (int i = 0; i < 9; ++i) {
      bool ve = a.raw()[i] > 0 && a.raw()[i] <= s.raw()[i] + delta;
      bool vg = b.raw()[i] > 0 && b.raw()[i] <= s.raw()[i] + delta;
      if (!ve && !vg) continue;
      ++uni;
      if (!ve || !vg || std::abs(a.raw()[i] - b.raw()[i]) > tau) ++err;
    }
    if (uni == 0) {
      CHECK_THROWS_AS(vsd_from_depths(a, b, s, tau, delta), Error);
    } else {
      CHECK(vsd_from_depths(a, b, s, tau, delta) ==
            doctest::Approx(static_cast<double>(err) / uni));
    }
  }
}

TEST_CASE("rendered vsd agrees with the depth-map core") {
  TriMesh mesh = make_icosphere(50, 1);
  Pose gt = at_z(800);
  Pose est = gt;
  est.t.x() += 5;
  RenderOutput scene = render(mesh, gt, kCam);
  RenderOutput re = render(mesh, est, kCam);
  double direct = vsd(est, gt, mesh, scene.depth, kCam, 10.0);
  double core = vsd_from_depths(re.depth, scene.depth, scene.depth, 10.0);
  CHECK(direct == doctest::Approx(core));
}

TEST_CASE("vsd empty union") {
  TriMesh mesh = make_cube(40);
  Pose behind;
  behind.t = {0, 0, -500};
  DepthMap scene(kCam.height, kCam.width, 0.0);
  CHECK_THROWS_AS(vsd(behind, behind, mesh, scene, kCam, 10.0), Error);
}

TEST_CASE("mssd pure translation equals the offset") {
  TriMesh mesh = make_cube(60);
  Pose gt = at_z(900);
  Pose est = gt;
  est.t += Eigen::Vector3d(3, 4, 0);  // 5 mm offset
  CHECK(mssd(est, gt, mesh, SymmetrySet::identity_only()) == doctest::Approx(5.0));
  CHECK(mssd(gt, gt, mesh, SymmetrySet::identity_only()) == 0.0);
}

TEST_CASE("mssd symmetry absorption") {
  TriMesh mesh = make_cube(60);
  Pose gt = at_z(900);
  Pose rz180;
  rz180.R = Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  Pose est = compose(gt, rz180);

  SymmetrySet syms;
  syms.add(rz180);
  CHECK(mssd(est, gt, mesh, syms) == doctest::Approx(0.0).epsilon(1e-9));
  // without the symmetry the error is the full vertex swing
  CHECK(mssd(est, gt, mesh, SymmetrySet::identity_only()) > 10.0);

  // enlarging the symmetry set never increases the error
  SymmetrySet bigger = syms;
  Pose rz90;
  rz90.R = Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  bigger.add(rz90);
  CHECK(mssd(est, gt, mesh, bigger) <= mssd(est, gt, mesh, syms) + 1e-12);
}

TEST_CASE("mspd pinhole hand case") {
  // planar mesh at constant z: +10 mm x at z=1000 with fx=500 -> 5 px
  std::vector<Eigen::Vector3d> v = {{-30, -30, 0}, {30, -30, 0}, {30, 30, 0}, {-30, 30, 0}};
  std::vector<std::array<std::int32_t, 3>> f = {{0, 1, 2}, {0, 2, 3}};
  TriMesh plane = make_mesh(v, f);
  Pose gt = at_z(1000);
  Pose est = gt;
  est.t.x() += 10;
  CHECK(mspd(est, gt, plane, SymmetrySet::identity_only(), kCam) == doctest::Approx(5.0));
  CHECK(mspd(gt, gt, plane, SymmetrySet::identity_only(), kCam) == 0.0);

  Pose rz180;
  rz180.R = Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  SymmetrySet syms;
  syms.add(rz180);
  Pose sym_est = compose(gt, rz180);
  CHECK(mspd(sym_est, gt, plane, syms, kCam) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("average recall endpoints") {
  std::vector<SampleErrors> all_good(5, perfect_sample());
  MetricReport good = average_recall(all_good);
  CHECK(good.average_recall == doctest::Approx(1.0));

  std::vector<SampleErrors> all_bad(5, hopeless_sample());
  MetricReport bad = average_recall(all_bad);
  CHECK(bad.average_recall == doctest::Approx(0.0));

  std::vector<SampleErrors> half = {perfect_sample(), hopeless_sample()};
  MetricReport mixed = average_recall(half);
  CHECK(mixed.average_recall == doctest::Approx(0.5));

  CHECK_THROWS_AS(average_recall({}), Error);
}

TEST_CASE("average recall is monotone in per-sample errors") {
  CounterRng rng(2025, "ar");
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<SampleErrors> base, worse;
    int n = 3 + static_cast<int>(rng.uniform_index(6));
    for (int i = 0; i < n; ++i) {
      SampleErrors s;
      s.diameter_mm = rng.uniform(80, 200);
      s.image_width = 640;
      for (int t = 0; t < 10; ++t) s.vsd.push_back(rng.uniform(0, 1));
      s.mssd_mm = rng.uniform(0, 0.6) * s.diameter_mm;
      s.mspd_px = rng.uniform(0, 60);
      SampleErrors w = s;
      for (auto& v : w.vsd) v = std::min(1.0, v + rng.uniform(0, 0.3));
      w.mssd_mm += rng.uniform(0, 30);
      w.mspd_px += rng.uniform(0, 20);
      base.push_back(s);
      worse.push_back(w);
    }
    CHECK(average_recall(worse).average_recall <= average_recall(base).average_recall + 1e-12);
  }
}

TEST_CASE("improvement histogram") {
  SUBCASE("no change lands in the zero bin") {
    std::vector<double> err = {5, 10, 20};
    auto h = improvement_histogram(err, err, 20);
    CHECK(h[10] == 3);  // [0, 0.1) bin
  }
  SUBCASE("perfect refinement lands at +1") {
    std::vector<double> init = {5, 10}, refined = {0, 0};
    auto h = improvement_histogram(init, refined, 20);
    CHECK(h[19] == 2);
  }
  SUBCASE("mixed case matches a scalar loop oracle") {
    CounterRng rng(31, "hist");
    std::vector<double> init, refined;
    for (int i = 0; i < 200; ++i) {
      init.push_back(rng.uniform(0.1, 50));
      refined.push_back(rng.uniform(0, 80));
    }
    auto h = improvement_histogram(init, refined, 20);
    std::vector<int> oracle(20, 0);
    for (int i = 0; i < 200; ++i) {
      double rel = (init[i] - refined[i]) / std::max(init[i], 1e-6);
      rel = std::clamp(rel, -1.0, 1.0);
      int b = std::min(19, static_cast<int>((rel + 1.0) * 10));
      ++oracle[b];
    }
    for (int b = 0; b < 20; ++b) CHECK(h[b] == oracle[b]);
    int total = 0;
    for (int c : h) total += c;
    CHECK(total == 200);
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(improvement_histogram({1, 2}, {1}), Error);
  }
}

TEST_CASE("compute_sample_errors fills the tau grid") {
  TriMesh mesh = make_icosphere(50, 1);
  Pose gt = at_z(800);
  RenderOutput scene = render(mesh, gt, kCam);
  // a pure 1 mm depth offset barely moves the silhouette
  Pose est = gt;
  est.t.z() += 1.0;
  SampleErrors s =
      compute_sample_errors(est, gt, mesh, SymmetrySet::identity_only(), scene.depth, kCam);
  CHECK(s.vsd.size() == 10);
  CHECK(s.mssd_mm == doctest::Approx(1.0));
  CHECK(s.diameter_mm == doctest::Approx(mesh.diameter));
  MetricReport rep = average_recall({s});
  CHECK(rep.average_recall == doctest::Approx(1.0));
}
