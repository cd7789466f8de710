// temporary: dissect iteration-1 internals on a failing L15 case
#include <cstdio>
#include "poseflow/refiner.hpp"
#include "poseflow/rng.hpp"
#include "poseflow/synthetic.hpp"

using namespace poseflow;

int main(int argc, char** argv) {
  int seed = argc > 1 ? std::atoi(argv[1]) : 9000;
  int shape_ix = argc > 2 ? std::atoi(argv[2]) : 0;
  double level = argc > 3 ? std::atof(argv[3]) : 15;
  GenParams params;
  params.shape = static_cast<ShapeKind>(shape_ix);
  SyntheticScene scene = gen_scene(params, seed);
  CounterRng rng(seed, "probe");
  Pose init = perturb_pose_level(scene.gt, level, rng.unit_vector(), rng.unit_vector());

  RefineConfig cfg;
  Intrinsics kc = crop_camera(scene.mesh, init, scene.camera, cfg.crop_size, cfg.crop_pad);
  GrayImage rgb_c; DepthMap depth_c;
  resample_view(scene.rgb, scene.depth, scene.camera, kc, rgb_c, depth_c);
  RenderOutput ref_full = render(scene.mesh, init, scene.camera);
  RenderOutput ref;
  resample_view(ref_full.intensity, ref_full.depth, scene.camera, kc, ref.intensity, ref.depth);

  FeatureMap f1 = extract_features(ref.intensity, ref.depth, kc);
  FeatureMap f2 = extract_features(rgb_c, depth_c, kc);
  CorrelationPyramid pyr = build_volume(f1, f2, cfg.pyramid_levels);
  CorrelationPyramid pyr_int = build_volume(extract_intensity_features(ref.intensity),
                                            extract_intensity_features(rgb_c),
                                            cfg.pyramid_levels);
  FlowField zero(f1.rows, f1.cols);
  LookupWindow win = lookup(pyr, zero, cfg.lookup_radius);
  LookupWindow win_int = lookup(pyr_int, zero, cfg.lookup_radius);

  PointCloud cloud_src = grid_cloud(ref.depth, kc, kFeatureStride);
  PointCloud cloud_tgt = lift(depth_c, kc);

  // the true camera-frame correction from init to gt
  Pose g_true = pose_residual(init, scene.gt);
  auto score = [&](const LookupWindow& win2, const Pose& g, int level) {
    const int r = win2.radius, w = win2.window();
    const double scale = 1.0 / (1 << level);
    const double align = ((1 << level) - 1) * 0.5;
    double s = 0;
    for (int i = 0; i < win2.rows; ++i)
      for (int j = 0; j < win2.cols; ++j) {
        if (!cloud_src.is_valid(i, j)) continue;
        auto val = [&](int a, int b) { return (double)win2.at(i, j, level, a - r, b - r); };
        Eigen::Vector3d y = g.apply(cloud_src.at(i, j));
        double sx = 2.0 * (r + 1), sy = sx;
        if (y.z() > 0) {
          double u = kc.fx * y.x() / y.z() + kc.cx;
          double v = kc.fy * y.y() / y.z() + kc.cy;
          sx = (u - 4.0) / 8.0 - win2.center_x(i, j);
          sy = (v - 4.0) / 8.0 - win2.center_y(i, j);
        }
        if (std::abs(sx) > r + 0.5 || std::abs(sy) > r + 0.5) {
          double mean = 0;
          for (int a = 0; a < w; ++a) for (int b = 0; b < w; ++b) mean += val(a, b);
          s += mean / (w * w);
          continue;
        }
        double x = std::clamp((sx - align) * scale + r, 0.0, w - 1.0);
        double yy = std::clamp((sy - align) * scale + r, 0.0, w - 1.0);
        int x0 = std::min((int)x, w - 2), y0 = std::min((int)yy, w - 2);
        double fx = x - x0, fy = yy - y0;
        s += (1 - fy) * ((1 - fx) * val(y0, x0) + fx * val(y0, x0 + 1)) +
             fy * ((1 - fx) * val(y0 + 1, x0) + fx * val(y0 + 1, x0 + 1));
      }
    return s;
  };
  printf("int score: identity=%.2f true=%.2f\n", score(win_int, Pose::identity(), 0),
         score(win_int, g_true, 0));
  {
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    int n = 0;
    for (int i = 0; i < cloud_src.rows * cloud_src.cols; ++i)
      if (cloud_src.valid[i]) { centroid += cloud_src.points[i]; ++n; }
    centroid /= n;
    std::vector<Eigen::Vector3d> axes = {
        {1,0,0},{0,1,0},{0,0,1},
        Eigen::Vector3d(1,1,0).normalized(), Eigen::Vector3d(1,-1,0).normalized(),
        Eigen::Vector3d(1,0,1).normalized(), Eigen::Vector3d(1,0,-1).normalized(),
        Eigen::Vector3d(0,1,1).normalized(), Eigen::Vector3d(0,1,-1).normalized(),
        Eigen::Vector3d(1,1,1).normalized(), Eigen::Vector3d(1,1,-1).normalized(),
        Eigen::Vector3d(1,-1,1).normalized(), Eigen::Vector3d(-1,1,1).normalized()};
    double bs = -1e30, bd = 0; Eigen::Vector3d ba;
    double true_trans_score = 0;
    Pose tseed;  // translation of truth, rotation identity
    tseed.t = g_true.apply(centroid) - centroid;
    true_trans_score = score(win_int, tseed, 0);
    for (auto& a : axes) for (double d : {-25.,-20.,-15.,-10.,-5.,5.,10.,15.,20.,25.}) {
      Pose cand;
      cand.R = Eigen::AngleAxisd(d*M_PI/180, a).toRotationMatrix();
      cand.t = tseed.apply(centroid) - cand.R * centroid;
      double s = score(win_int, cand, 0);
      if (s > bs) { bs = s; bd = d; ba = a; }
    }
    printf("grid-from-trueTrans: seed=%.2f best=%.2f at %.0fdeg axis(%.2f %.2f %.2f); rot err to true=%.1f\n",
           true_trans_score, bs, bd, ba.x(), ba.y(), ba.z(),
           rotation_angle_deg(Eigen::AngleAxisd(bd*M_PI/180, ba).toRotationMatrix(), g_true.R));
  }
  printf("true correction: rot=%.2f deg trans=%.2f mm\n",
         rotation_angle_deg(g_true.R, Eigen::Matrix3d::Identity()), g_true.t.norm());

  DenseSE3Field field = classical_field(win, cloud_src, cloud_tgt, kc, cfg, &pyr_int);
  auto [g_vote, diag] = vote_global_pose(field, cloud_src, cfg);
  Pose est = apply_residual(g_vote, init);
  printf("after field+vote: rot err=%.2f deg trans err=%.2f mm (cells=%d inl=%.2f)\n",
         rotation_angle_deg(est.R, scene.gt.R), (est.t - scene.gt.t).norm(), diag.valid_cells,
         diag.inlier_fraction);
  // full refine, then score the final stuck pose vs truth
  RefineTrace tr = refine(scene.rgb, scene.depth, scene.mesh, scene.camera, init, cfg);
  Pose g_stuck = pose_residual(init, tr.final_pose());
  printf("refine final: rot err=%.2f; int scores: stuck=%.2f true=%.2f\n",
         rotation_angle_deg(tr.final_pose().R, scene.gt.R), score(win_int, g_stuck, 0),
         score(win_int, g_true, 0));
  return 0;
}
