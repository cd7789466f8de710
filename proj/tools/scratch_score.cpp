// temporary: intensity-only volume score landscape over spin
#include <cstdio>
#include "poseflow/refiner.hpp"
#include "poseflow/rng.hpp"
#include "poseflow/synthetic.hpp"

using namespace poseflow;

int main(int argc, char** argv) {
  int shape_ix = argc > 1 ? std::atoi(argv[1]) : 1;
  int seed_arg = argc > 4 ? std::atoi(argv[4]) : 9001;
  int axis_ix = argc > 2 ? std::atoi(argv[2]) : 2;
  GenParams params;
  params.shape = static_cast<ShapeKind>(shape_ix);
  SyntheticScene scene = gen_scene(params, seed_arg);
  Pose init = scene.gt;
  double noise_level = argc > 3 ? std::atof(argv[3]) : 0;
  if (noise_level > 0) {
    CounterRng prng(seed_arg, "probe");
    init = perturb_pose_level(scene.gt, noise_level, prng.unit_vector(), prng.unit_vector());
  }

  RefineConfig cfg;
  Intrinsics kc = crop_camera(scene.mesh, init, scene.camera, cfg.crop_size, cfg.crop_pad);
  GrayImage rgb_c; DepthMap depth_c;
  resample_view(scene.rgb, scene.depth, scene.camera, kc, rgb_c, depth_c);
  RenderOutput ref_full = render(scene.mesh, init, scene.camera);
  RenderOutput ref;
  resample_view(ref_full.intensity, ref_full.depth, scene.camera, kc, ref.intensity, ref.depth);

  FeatureMap fi1 = extract_intensity_features(ref.intensity);
  FeatureMap fi2 = extract_intensity_features(rgb_c);
  FeatureMap fg1 = extract_features(ref.intensity, ref.depth, kc);
  FeatureMap fg2 = extract_features(rgb_c, depth_c, kc);
  CorrelationPyramid pyr_i = build_volume(fi1, fi2, cfg.pyramid_levels);
  CorrelationPyramid pyr_f = build_volume(fg1, fg2, cfg.pyramid_levels);
  FlowField zero(fi1.rows, fi1.cols);
  LookupWindow win_i = lookup(pyr_i, zero, cfg.lookup_radius);
  LookupWindow win_f = lookup(pyr_f, zero, cfg.lookup_radius);

  PointCloud cloud = grid_cloud(ref.depth, kc, kFeatureStride);
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  int n = 0;
  for (int i = 0; i < cloud.rows * cloud.cols; ++i)
    if (cloud.valid[i]) { centroid += cloud.points[i]; ++n; }
  centroid /= n;

  Eigen::Vector3d axis = axis_ix == 0 ? Eigen::Vector3d::UnitX()
                        : axis_ix == 1 ? Eigen::Vector3d::UnitY() : Eigen::Vector3d::UnitZ();
  if (axis_ix == 3) axis = (scene.gt.R * Eigen::Vector3d::UnitZ()).normalized();  // object axis

  // manual scoring identical to volume_score but selectable window
  auto score = [&](const LookupWindow& win, const Pose& g, int level) {
    const int r = win.radius, w = win.window();
    const double scale = 1.0 / (1 << level);
    const double align = ((1 << level) - 1) * 0.5;
    double s = 0;
    for (int i = 0; i < win.rows; ++i)
      for (int j = 0; j < win.cols; ++j) {
        if (!cloud.valid[static_cast<size_t>(i) * win.cols + j]) continue;
        Eigen::Vector3d y = g.apply(cloud.points[static_cast<size_t>(i) * win.cols + j]);
        if (y.z() <= 0) continue;
        double u = kc.fx * y.x() / y.z() + kc.cx;
        double v = kc.fy * y.y() / y.z() + kc.cy;
        double sx = (u - 4.0) / 8.0 - win.center_x(i, j);
        double sy = (v - 4.0) / 8.0 - win.center_y(i, j);
        if (std::abs(sx) > r + 0.5 || std::abs(sy) > r + 0.5) continue;
        double x = std::clamp((sx - align) * scale + r, 0.0, w - 1.0);
        double yy = std::clamp((sy - align) * scale + r, 0.0, w - 1.0);
        int x0 = std::min(static_cast<int>(x), w - 2);
        int y0 = std::min(static_cast<int>(yy), w - 2);
        double fx = x - x0, fy = yy - y0;
        auto val = [&](int a, int b) { return (double)win.at(i, j, level, a - r, b - r); };
        s += (1 - fy) * ((1 - fx) * val(y0, x0) + fx * val(y0, x0 + 1)) +
             fy * ((1 - fx) * val(y0 + 1, x0) + fx * val(y0 + 1, x0 + 1));
      }
    return s;
  };

  Pose g_true = pose_residual(init, scene.gt);
  printf("identity scores: int_L0=%.2f full_L0=%.2f | true scores: int_L0=%.2f full_L0=%.2f\n",
         score(win_i, Pose::identity(), 0), score(win_f, Pose::identity(), 0),
         score(win_i, g_true, 0), score(win_f, g_true, 0));
  printf("deg(from true) | int_L0 int_L1 | full_L0 full_L1\n");
  for (int d2 = -12; d2 <= 12; d2 += 1) { int d = d2;
    Eigen::Matrix3d rot = Eigen::AngleAxisd(d * M_PI / 180.0, axis).toRotationMatrix();
    Pose g;
    Eigen::Vector3d c_true = g_true.apply(centroid);
    g.R = rot * g_true.R;
    g.t = c_true - g.R * centroid;
    printf("%4d | %8.2f %8.2f | %8.2f %8.2f\n", d, score(win_i, g, 0), score(win_i, g, 1),
           score(win_f, g, 0), score(win_f, g, 1));
  }
  return 0;
}
