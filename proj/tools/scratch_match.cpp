// temporary: match quality vs ground-truth flow
#include <cstdio>
#include <algorithm>
#include "poseflow/bench.hpp"
#include "poseflow/refiner.hpp"
#include "poseflow/rng.hpp"
#include "poseflow/synthetic.hpp"

using namespace poseflow;

int main(int argc, char** argv) {
  int level = argc > 1 ? std::atoi(argv[1]) : 15;
  int shape_ix = argc > 2 ? std::atoi(argv[2]) : 1;
  GenParams params;
  params.shape = static_cast<ShapeKind>(shape_ix);
  SyntheticScene scene = gen_scene(params, 9001);
  CounterRng rng(9001, "probe");
  Pose init = perturb_pose_level(scene.gt, level, rng.unit_vector(), rng.unit_vector());

  RefineConfig cfg;
  Intrinsics kc = crop_camera(scene.mesh, init, scene.camera, cfg.crop_size, cfg.crop_pad);
  GrayImage rgb_c; DepthMap depth_c;
  resample_view(scene.rgb, scene.depth, scene.camera, kc, rgb_c, depth_c);
  RenderOutput ref_full = render(scene.mesh, init, scene.camera);
  RenderOutput ref;
  resample_view(ref_full.intensity, ref_full.depth, scene.camera, kc, ref.intensity, ref.depth);
  ref.mask = Mask(kc.height, kc.width, 0);
  for (int r = 0; r < kc.height; ++r) for (int c = 0; c < kc.width; ++c)
    if (ref.depth.at(r, c) > 0) ref.mask.at(r, c) = 1;

  FeatureMap f1, f2;
  if (argc > 3 && std::atoi(argv[3]) == 1) {
    f1 = extract_intensity_features(ref.intensity);
    f2 = extract_intensity_features(rgb_c);
  } else if (argc > 3 && std::atoi(argv[3]) == 2) {
    f1 = extract_geometry_features(ref.depth, kc);
    f2 = extract_geometry_features(depth_c, kc);
  } else {
    f1 = extract_features(ref.intensity, ref.depth, kc);
    f2 = extract_features(rgb_c, depth_c, kc);
  }
  CorrelationPyramid pyr = build_volume(f1, f2, cfg.pyramid_levels);
  FlowField zero(f1.rows, f1.cols);
  LookupWindow win = lookup(pyr, zero, cfg.lookup_radius);
  MatchResult match = match_correspondences(win, cfg);

  FlowField truth = pose_induced_flow(ref, init, scene.gt, kc);
  FlowField truth_grid = downsample_flow(truth, kFeatureStride);

  std::vector<double> errs_d, errs_p;
  int n_valid = 0, n_true = 0;
  for (int i = 0; i < match.flow.rows; ++i) {
    for (int j = 0; j < match.flow.cols; ++j) {
      if (!truth_grid.valid.at(i, j)) continue;
      ++n_true;
      if (!match.flow.valid.at(i, j)) continue;
      ++n_valid;
      size_t idx = match.flow.idx(i, j);
      double du = match.flow.du[idx] - truth_grid.du[idx];
      double dv = match.flow.dv[idx] - truth_grid.dv[idx];
      double e = std::hypot(du, dv);
      if (match.distinct.at(i, j) > 0.05) errs_d.push_back(e);
      else errs_p.push_back(e);
    }
  }
  auto stats = [](std::vector<double> v, const char* name) {
    if (v.empty()) { printf("%s: none\n", name); return; }
    std::sort(v.begin(), v.end());
    printf("%s: n=%zu p25=%.2f med=%.2f p75=%.2f p90=%.2f px\n", name, v.size(),
           v[v.size()/4], v[v.size()/2], v[3*v.size()/4], v[9*v.size()/10]);
  };
  printf("level=%d shape=%s: true cells=%d matched=%d, |gt flow| med=%.1f px\n",
         level, scene.mesh_name.c_str(), n_true, n_valid, 0.0);
  std::vector<double> mags;
  for (size_t i = 0; i < truth_grid.du.size(); ++i)
    if (truth_grid.valid.raw()[i]) mags.push_back(std::hypot(truth_grid.du[i], truth_grid.dv[i]));
  std::sort(mags.begin(), mags.end());
  printf("gt flow med=%.1f p90=%.1f px\n", mags[mags.size()/2], mags[9*mags.size()/10]);
  stats(errs_d, "distinct");
  stats(errs_p, "plateau ");
  for (double thr : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    std::vector<double> sel;
    for (int i = 0; i < match.flow.rows; ++i)
      for (int j = 0; j < match.flow.cols; ++j) {
        if (!truth_grid.valid.at(i, j) || !match.flow.valid.at(i, j)) continue;
        if (match.distinct.at(i, j) < thr) continue;
        size_t idx = match.flow.idx(i, j);
        sel.push_back(std::hypot(match.flow.du[idx] - truth_grid.du[idx],
                                 match.flow.dv[idx] - truth_grid.dv[idx]));
      }
    char name[64];
    std::snprintf(name, sizeof(name), "d>=%.2f ", thr);
    stats(sel, name);
  }
  return 0;
}
