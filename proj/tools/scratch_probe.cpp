// temporary diagnostics driver; not installed
#include <cstdio>

#include "poseflow/bench.hpp"
#include "poseflow/objective.hpp"
#include "poseflow/refiner.hpp"
#include "poseflow/rng.hpp"
#include "poseflow/synthetic.hpp"

using namespace poseflow;

int main(int argc, char** argv) {
  int level = argc > 1 ? std::atoi(argv[1]) : 15;
  int nscenes = argc > 2 ? std::atoi(argv[2]) : 6;
  int shape_ix = argc > 3 ? std::atoi(argv[3]) : -1;

  for (int s = 0; s < nscenes; ++s) {
    GenParams params;
    params.shape = static_cast<ShapeKind>(shape_ix >= 0 ? shape_ix : s % 3);
    if (level == 0) params.noise = SensorNoise::none();
    SyntheticScene scene = gen_scene(params, 9000 + s);

    Pose init = scene.gt;
    if (level > 0) {
      CounterRng rng(9000 + s, "probe");
      init = perturb_pose_level(scene.gt, level, rng.unit_vector(), rng.unit_vector());
    }
    RefineConfig cfg;
    cfg.seed = s;
    printf("scene %d shape=%s diam=%.0f z=%.0f\n", s, scene.mesh_name.c_str(),
           scene.mesh.diameter, scene.gt.t.z());
    try {
      RefineTrace tr = refine(scene.rgb, scene.depth, scene.mesh, scene.camera, init, cfg);
      for (size_t k = 0; k < tr.steps.size(); ++k) {
        const auto& st = tr.steps[k];
        printf(
            "  k=%zu rot=%7.3f deg trans=%7.3f mm cells=%4d inl=%.2f peak=%.2f disp=%6.2f/%5.2f%s\n",
            k, rotation_angle_deg(st.pose.R, scene.gt.R), (st.pose.t - scene.gt.t).norm(),
            st.diag.valid_cells, st.diag.inlier_fraction, st.diag.mean_peak_corr,
            st.diag.dispersion_t_mm, st.diag.dispersion_r_deg, st.diag.skipped ? " SKIP" : "");
      }
    } catch (const Error& e) {
      printf("  error: %s\n", e.what());
    }
  }
  return 0;
}
