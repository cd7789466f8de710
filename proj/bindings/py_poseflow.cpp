#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "poseflow/bench.hpp"
#include "poseflow/bop_io.hpp"
#include "poseflow/metrics.hpp"
#include "poseflow/objective.hpp"
#include "poseflow/refiner.hpp"
#include "poseflow/synthetic.hpp"

namespace py = pybind11;
using namespace poseflow;

namespace {

// numpy <-> Grid adapters

template <typename T>
py::array_t<T> grid_to_numpy(const Grid<T>& g) {
  py::array_t<T> out({g.rows(), g.cols()});
  std::copy(g.data(), g.data() + g.size(), out.mutable_data());
  return out;
}

template <typename T>
Grid<T> numpy_to_grid(const py::array_t<T, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 2) throw Error(ErrorCode::DimensionMismatch, "expected a 2-d array");
  Grid<T> g(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
  std::copy(arr.data(), arr.data() + arr.size(), g.data());
  return g;
}

py::array_t<double> flow_to_numpy(const FlowField& f) {
  py::array_t<double> out({f.rows, f.cols, 3});
  auto view = out.mutable_unchecked<3>();
  for (int r = 0; r < f.rows; ++r)
    for (int c = 0; c < f.cols; ++c) {
      size_t i = f.idx(r, c);
      view(r, c, 0) = f.du[i];
      view(r, c, 1) = f.dv[i];
      view(r, c, 2) = f.dz[i];
    }
  return out;
}

}  // namespace

PYBIND11_MODULE(_poseflow, m) {
  m.doc() = "6D object pose refinement via dense SE(3) scene-flow matching";
  m.attr("__version__") = "0.1.0";

  py::register_exception<Error>(m, "PoseflowError");

  py::class_<Pose>(m, "Pose")
      .def(py::init<>())
      .def(py::init([](const Eigen::Matrix3d& R, const Eigen::Vector3d& t) {
             Pose p;
             p.R = R;
             p.t = t;
             return p;
           }),
           py::arg("R"), py::arg("t"))
      .def_readwrite("R", &Pose::R)
      .def_readwrite("t", &Pose::t)
      .def("apply", &Pose::apply)
      .def("inverse", &Pose::inverse)
      .def("__repr__", [](const Pose& p) {
        return "Pose(t=[" + std::to_string(p.t.x()) + ", " + std::to_string(p.t.y()) + ", " +
               std::to_string(p.t.z()) + "] mm)";
      });

  py::class_<Intrinsics>(m, "Intrinsics")
      .def(py::init([](double fx, double fy, double cx, double cy, int width, int height) {
             return Intrinsics{fx, fy, cx, cy, width, height};
           }),
           py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("width"),
           py::arg("height"))
      .def_readwrite("fx", &Intrinsics::fx)
      .def_readwrite("fy", &Intrinsics::fy)
      .def_readwrite("cx", &Intrinsics::cx)
      .def_readwrite("cy", &Intrinsics::cy)
      .def_readwrite("width", &Intrinsics::width)
      .def_readwrite("height", &Intrinsics::height);

  m.def("compose", &compose);
  m.def("pose_residual", &pose_residual);
  m.def("apply_residual", &apply_residual);
  m.def("rotation_angle_deg", &rotation_angle_deg);
  m.def(
      "kabsch",
      [](const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& dst,
         const std::vector<double>& w) { return kabsch(src, dst, w); },
      py::arg("src"), py::arg("dst"), py::arg("weights") = std::vector<double>{});
  m.def("exp_twist", [](const Eigen::Vector3d& tau, const Eigen::Vector3d& theta) {
    return exp_twist(Twist{tau, theta});
  });
  m.def("log_pose", [](const Pose& p) {
    Twist x = log_pose(p);
    return py::make_tuple(x.tau, x.theta);
  });

  py::class_<TriMesh>(m, "TriMesh")
      .def_readonly("diameter", &TriMesh::diameter)
      .def_property_readonly("num_vertices", [](const TriMesh& mesh) { return mesh.vertices.size(); })
      .def_property_readonly("num_faces", [](const TriMesh& mesh) { return mesh.faces.size(); });

  m.def("load_mesh", [](const std::string& path) { return load_mesh(path); });
  m.def("make_cube", &make_cube, py::arg("edge_mm"));
  m.def("make_icosphere", &make_icosphere, py::arg("radius_mm"), py::arg("subdivisions") = 2);
  m.def("make_cylinder", &make_cylinder, py::arg("radius_mm"), py::arg("height_mm"),
        py::arg("segments") = 24);

  m.def(
      "render",
      [](const TriMesh& mesh, const Pose& pose, const Intrinsics& k) {
        RenderOutput out = render(mesh, pose, k);
        return py::make_tuple(grid_to_numpy(out.depth), grid_to_numpy(out.intensity),
                              grid_to_numpy(out.mask));
      },
      "Rasterizes the mesh; returns (depth_mm, intensity, mask) arrays.");
  m.def("project", &project);

  py::class_<RefineConfig>(m, "RefineConfig")
      .def(py::init<>())
      .def_readwrite("iterations", &RefineConfig::iterations)
      .def_readwrite("lookup_radius", &RefineConfig::lookup_radius)
      .def_readwrite("pyramid_levels", &RefineConfig::pyramid_levels)
      .def_readwrite("huber_delta_mm", &RefineConfig::huber_delta_mm)
      .def_readwrite("irls_iters", &RefineConfig::irls_iters)
      .def_readwrite("patch", &RefineConfig::patch)
      .def_readwrite("seed", &RefineConfig::seed)
      .def_readwrite("crop_size", &RefineConfig::crop_size)
      .def_readwrite("crop_pad", &RefineConfig::crop_pad)
      .def_property(
          "vote",
          [](const RefineConfig& c) { return c.vote == VoteMode::Ransac ? "ransac" : "irls"; },
          [](RefineConfig& c, const std::string& v) {
            if (v == "ransac") c.vote = VoteMode::Ransac;
            else if (v == "irls") c.vote = VoteMode::IrlsHuber;
            else throw Error(ErrorCode::ParseError, "vote must be irls|ransac");
          });

  m.def(
      "refine",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& rgb,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& depth,
         const TriMesh& mesh, const Intrinsics& k, const Pose& p_init, const RefineConfig& cfg) {
        RefineTrace trace = refine(numpy_to_grid(rgb), numpy_to_grid(depth), mesh, k, p_init, cfg);
        py::list poses;
        py::list diags;
        for (const auto& step : trace.steps) {
          poses.append(step.pose);
          py::dict d;
          d["skipped"] = step.diag.skipped;
          d["inlier_fraction"] = step.diag.inlier_fraction;
          d["valid_cells"] = step.diag.valid_cells;
          d["mean_peak_corr"] = step.diag.mean_peak_corr;
          diags.append(d);
        }
        py::dict out;
        out["pose"] = trace.final_pose();
        out["poses"] = poses;
        out["diagnostics"] = diags;
        out["final_flow"] = flow_to_numpy(trace.steps.back().flow);
        return out;
      },
      py::arg("rgb"), py::arg("depth"), py::arg("mesh"), py::arg("intrinsics"),
      py::arg("init_pose"), py::arg("config") = RefineConfig{},
      "Runs the recurrent refinement loop; returns a dict with the final pose, "
      "per-iteration poses and diagnostics.");

  py::class_<SymmetrySet>(m, "SymmetrySet")
      .def(py::init<>())
      .def("add", &SymmetrySet::add);

  m.def(
      "vsd",
      [](const Pose& est, const Pose& gt, const TriMesh& mesh,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& scene_depth,
         const Intrinsics& k, double tau, double delta) {
        return vsd(est, gt, mesh, numpy_to_grid(scene_depth), k, tau, delta);
      },
      py::arg("est"), py::arg("gt"), py::arg("mesh"), py::arg("scene_depth"), py::arg("intrinsics"),
      py::arg("tau_mm"), py::arg("delta_mm") = 15.0);
  m.def("mssd", &mssd);
  m.def("mspd", &mspd);
  m.def(
      "pose_loss",
      [](const Pose& pred, const Pose& gt, const std::vector<Eigen::Vector3d>& pts, bool l2) {
        return pose_loss(pred, gt, pts, l2 ? PointDistance::L2 : PointDistance::L1);
      },
      py::arg("pred"), py::arg("gt"), py::arg("points"), py::arg("l2") = false);
  m.def("total_loss",
        [](const std::vector<double>& flow, const std::vector<double>& pose, double gamma,
           double alpha, int n) { return total_loss(flow, pose, gamma, alpha, n).total; },
        py::arg("flow_losses"), py::arg("pose_losses"), py::arg("gamma") = kLossGamma,
        py::arg("alpha") = kLossAlpha, py::arg("n") = kLossIterations);

  py::class_<SyntheticScene>(m, "SyntheticScene")
      .def_readonly("gt", &SyntheticScene::gt)
      .def_readonly("camera", &SyntheticScene::camera)
      .def_readonly("mesh", &SyntheticScene::mesh)
      .def_property_readonly("rgb", [](const SyntheticScene& s) { return grid_to_numpy(s.rgb); })
      .def_property_readonly("depth",
                             [](const SyntheticScene& s) { return grid_to_numpy(s.depth); });

  m.def(
      "gen_scene",
      [](const std::string& shape, std::uint64_t seed, double occlusion, bool sensor_noise) {
        GenParams params;
        params.shape = shape_from_name(shape);
        params.occluder_fraction = occlusion;
        if (!sensor_noise) params.noise = SensorNoise::none();
        return gen_scene(params, seed);
      },
      py::arg("shape"), py::arg("seed"), py::arg("occlusion") = 0.0,
      py::arg("sensor_noise") = true);
  m.def(
      "perturb_pose_level",
      [](const Pose& gt, double level, std::uint64_t seed) {
        NoiseSpec spec;
        spec.mode = NoiseSpec::Mode::Level;
        spec.level = level;
        spec.seed = seed;
        return perturb_pose(gt, spec);
      },
      py::arg("gt"), py::arg("level"), py::arg("seed"));
}
