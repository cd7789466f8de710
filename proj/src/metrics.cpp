#include "poseflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace poseflow {

namespace {

/// Shared visibility + per-pixel depth comparison for a tau grid.
std::vector<double> vsd_impl(const DepthMap& est, const DepthMap& gt,
                             const DepthMap& scene_depth, const std::vector<double>& taus,
                             double delta) {
  const int rows = est.rows(), cols = est.cols();
  std::vector<size_t> err(taus.size(), 0);
  size_t union_px = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double de = est.at(r, c);
      double dg = gt.at(r, c);
      bool vis_e = de > 0 && de <= scene_depth.at(r, c) + delta;
      bool vis_g = dg > 0 && dg <= scene_depth.at(r, c) + delta;
      if (!vis_e && !vis_g) continue;
      ++union_px;
      if (!vis_e || !vis_g) {
        for (size_t t = 0; t < taus.size(); ++t) ++err[t];
      } else {
        double diff = std::abs(de - dg);
        for (size_t t = 0; t < taus.size(); ++t)
          if (diff > taus[t]) ++err[t];
      }
    }
  }
  if (union_px == 0) throw Error(ErrorCode::EmptyUnion, "both visibility masks are empty");
  std::vector<double> out(taus.size());
  for (size_t t = 0; t < taus.size(); ++t)
    out[t] = static_cast<double>(err[t]) / static_cast<double>(union_px);
  return out;
}

std::vector<Eigen::Vector3d> metric_vertices(const TriMesh& mesh, int max_vertices) {
  if (static_cast<int>(mesh.vertices.size()) <= max_vertices) return mesh.vertices;
  return farthest_point_sample(mesh.vertices, max_vertices, 0);
}

}  // namespace

double vsd(const Pose& p_est, const Pose& p_gt, const TriMesh& mesh, const DepthMap& scene_depth,
           const Intrinsics& k, double tau_mm, double delta_mm) {
  return vsd_curve(p_est, p_gt, mesh, scene_depth, k, {tau_mm}, delta_mm)[0];
}

std::vector<double> vsd_curve(const Pose& p_est, const Pose& p_gt, const TriMesh& mesh,
                              const DepthMap& scene_depth, const Intrinsics& k,
                              const std::vector<double>& taus_mm, double delta_mm) {
  if (!scene_depth.same_shape(k.height, k.width))
    throw Error(ErrorCode::DimensionMismatch, "scene depth does not match intrinsics");
  RenderOutput est = render(mesh, p_est, k);
  RenderOutput gt = render(mesh, p_gt, k);
  return vsd_impl(est.depth, gt.depth, scene_depth, taus_mm, delta_mm);
}

double vsd_from_depths(const DepthMap& est_depth, const DepthMap& gt_depth,
                       const DepthMap& scene_depth, double tau_mm, double delta_mm) {
  if (!est_depth.same_shape(gt_depth.rows(), gt_depth.cols()) ||
      !est_depth.same_shape(scene_depth.rows(), scene_depth.cols()))
    throw Error(ErrorCode::DimensionMismatch, "depth maps differ in dims");
  return vsd_impl(est_depth, gt_depth, scene_depth, {tau_mm}, delta_mm)[0];
}

double mssd(const Pose& p_est, const Pose& p_gt, const TriMesh& mesh, const SymmetrySet& syms) {
  auto pts = metric_vertices(mesh, 10000);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : syms.transforms) {
    Pose gt_s = compose(p_gt, s);
    double worst = 0;
    for (const auto& x : pts)
      worst = std::max(worst, (p_est.apply(x) - gt_s.apply(x)).norm());
    best = std::min(best, worst);
  }
  return best;
}

double mspd(const Pose& p_est, const Pose& p_gt, const TriMesh& mesh, const SymmetrySet& syms,
            const Intrinsics& k) {
  auto pts = metric_vertices(mesh, 10000);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : syms.transforms) {
    Pose gt_s = compose(p_gt, s);
    double worst = 0;
    for (const auto& x : pts) {
      Eigen::Vector3d pe = project(p_est.apply(x), k);
      Eigen::Vector3d pg = project(gt_s.apply(x), k);
      worst = std::max(worst, std::hypot(pe.x() - pg.x(), pe.y() - pg.y()));
    }
    best = std::min(best, worst);
  }
  return best;
}

std::vector<double> vsd_tau_fractions() {
  std::vector<double> taus;
  for (int i = 1; i <= 10; ++i) taus.push_back(0.05 * i);
  return taus;
}

MetricReport average_recall(const std::vector<SampleErrors>& samples) {
  if (samples.empty()) throw Error(ErrorCode::EmptyDataset, "no samples to aggregate");
  const auto taus = vsd_tau_fractions();

  // VSD: recall over the tau grid x correctness thresholds 0.05..0.5
  size_t vsd_hits = 0, vsd_total = 0;
  for (const auto& s : samples) {
    if (s.vsd.size() != taus.size())
      throw Error(ErrorCode::LengthMismatch, "vsd errors do not match the tau grid");
    for (size_t t = 0; t < taus.size(); ++t) {
      for (int th = 1; th <= 10; ++th) {
        ++vsd_total;
        if (s.vsd[t] < 0.05 * th) ++vsd_hits;
      }
    }
  }

  // MSSD: thresholds 5%..50% of the object diameter
  size_t mssd_hits = 0, mssd_total = 0;
  // MSPD: thresholds (5..50) * r px, r = image_width / 640
  size_t mspd_hits = 0, mspd_total = 0;
  for (const auto& s : samples) {
    for (int th = 1; th <= 10; ++th) {
      ++mssd_total;
      if (s.mssd_mm < 0.05 * th * s.diameter_mm) ++mssd_hits;
      ++mspd_total;
      double r = s.image_width / 640.0;
      if (s.mspd_px < 5.0 * th * r) ++mspd_hits;
    }
  }

  MetricReport rep;
  rep.samples = samples.size();
  rep.recall_vsd = static_cast<double>(vsd_hits) / static_cast<double>(vsd_total);
  rep.recall_mssd = static_cast<double>(mssd_hits) / static_cast<double>(mssd_total);
  rep.recall_mspd = static_cast<double>(mspd_hits) / static_cast<double>(mspd_total);
  rep.average_recall = (rep.recall_vsd + rep.recall_mssd + rep.recall_mspd) / 3.0;
  return rep;
}

SampleErrors compute_sample_errors(const Pose& p_est, const Pose& p_gt, const TriMesh& mesh,
                                   const SymmetrySet& syms, const DepthMap& scene_depth,
                                   const Intrinsics& k, int max_vertices) {
  (void)max_vertices;
  SampleErrors out;
  out.diameter_mm = mesh.diameter;
  out.image_width = k.width;
  std::vector<double> taus;
  for (double f : vsd_tau_fractions()) taus.push_back(f * mesh.diameter);
  out.vsd = vsd_curve(p_est, p_gt, mesh, scene_depth, k, taus);
  out.mssd_mm = mssd(p_est, p_gt, mesh, syms);
  out.mspd_px = mspd(p_est, p_gt, mesh, syms, k);
  return out;
}

std::vector<int> improvement_histogram(const std::vector<double>& init_err,
                                       const std::vector<double>& refined_err, int bins) {
  if (init_err.size() != refined_err.size())
    throw Error(ErrorCode::LengthMismatch, "error vectors differ in length");
  constexpr double kEps = 1e-6;
  std::vector<int> hist(bins, 0);
  for (size_t i = 0; i < init_err.size(); ++i) {
    double rel = (init_err[i] - refined_err[i]) / std::max(init_err[i], kEps);
    rel = std::clamp(rel, -1.0, 1.0);
    int b = std::min(bins - 1, static_cast<int>((rel + 1.0) * 0.5 * bins));
    ++hist[b];
  }
  return hist;
}

std::string metric_report_json(const MetricReport& report) {
  std::ostringstream os;
  os.precision(12);
  os << "{\n";
  os << "  \"samples\": " << report.samples << ",\n";
  os << "  \"recall_vsd\": " << report.recall_vsd << ",\n";
  os << "  \"recall_mssd\": " << report.recall_mssd << ",\n";
  os << "  \"recall_mspd\": " << report.recall_mspd << ",\n";
  os << "  \"average_recall\": " << report.average_recall << "\n";
  os << "}\n";
  return os.str();
}

void write_sample_errors_csv(const std::string& path, const std::vector<SampleErrors>& samples) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  out << "sample,mssd_mm,mspd_px,diameter_mm";
  const auto taus = vsd_tau_fractions();
  for (double f : taus) out << ",vsd_tau" << static_cast<int>(f * 100 + 0.5);
  out << "\n";
  out.precision(9);
  for (size_t i = 0; i < samples.size(); ++i) {
    out << i << "," << samples[i].mssd_mm << "," << samples[i].mspd_px << ","
        << samples[i].diameter_mm;
    for (double v : samples[i].vsd) out << "," << v;
    out << "\n";
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

}  // namespace poseflow
