#include "poseflow/refiner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>

#include <Eigen/Eigenvalues>

#include "poseflow/rng.hpp"

namespace poseflow {

namespace {

constexpr double kTwistTauScale = 0.01;  // mm -> GRU input units

void check_config(const RefineConfig& cfg) {
  if (cfg.iterations < 1) throw Error(ErrorCode::ParseError, "config: iterations must be >= 1");
  if (cfg.patch < 3 || cfg.patch % 2 == 0)
    throw Error(ErrorCode::ParseError, "config: patch window must be odd and >= 3");
  if (cfg.backend == Backend::Neural && !cfg.weights)
    throw Error(ErrorCode::ShapeMismatch, "neural backend requires loaded weights");
}

// bilinear samples and grid anchors that straddle a depth discontinuity
// produce phantom points between surfaces; such pairs are rejected
constexpr double kDepthEdgeMm = 15.0;

/// Bilinear 3D point over valid cloud entries at continuous (u, v).
bool sample_cloud(const PointCloud& cloud, double u, double v, Eigen::Vector3d& out) {
  double x = u - 0.5, y = v - 0.5;
  int c0 = static_cast<int>(std::floor(x));
  int r0 = static_cast<int>(std::floor(y));
  double fx = x - c0, fy = y - r0;
  double wsum = 0;
  double zmin = 1e30, zmax = -1e30;
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  for (int dr = 0; dr <= 1; ++dr) {
    for (int dc = 0; dc <= 1; ++dc) {
      int r = r0 + dr, c = c0 + dc;
      if (r < 0 || r >= cloud.rows || c < 0 || c >= cloud.cols) continue;
      if (!cloud.is_valid(r, c)) continue;
      double w = (dr == 0 ? 1 - fy : fy) * (dc == 0 ? 1 - fx : fx);
      const Eigen::Vector3d& p = cloud.at(r, c);
      wsum += w;
      acc += w * p;
      zmin = std::min(zmin, p.z());
      zmax = std::max(zmax, p.z());
    }
  }
  if (wsum < 0.99) return false;  // missing support: silhouette or dropout
  if (zmax - zmin > kDepthEdgeMm) return false;
  out = acc / wsum;
  return true;
}

struct PairField {
  int rows = 0, cols = 0;
  std::vector<Eigen::Vector3d> src, tgt;
  std::vector<std::uint8_t> valid;
};

// matches on correlation plateaus slide freely; they keep a small weight so
// pure-plateau patches still fit, while any distinct structure dominates
constexpr double kDistinctFloor = 0.02;

/// Matched 3D pairs for every grid cell of a correspondence flow (values in
/// full-resolution px on the source grid).
PairField pairs_from_flow(const FlowField& flow, const PointCloud& cloud_src,
                          const PointCloud& cloud_tgt) {
  const int rows = flow.rows, cols = flow.cols;
  const int stride = cloud_tgt.cols / cols;
  const double half = stride * 0.5;
  PairField pairs;
  pairs.rows = rows;
  pairs.cols = cols;
  pairs.src.assign(static_cast<size_t>(rows) * cols, Eigen::Vector3d::Zero());
  pairs.tgt = pairs.src;
  pairs.valid.assign(pairs.src.size(), 0);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      size_t idx = static_cast<size_t>(i) * cols + j;
      if (!flow.valid.at(i, j)) continue;
      if (!cloud_src.is_valid(i, j)) continue;
      double u = stride * j + half + flow.du[idx];
      double v = stride * i + half + flow.dv[idx];
      Eigen::Vector3d tgt;
      if (!sample_cloud(cloud_tgt, u, v, tgt)) continue;
      pairs.src[idx] = cloud_src.at(i, j);
      pairs.tgt[idx] = tgt;
      pairs.valid[idx] = 1;
    }
  }
  return pairs;
}

double huber_weight(double r, double delta) { return r <= delta ? 1.0 : delta / r; }

}  // namespace

MatchResult match_correspondences(const LookupWindow& win, const RefineConfig& cfg) {
  MatchResult out;
  out.flow = FlowField(win.rows, win.cols);
  out.peak = Grid<double>(win.rows, win.cols, 0.0);
  out.distinct = Grid<double>(win.rows, win.cols, 0.0);
  const int r = win.radius;
  const int w = win.window();
  double peak_sum = 0;

  // pooled levels vote on the same level-0 offset after rescaling: coarse
  // context disambiguates repetitive and low-texture regions
  std::vector<double> combined(static_cast<size_t>(w) * w);
  // stack coords for a level-0 target offset d: pooled cell q covers level-0
  // targets centered at 2^l q + (2^l - 1)/2, and the stack itself samples at
  // center/2^l + s, so s = (d - (2^l - 1)/2) / 2^l
  auto stack_sample = [&](int i, int j, int lev, double dy, double dx) {
    double x = std::clamp(dx + r, 0.0, w - 1.0);
    double y = std::clamp(dy + r, 0.0, w - 1.0);
    int x0 = std::min(static_cast<int>(x), w - 2 >= 0 ? w - 2 : 0);
    int y0 = std::min(static_cast<int>(y), w - 2 >= 0 ? w - 2 : 0);
    double fx = x - x0, fy = y - y0;
    auto v = [&](int yy, int xx) {
      return static_cast<double>(win.at(i, j, lev, yy - r, xx - r));
    };
    return (1 - fy) * ((1 - fx) * v(y0, x0) + fx * v(y0, x0 + 1)) +
           fy * ((1 - fx) * v(y0 + 1, x0) + fx * v(y0 + 1, x0 + 1));
  };

  for (int i = 0; i < win.rows; ++i) {
    for (int j = 0; j < win.cols; ++j) {
      double peak0 = -2.0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
          peak0 = std::max(peak0, static_cast<double>(win.at(i, j, 0, dy, dx)));
      out.peak.at(i, j) = peak0;
      peak_sum += peak0;
      if (peak0 < cfg.corr_gate) continue;

      double peak = -2.0;
      int py = 0, px = 0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          // fine level dominates; coarse levels tie-break plateaus
          double s = 0, wsum = 0;
          for (int lev = 0; lev < win.levels; ++lev) {
            double scale = 1.0 / static_cast<double>(1 << lev);
            double align = ((1 << lev) - 1) * 0.5;
            double lw = scale;
            s += lw * stack_sample(i, j, lev, (dy - align) * scale, (dx - align) * scale);
            wsum += lw;
          }
          s /= wsum;
          combined[static_cast<size_t>(dy + r) * w + (dx + r)] = s;
          if (s > peak) {
            peak = s;
            py = dy;
            px = dx;
          }
        }
      }

      // peak-to-sidelobe margin: correlation plateaus (aperture problem)
      // score near zero regardless of the peak value
      double sidelobe = -2.0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
          if (std::abs(dy - py) > 1 || std::abs(dx - px) > 1)
            sidelobe =
                std::max(sidelobe, combined[static_cast<size_t>(dy + r) * w + (dx + r)]);
      // peaks on the window boundary are border-clamp artifacts and cannot
      // be localized; such cells fall back to the guided association
      double distinct = sidelobe > -2.0 ? std::max(0.0, peak - sidelobe) : peak;
      if (std::abs(py) >= r || std::abs(px) >= r) distinct = 0;
      out.distinct.at(i, j) = distinct;

      double ox = 0, oy = 0;
      if (distinct >= kDistinctFloor) {
        // sub-cell soft-argmax on the 3x3 neighborhood of the peak; the full
        // window is too flat on weakly textured surfaces and drags the
        // estimate toward the window centroid
        double wsum = 0;
        for (int dy = std::max(-r, py - 1); dy <= std::min(r, py + 1); ++dy) {
          for (int dx = std::max(-r, px - 1); dx <= std::min(r, px + 1); ++dx) {
            double wgt = std::exp(
                (combined[static_cast<size_t>(dy + r) * w + (dx + r)] - peak) /
                cfg.softargmax_temp);
            wsum += wgt;
            ox += wgt * dx;
            oy += wgt * dy;
          }
        }
        ox /= wsum;
        oy /= wsum;
      }
      // indistinct cells keep the guided association (offset zero): the
      // observed surface under the warped position still constrains depth
      // and shape, projective-ICP style, without tangential noise
      size_t idx = out.flow.idx(i, j);
      // absolute match = window center + offset, stored in full-res pixels
      out.flow.du[idx] = (win.center_x(i, j) + ox - j) * kFeatureStride;
      out.flow.dv[idx] = (win.center_y(i, j) + oy - i) * kFeatureStride;
      out.flow.valid.at(i, j) = 1;
    }
  }
  out.mean_peak = win.rows * win.cols > 0 ? peak_sum / (win.rows * win.cols) : 0.0;
  return out;
}

namespace {

/// Summed level-0 correlation of the pose-induced positions of all
/// anchors, read directly from the volume (the lookup stack is bilinearly
/// resampled around fractional centers, which smears the peaks). Positions
/// outside the feature grid contribute the cell's mean correlation, so
/// leaving the grid is neither rewarded nor punished.
struct VolumeScorer {
  const CorrelationPyramid::Level& vol;
  const PointCloud& cloud;
  const Intrinsics& k;
  std::vector<double> neutral;  // per-source-cell mean correlation

  VolumeScorer(const CorrelationPyramid& pyr, const PointCloud& cloud_src, const Intrinsics& kk)
      : vol(pyr.levels.at(0)), cloud(cloud_src), k(kk) {
    neutral.assign(static_cast<size_t>(vol.src_rows) * vol.src_cols, 0.0);
    const size_t n = static_cast<size_t>(vol.tgt_rows) * vol.tgt_cols;
    for (int i = 0; i < vol.src_rows; ++i) {
      for (int j = 0; j < vol.src_cols; ++j) {
        double s = 0;
        const float* base = vol.v.data() + (static_cast<size_t>(i) * vol.src_cols + j) * n;
        for (size_t t = 0; t < n; ++t) s += base[t];
        neutral[static_cast<size_t>(i) * vol.src_cols + j] = s / static_cast<double>(n);
      }
    }
  }

  double operator()(const Pose& g) const {
    double score = 0;
    for (int i = 0; i < vol.src_rows; ++i) {
      for (int j = 0; j < vol.src_cols; ++j) {
        if (!cloud.is_valid(i, j)) continue;
        Eigen::Vector3d y = g.apply(cloud.at(i, j));
        double tx = -1, ty = -1;
        if (y.z() > 0) {
          double u = k.fx * y.x() / y.z() + k.cx;
          double v = k.fy * y.y() / y.z() + k.cy;
          tx = (u - kFeatureStride * 0.5) / kFeatureStride;
          ty = (v - kFeatureStride * 0.5) / kFeatureStride;
        }
        if (tx < -0.5 || ty < -0.5 || tx > vol.tgt_cols - 0.5 || ty > vol.tgt_rows - 0.5) {
          score += neutral[static_cast<size_t>(i) * vol.src_cols + j];
          continue;
        }
        double x = std::clamp(tx, 0.0, vol.tgt_cols - 1.0);
        double yy = std::clamp(ty, 0.0, vol.tgt_rows - 1.0);
        int x0 = std::min(static_cast<int>(x), vol.tgt_cols - 2 >= 0 ? vol.tgt_cols - 2 : 0);
        int y0 = std::min(static_cast<int>(yy), vol.tgt_rows - 2 >= 0 ? vol.tgt_rows - 2 : 0);
        double fx = x - x0, fy = yy - y0;
        score += (1 - fy) * ((1 - fx) * vol.at(i, j, y0, x0) + fx * vol.at(i, j, y0, x0 + 1)) +
                 fy * ((1 - fx) * vol.at(i, j, y0 + 1, x0) + fx * vol.at(i, j, y0 + 1, x0 + 1));
      }
    }
    return score;
  }
};

/// Coordinate ascent on the correlation score over rotations about the
/// moving object centroid and in-plane translations: pins the components
/// that depth residuals leave unconstrained (revolution surfaces, facet
/// lattices, fronto-parallel faces).
Pose score_ascent(const VolumeScorer& scorer, const PointCloud& cloud_src, const Pose& g0) {
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  int n = 0;
  for (int i = 0; i < cloud_src.rows; ++i)
    for (int j = 0; j < cloud_src.cols; ++j)
      if (cloud_src.is_valid(i, j)) {
        centroid += cloud_src.at(i, j);
        ++n;
      }
  if (n == 0) return g0;
  centroid /= n;

  const bool debug = std::getenv("POSEFLOW_DEBUG") != nullptr;

  // two seeds: the pair fit, and its rotation-free reduction (the pair fit
  // can rotation-lock on the wrong facet alignment)
  Pose seed2;
  seed2.R = Eigen::Matrix3d::Identity();
  seed2.t = g0.apply(centroid) - centroid;

  auto rotate_about_centroid = [&](const Pose& g, const Eigen::Matrix3d& rot) {
    Pose cand;
    cand.R = rot * g.R;
    cand.t = g.apply(centroid) - cand.R * centroid;
    if (orthonormality_drift(cand.R) > 1e-12) cand.R = orthonormalize(cand.R);
    return cand;
  };

  // stage A: coarse grid over rotation offsets from both seeds; greedy
  // ascent alone gets trapped on ridges of the correlation landscape
  std::vector<Eigen::Vector3d> grid_axes = {
      {1, 0, 0}, {0, 1, 0}, {0, 0, 1},
      Eigen::Vector3d(1, 1, 0).normalized(),  Eigen::Vector3d(1, -1, 0).normalized(),
      Eigen::Vector3d(1, 0, 1).normalized(),  Eigen::Vector3d(1, 0, -1).normalized(),
      Eigen::Vector3d(0, 1, 1).normalized(),  Eigen::Vector3d(0, 1, -1).normalized(),
      Eigen::Vector3d(1, 1, 1).normalized(),  Eigen::Vector3d(1, 1, -1).normalized(),
      Eigen::Vector3d(1, -1, 1).normalized(), Eigen::Vector3d(-1, 1, 1).normalized()};
  {
    // principal axes of the anchors: near-symmetric shapes leave exactly
    // the rotation about these axes undetermined for the depth fit
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (int i = 0; i < cloud_src.rows; ++i)
      for (int j = 0; j < cloud_src.cols; ++j)
        if (cloud_src.is_valid(i, j)) {
          Eigen::Vector3d d = cloud_src.at(i, j) - centroid;
          cov += d * d.transpose();
        }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    for (int a = 0; a < 3; ++a) grid_axes.push_back(eig.eigenvectors().col(a));
  }

  // stage A: coarse rotation x shift grid from both seeds. Survivors are
  // kept as finalists: the level-0 intensity basin is narrow, so near-true
  // candidates may only edge out false ridges after their own polish.
  struct Finalist {
    double score;
    Pose pose;
  };
  std::vector<Finalist> finalists;
  // rotation-diverse shortlist: near-duplicates collapse onto their best
  // representative so distinct basins all get polished
  auto offer = [&](const Pose& cand, double s) {
    for (auto& f : finalists) {
      if (rotation_angle(f.pose.R, cand.R) < 4.0 * M_PI / 180.0) {
        if (s > f.score) f = {s, cand};
        std::sort(finalists.begin(), finalists.end(),
                  [](const Finalist& a, const Finalist& b) { return a.score > b.score; });
        return;
      }
    }
    finalists.push_back({s, cand});
    std::sort(finalists.begin(), finalists.end(),
              [](const Finalist& a, const Finalist& b) { return a.score > b.score; });
    if (finalists.size() > 10) finalists.pop_back();
  };

  double seed_score = scorer(g0);
  offer(g0, seed_score);
  offer(seed2, scorer(seed2));
  {
    // in-plane shifts joint with the rotation grid: a few mm of centroid
    // error in the seed otherwise sinks every rotation candidate
    const double shifts[5][2] = {{0, 0}, {4, 0}, {-4, 0}, {0, 4}, {0, -4}};
    const bool debug2 = std::getenv("POSEFLOW_DEBUG2") != nullptr;
    for (const Pose& seed : {g0, seed2}) {
      for (const auto& axis : grid_axes) {
        double axis_best = -1e30;
        double axis_deg = 0;
        for (double deg : {-35.0, -30.0, -25.0, -20.0, -15.0, -12.5, -10.0, -7.5, -5.0, -2.5, 2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 20.0, 25.0, 30.0, 35.0}) {
          Eigen::Matrix3d rot = Eigen::AngleAxisd(deg * M_PI / 180.0, axis).toRotationMatrix();
          Pose cand = rotate_about_centroid(seed, rot);
          for (const auto& shift : shifts) {
            Pose shifted = cand;
            shifted.t.x() += shift[0];
            shifted.t.y() += shift[1];
            double s = scorer(shifted);
            if (s > axis_best) {
              axis_best = s;
              axis_deg = deg;
            }
            offer(shifted, s);
          }
        }
        if (debug2)
          std::fprintf(stderr, "[grid] axis(%.2f %.2f %.2f) best=%.2f at %.0f\n", axis.x(),
                       axis.y(), axis.z(), axis_best, axis_deg);
      }
      if (debug2) std::fprintf(stderr, "[grid] --- next seed ---\n");
    }
  }
  if (debug)
    std::fprintf(stderr, "[ascent] grid: seed=%.2f finalists best=%.2f rot=%.1f\n", seed_score,
                 finalists.front().score, rotation_angle_deg(finalists.front().pose.R, g0.R));

  // stage B: polish every finalist, keep the overall best
  struct Round {
    double step_deg;
    double step_mm;
  };
  const Round rounds[] = {{4, 3}, {2, 1.5}, {1, 0.8}, {0.5, 0.4}, {0.25, 0.2}};
  constexpr double kMaxRotDeg = 14.0;
  constexpr double kMaxShiftMm = 15.0;

  Pose overall = g0;
  double overall_score = seed_score;
  for (const Finalist& finalist : finalists) {
    const Pose start = finalist.pose;
    Pose g = start;
    double best = finalist.score;
    for (const Round& round : rounds) {
      for (int pass = 0; pass < 4; ++pass) {
        bool improved = false;
        auto consider = [&](const Pose& cand) {
          // excursion guards relative to this finalist
          if (rotation_angle(cand.R, start.R) > kMaxRotDeg * M_PI / 180.0) return;
          if ((cand.apply(centroid) - start.apply(centroid)).norm() > kMaxShiftMm) return;
          double s = scorer(cand);
          if (s > best + 1e-6) {
            best = s;
            g = cand;
            improved = true;
          }
        };
        for (const auto& axis : grid_axes) {
          for (double mult : {-1.0, 1.0}) {
            Eigen::Matrix3d rot =
                Eigen::AngleAxisd(mult * round.step_deg * M_PI / 180.0, axis).toRotationMatrix();
            consider(rotate_about_centroid(g, rot));
          }
        }
        for (int axis = 0; axis < 2; ++axis) {  // image-plane translations
          for (double mult : {-2.0, -1.0, 1.0, 2.0}) {
            Pose cand = g;
            cand.t(axis) += mult * round.step_mm;
            consider(cand);
          }
        }
        if (!improved) break;
      }
    }
    if (best > overall_score) {
      overall_score = best;
      overall = g;
    }
  }
  if (debug)
    std::fprintf(stderr, "[ascent] polish: best=%.2f rot(g,g0)=%.1f\n", overall_score,
                 rotation_angle_deg(overall.R, g0.R));

  // small hysteresis only: the scorer is identical across iterations, so an
  // accepted optimum re-parks at the same place instead of ratcheting
  if (overall_score < seed_score + 0.3) return g0;
  return overall;
}

/// Blends the correlation-score estimate into the depth fit along the
/// directions depth cannot observe. The point-to-plane information matrix
/// over the anchors has near-null eigenvectors exactly for the sliding
/// motions (revolution spin, sphere rotations); there the intensity score is
/// the only witness. Depth keeps the well-observed directions, where the
/// score carries a shading-mismatch bias.
Pose fuse_by_observability(const Pose& g_depth, const Pose& g_score, const PointCloud& cloud_src) {
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  int n = 0;
  for (int i = 0; i < cloud_src.rows * cloud_src.cols; ++i)
    if (cloud_src.valid[i]) {
      centroid += cloud_src.points[i];
      ++n;
    }
  if (n < 9) return g_score;
  centroid /= n;

  // per-anchor normals from the local anchor neighborhood
  Eigen::Matrix<double, 6, 6> info = Eigen::Matrix<double, 6, 6>::Zero();
  int used = 0;
  for (int i = 1; i + 1 < cloud_src.rows; ++i) {
    for (int j = 1; j + 1 < cloud_src.cols; ++j) {
      if (!cloud_src.is_valid(i, j)) continue;
      Eigen::Vector3d mean = Eigen::Vector3d::Zero();
      std::vector<const Eigen::Vector3d*> nb;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj)
          if (cloud_src.is_valid(i + di, j + dj)) {
            nb.push_back(&cloud_src.at(i + di, j + dj));
            mean += *nb.back();
          }
      if (nb.size() < 5) continue;
      mean /= static_cast<double>(nb.size());
      Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
      for (const auto* p : nb) {
        Eigen::Vector3d d = *p - mean;
        cov += d * d.transpose();
      }
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
      Eigen::Vector3d normal = eig.eigenvectors().col(0);
      Eigen::Vector3d x = cloud_src.at(i, j) - centroid;
      Eigen::Matrix<double, 6, 1> a;
      a.head<3>() = normal;
      a.tail<3>() = x.cross(normal);
      info += a * a.transpose();
      ++used;
    }
  }
  if (used < 9) return g_score;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> eig(info);
  const auto& lambda = eig.eigenvalues();
  double lmax = lambda(5);
  if (lmax <= 0) return g_score;

  // correction from the depth fit toward the score optimum, about the
  // centroid: [centroid shift; rotation vector]
  Eigen::Matrix<double, 6, 1> delta;
  delta.head<3>() = g_score.apply(centroid) - g_depth.apply(centroid);
  Eigen::Matrix3d rel = g_score.R * g_depth.R.transpose();
  Eigen::AngleAxisd aa(rel);
  delta.tail<3>() = aa.angle() * aa.axis();

  constexpr double kNullScale = 0.03;  // fraction of the top eigenvalue
  Eigen::Matrix<double, 6, 1> blended = Eigen::Matrix<double, 6, 1>::Zero();
  for (int kk = 0; kk < 6; ++kk) {
    double beta = 1.0 / (1.0 + lambda(kk) / (kNullScale * lmax));
    blended += beta * eig.eigenvectors().col(kk).dot(delta) * eig.eigenvectors().col(kk);
  }

  Eigen::Vector3d theta = blended.tail<3>();
  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
  double ang = theta.norm();
  if (ang > 1e-12) rot = Eigen::AngleAxisd(ang, theta / ang).toRotationMatrix();
  Pose out;
  out.R = rot * g_depth.R;
  if (orthonormality_drift(out.R) > 1e-12) out.R = orthonormalize(out.R);
  out.t = g_depth.apply(centroid) + blended.head<3>() - out.R * centroid;
  return out;
}

}  // namespace

DenseSE3Field classical_field(const LookupWindow& win, const PointCloud& cloud_src,
                              const PointCloud& cloud_tgt, const Intrinsics& k,
                              const RefineConfig& cfg, const CorrelationPyramid* score_pyr) {
  if (cloud_src.rows != win.rows || cloud_src.cols != win.cols)
    throw Error(ErrorCode::DimensionMismatch, "source cloud must match the lookup grid");
  if (cloud_tgt.cols % win.cols != 0 || cloud_tgt.rows % win.rows != 0)
    throw Error(ErrorCode::DimensionMismatch, "target cloud must be a multiple of the grid");
  if (score_pyr && (score_pyr->levels.empty() || score_pyr->levels[0].src_rows != win.rows ||
                    score_pyr->levels[0].src_cols != win.cols))
    throw Error(ErrorCode::DimensionMismatch, "score pyramid must match the lookup grid");

  const int stride = cloud_tgt.cols / win.cols;
  const double half_px = stride * 0.5;

  // peak gate doubles as an occlusion/missing-data filter for the guided
  // association: cells whose window holds nothing similar are dropped
  Grid<double> peak(win.rows, win.cols, 0.0);
  for (int i = 0; i < win.rows; ++i) {
    for (int j = 0; j < win.cols; ++j) {
      double p = -2.0;
      for (int dy = -win.radius; dy <= win.radius; ++dy)
        for (int dx = -win.radius; dx <= win.radius; ++dx)
          p = std::max(p, static_cast<double>(win.at(i, j, 0, dy, dx)));
      peak.at(i, j) = p;
    }
  }

  // stage 1: hybrid matches (distinct cells take their soft-argmax peak,
  // plateaus keep the guided association); local patch rigidity then decides
  // which matched cells are trustworthy
  MatchResult match = match_correspondences(win, cfg);
  // where the match only confirms the guidance, the guided association is
  // the more precise of the two (sub-cell soft-argmax carries a plateau bias)
  for (int i = 0; i < win.rows; ++i) {
    for (int j = 0; j < win.cols; ++j) {
      if (!match.flow.valid.at(i, j)) continue;
      size_t idx = match.flow.idx(i, j);
      double gu = (win.center_x(i, j) - j) * kFeatureStride;
      double gv = (win.center_y(i, j) - i) * kFeatureStride;
      if (std::hypot(match.flow.du[idx] - gu, match.flow.dv[idx] - gv) < 0.75 * kFeatureStride) {
        match.flow.du[idx] = gu;
        match.flow.dv[idx] = gv;
      }
    }
  }
  PairField pairs = pairs_from_flow(match.flow, cloud_src, cloud_tgt);

  const int half = cfg.patch / 2;
  auto patch_fit = [&](const PairField& pf, int i, int j, Pose& out, double& rms) -> bool {
    std::vector<Eigen::Vector3d> src, tgt;
    for (int di = -half; di <= half; ++di) {
      for (int dj = -half; dj <= half; ++dj) {
        int pi = i + di, pj = j + dj;
        if (pi < 0 || pi >= win.rows || pj < 0 || pj >= win.cols) continue;
        size_t pidx = static_cast<size_t>(pi) * win.cols + pj;
        if (!pf.valid[pidx]) continue;
        src.push_back(pf.src[pidx]);
        tgt.push_back(pf.tgt[pidx]);
      }
    }
    if (static_cast<int>(src.size()) < 6) return false;
    try {
      out = kabsch(src, tgt);
    } catch (const Error&) {
      return false;
    }
    double s = 0;
    for (size_t p = 0; p < src.size(); ++p) s += (out.apply(src[p]) - tgt[p]).squaredNorm();
    rms = std::sqrt(s / static_cast<double>(src.size()));
    return true;
  };

  // locally rigid matched cells are kept as-is through every later stage;
  // the cell's own pair must fit its patch too, or a lone mismatched match
  // rides on well-behaved neighbors
  constexpr double kCoherentRmsMm = 3.0;
  Mask coherent(win.rows, win.cols, 0);
  for (int i = 0; i < win.rows; ++i) {
    for (int j = 0; j < win.cols; ++j) {
      size_t idx = static_cast<size_t>(i) * win.cols + j;
      if (!pairs.valid[idx]) continue;
      if (match.distinct.at(i, j) < kDistinctFloor) continue;
      Pose cell;
      double rms = 0;
      if (!patch_fit(pairs, i, j, cell, rms) || rms >= kCoherentRmsMm) continue;
      if ((cell.apply(pairs.src[idx]) - pairs.tgt[idx]).norm() >= kCoherentRmsMm) continue;
      coherent.at(i, j) = 1;
    }
  }

  // incoherent matches are replaced by their guided association before any
  // fit sees them
  for (int i = 0; i < win.rows; ++i) {
    for (int j = 0; j < win.cols; ++j) {
      if (coherent.at(i, j) || !match.flow.valid.at(i, j)) continue;
      size_t idx = match.flow.idx(i, j);
      match.flow.du[idx] = (win.center_x(i, j) - j) * kFeatureStride;
      match.flow.dv[idx] = (win.center_y(i, j) - i) * kFeatureStride;
    }
  }
  pairs = pairs_from_flow(match.flow, cloud_src, cloud_tgt);

  // stage 2: robust global seed; coherent matches dominate when present,
  // otherwise the guided pairs carry the fit ICP-style
  bool have_global = false;
  Pose global;
  {
    std::vector<Eigen::Vector3d> src, dst;
    std::vector<double> base;
    for (int i = 0; i < win.rows; ++i) {
      for (int j = 0; j < win.cols; ++j) {
        size_t idx = static_cast<size_t>(i) * win.cols + j;
        if (!pairs.valid[idx]) continue;
        src.push_back(pairs.src[idx]);
        dst.push_back(pairs.tgt[idx]);
        base.push_back(coherent.at(i, j) ? std::max(0.25, std::min(1.0, match.distinct.at(i, j)))
                                         : kDistinctFloor);
      }
    }
    if (src.size() >= 6) {
      try {
        global = kabsch(src, dst, base);
        std::vector<double> w = base;
        for (int it = 0; it < cfg.irls_iters; ++it) {
          for (size_t i = 0; i < src.size(); ++i)
            w[i] = base[i] * huber_weight((global.apply(src[i]) - dst[i]).norm(),
                                          cfg.huber_delta_mm);
          global = kabsch(src, dst, w);
        }
        have_global = true;
      } catch (const Error&) {
      }
    }
  }
  if (have_global) {
    if (score_pyr) {
      VolumeScorer scorer(*score_pyr, cloud_src, k);
      Pose g_star = score_ascent(scorer, cloud_src, global);
      global = fuse_by_observability(global, g_star, cloud_src);
    }

    // stage 3: re-associate the incoherent cells at the refined estimate;
    // coherent matches stay untouched
    FlowField refined = match.flow;
    for (int i = 0; i < win.rows; ++i) {
      for (int j = 0; j < win.cols; ++j) {
        if (coherent.at(i, j)) continue;
        size_t idx = refined.idx(i, j);
        refined.valid.at(i, j) = 0;
        if (peak.at(i, j) < cfg.corr_gate || !cloud_src.is_valid(i, j)) continue;
        Eigen::Vector3d y = global.apply(cloud_src.at(i, j));
        if (y.z() <= 0) continue;
        double u = k.fx * y.x() / y.z() + k.cx;
        double v = k.fy * y.y() / y.z() + k.cy;
        refined.du[idx] = u - (stride * j + half_px);
        refined.dv[idx] = v - (stride * i + half_px);
        refined.valid.at(i, j) = 1;
      }
    }
    pairs = pairs_from_flow(refined, cloud_src, cloud_tgt);
  }

  // stage 4: per-cell rigid fit over the patch window
  DenseSE3Field field(win.rows, win.cols);
  field.confidence.assign(static_cast<size_t>(win.rows) * win.cols, 0.0);
  for (int i = 0; i < win.rows; ++i) {
    for (int j = 0; j < win.cols; ++j) {
      size_t idx = field.idx(i, j);
      if (!pairs.valid[idx]) continue;
      Pose cell;
      double rms = 0;
      if (!patch_fit(pairs, i, j, cell, rms)) continue;
      field.cells[idx] = cell;
      field.valid.at(i, j) = 1;
      field.confidence[idx] = 1.0;
    }
  }
  return field;
}

std::pair<Pose, IterationDiagnostics> vote_global_pose(const DenseSE3Field& field,
                                                       const PointCloud& cloud_src,
                                                       const RefineConfig& cfg) {
  if (field.rows != cloud_src.rows || field.cols != cloud_src.cols)
    throw Error(ErrorCode::DimensionMismatch, "field and cloud dims differ");

  std::vector<Eigen::Vector3d> src, dst;
  std::vector<double> base;  // estimator confidence per correspondence
  for (int i = 0; i < field.rows; ++i) {
    for (int j = 0; j < field.cols; ++j) {
      if (!field.valid.at(i, j) || !cloud_src.is_valid(i, j)) continue;
      const Eigen::Vector3d& x = cloud_src.at(i, j);
      src.push_back(x);
      dst.push_back(field.cells[field.idx(i, j)].apply(x));
      base.push_back(field.confidence.empty() ? 1.0 : field.confidence[field.idx(i, j)]);
    }
  }
  if (src.size() < 3)
    throw Error(ErrorCode::TooFewCells, "only " + std::to_string(src.size()) + " valid field cells");

  IterationDiagnostics diag;
  diag.valid_cells = static_cast<int>(src.size());

  Pose fit;
  if (cfg.vote == VoteMode::IrlsHuber) {
    std::vector<double> w = base;
    fit = kabsch(src, dst, w);
    for (int it = 0; it < cfg.irls_iters; ++it) {
      for (size_t i = 0; i < src.size(); ++i)
        w[i] = base[i] * huber_weight((fit.apply(src[i]) - dst[i]).norm(), cfg.huber_delta_mm);
      fit = kabsch(src, dst, w);
    }
    // consensus refit: gross outliers keep a nonzero Huber weight that
    // biases the fit; drop them for the final solve
    std::vector<Eigen::Vector3d> si, di;
    std::vector<double> wi;
    for (size_t i = 0; i < src.size(); ++i) {
      if ((fit.apply(src[i]) - dst[i]).norm() > cfg.huber_delta_mm) continue;
      si.push_back(src[i]);
      di.push_back(dst[i]);
      wi.push_back(base[i]);
    }
    if (si.size() >= 3) {
      try {
        fit = kabsch(si, di, wi);
      } catch (const Error&) {
        // fall back to the Huber fit on a degenerate consensus set
      }
    }
  } else {
    CounterRng rng(cfg.seed, "vote-ransac");
    const auto n = static_cast<std::uint32_t>(src.size());
    std::vector<size_t> best_inliers;
    std::vector<Eigen::Vector3d> s3(3), d3(3);
    for (int it = 0; it < cfg.ransac.iters; ++it) {
      size_t a = rng.uniform_index(n), b = rng.uniform_index(n), c = rng.uniform_index(n);
      if (a == b || b == c || a == c) continue;
      s3 = {src[a], src[b], src[c]};
      d3 = {dst[a], dst[b], dst[c]};
      Pose cand;
      try {
        cand = kabsch(s3, d3);
      } catch (const Error&) {
        continue;
      }
      std::vector<size_t> inliers;
      for (size_t i = 0; i < src.size(); ++i)
        if ((cand.apply(src[i]) - dst[i]).norm() <= cfg.ransac.inlier_mm) inliers.push_back(i);
      if (inliers.size() > best_inliers.size()) best_inliers = std::move(inliers);
    }
    if (best_inliers.size() < 3)
      throw Error(ErrorCode::DegenerateConfiguration, "RANSAC found no 3-point consensus");
    std::vector<Eigen::Vector3d> si, di;
    std::vector<double> wi;
    si.reserve(best_inliers.size());
    di.reserve(best_inliers.size());
    for (size_t i : best_inliers) {
      si.push_back(src[i]);
      di.push_back(dst[i]);
      wi.push_back(base[i]);
    }
    fit = kabsch(si, di, wi);
  }

  size_t inl = 0;
  const double thresh = cfg.vote == VoteMode::IrlsHuber ? cfg.huber_delta_mm : cfg.ransac.inlier_mm;
  for (size_t i = 0; i < src.size(); ++i)
    if ((fit.apply(src[i]) - dst[i]).norm() <= thresh) ++inl;
  diag.inlier_fraction = static_cast<double>(inl) / static_cast<double>(src.size());

  {
    // dispersion of the per-cell motions
    TwistField tw = field_to_twist(field);
    Eigen::Vector3d mean_t = Eigen::Vector3d::Zero();
    double mean_a = 0;
    int n = 0;
    for (size_t i = 0; i < tw.cells.size(); ++i) {
      if (!tw.valid.raw()[i]) continue;
      mean_t += tw.cells[i].tau;
      mean_a += tw.cells[i].theta.norm();
      ++n;
    }
    if (n > 0) {
      mean_t /= n;
      mean_a /= n;
      double var_t = 0, var_a = 0;
      for (size_t i = 0; i < tw.cells.size(); ++i) {
        if (!tw.valid.raw()[i]) continue;
        var_t += (tw.cells[i].tau - mean_t).squaredNorm();
        double da = tw.cells[i].theta.norm() - mean_a;
        var_a += da * da;
      }
      diag.dispersion_t_mm = std::sqrt(var_t / n);
      diag.dispersion_r_deg = std::sqrt(var_a / n) * 180.0 / M_PI;
    }
  }
  return {fit, diag};
}

Pose ransac_kabsch_baseline(const FlowField& flow2d, const DepthMap& depth1,
                            const DepthMap& depth2, const Intrinsics& k,
                            const RefineConfig& cfg) {
  if (flow2d.rows != depth1.rows() || flow2d.cols != depth1.cols())
    throw Error(ErrorCode::DimensionMismatch, "flow and depth1 dims differ");

  std::vector<Eigen::Vector3d> src, dst;
  for (int r = 0; r < flow2d.rows; ++r) {
    for (int c = 0; c < flow2d.cols; ++c) {
      if (!flow2d.valid.at(r, c)) continue;
      double z1 = depth1.at(r, c);
      if (z1 <= 0) continue;
      size_t idx = flow2d.idx(r, c);
      double u1 = c + 0.5, v1 = r + 0.5;
      double u2 = u1 + flow2d.du[idx], v2 = v1 + flow2d.dv[idx];
      double z2 = sample_depth_bilinear(depth2, u2, v2);
      if (z2 <= 0) continue;
      src.emplace_back((u1 - k.cx) * z1 / k.fx, (v1 - k.cy) * z1 / k.fy, z1);
      dst.emplace_back((u2 - k.cx) * z2 / k.fx, (v2 - k.cy) * z2 / k.fy, z2);
    }
  }
  if (src.size() < 3)
    throw Error(ErrorCode::TooFewCorrespondences,
                "only " + std::to_string(src.size()) + " lifted flow correspondences");

  CounterRng rng(cfg.seed, "baseline-ransac");
  const auto n = static_cast<std::uint32_t>(src.size());
  std::vector<size_t> best_inliers;
  std::vector<Eigen::Vector3d> s3(3), d3(3);
  for (int it = 0; it < cfg.ransac.iters; ++it) {
    size_t a = rng.uniform_index(n), b = rng.uniform_index(n), c = rng.uniform_index(n);
    if (a == b || b == c || a == c) continue;
    s3 = {src[a], src[b], src[c]};
    d3 = {dst[a], dst[b], dst[c]};
    Pose cand;
    try {
      cand = kabsch(s3, d3);
    } catch (const Error&) {
      continue;
    }
    std::vector<size_t> inliers;
    for (size_t i = 0; i < src.size(); ++i)
      if ((cand.apply(src[i]) - dst[i]).norm() <= cfg.ransac.inlier_mm) inliers.push_back(i);
    if (inliers.size() > best_inliers.size()) best_inliers = std::move(inliers);
  }
  if (best_inliers.size() < 3)
    throw Error(ErrorCode::NoConsensus, "best inlier set smaller than a minimal sample");

  std::vector<Eigen::Vector3d> si, di;
  si.reserve(best_inliers.size());
  di.reserve(best_inliers.size());
  for (size_t i : best_inliers) {
    si.push_back(src[i]);
    di.push_back(dst[i]);
  }
  return kabsch(si, di);
}

// ---------------------------------------------------------------------------
// neural backend
// ---------------------------------------------------------------------------

Eigen::VectorXf gru_cell(const Eigen::VectorXf& x, const Eigen::VectorXf& h,
                         const NeuralWeights& w) {
  if (x.size() != w.input_dim || h.size() != w.hidden_dim)
    throw Error(ErrorCode::ShapeMismatch, "gru input dims do not match weights");
  Eigen::VectorXf xh(w.input_dim + w.hidden_dim);
  xh << x, h;
  auto sigmoid = [](float v) { return 1.f / (1.f + std::exp(-v)); };
  Eigen::VectorXf z = (w.w_z * xh + w.b_z).unaryExpr(sigmoid);
  Eigen::VectorXf r = (w.w_r * xh + w.b_r).unaryExpr(sigmoid);
  Eigen::VectorXf xrh(w.input_dim + w.hidden_dim);
  xrh << x, (r.array() * h.array()).matrix();
  Eigen::VectorXf cand = (w.w_h * xrh + w.b_h).array().tanh();
  return ((1.f - z.array()) * h.array() + z.array() * cand.array()).matrix();
}

std::pair<DenseSE3Field, HiddenState> neural_step(const LookupWindow& win,
                                                  const DenseSE3Field& field_prev,
                                                  const HiddenState& hidden,
                                                  const NeuralWeights& weights) {
  if (field_prev.rows != win.rows || field_prev.cols != win.cols)
    throw Error(ErrorCode::ShapeMismatch, "field does not match the lookup grid");
  if (weights.input_dim != win.per_pixel() + 6)
    throw Error(ErrorCode::ShapeMismatch,
                "weights expect input dim " + std::to_string(weights.input_dim) + ", lookup gives " +
                    std::to_string(win.per_pixel() + 6));
  if (hidden.rows != win.rows || hidden.cols != win.cols || hidden.dim != weights.hidden_dim)
    throw Error(ErrorCode::ShapeMismatch, "hidden state dims do not match");

  DenseSE3Field out(field_prev.rows, field_prev.cols);
  HiddenState hout = hidden;

  Eigen::VectorXf x(weights.input_dim);
  for (int i = 0; i < win.rows; ++i) {
    for (int j = 0; j < win.cols; ++j) {
      size_t idx = out.idx(i, j);
      if (!field_prev.valid.raw()[idx]) continue;

      auto corr = win.at(i, j);
      for (int c = 0; c < win.per_pixel(); ++c) x(c) = corr[c];
      Twist tw;
      try {
        tw = log_pose(field_prev.cells[idx]);
      } catch (const Error&) {
        tw = Twist{};  // near-pi cell: zero twist input
      }
      for (int c = 0; c < 3; ++c) {
        x(win.per_pixel() + c) = static_cast<float>(tw.tau(c) * kTwistTauScale);
        x(win.per_pixel() + 3 + c) = static_cast<float>(tw.theta(c));
      }

      Eigen::Map<const Eigen::VectorXf> h(hidden.data.data() + idx * weights.hidden_dim,
                                          weights.hidden_dim);
      Eigen::VectorXf hnew = gru_cell(x, h, weights);
      std::copy(hnew.data(), hnew.data() + weights.hidden_dim,
                hout.data.begin() + idx * weights.hidden_dim);

      Eigen::VectorXf d = weights.twist_w * hnew + weights.twist_b;
      Twist delta;
      delta.tau = Eigen::Vector3d(d(0), d(1), d(2)) / kTwistTauScale;
      delta.theta = Eigen::Vector3d(d(3), d(4), d(5));
      out.cells[idx] = compose(exp_twist(delta), field_prev.cells[idx]);
      out.valid.raw()[idx] = 1;
    }
  }
  return {std::move(out), std::move(hout)};
}

// ---------------------------------------------------------------------------
// refine loop
// ---------------------------------------------------------------------------

RefineTrace refine(const GrayImage& rgb, const DepthMap& depth, const TriMesh& mesh,
                   const Intrinsics& k, const Pose& p_init, const RefineConfig& cfg) {
  check_config(cfg);
  if (rgb.rows() != depth.rows() || rgb.cols() != depth.cols())
    throw Error(ErrorCode::DimensionMismatch, "rgb and depth dims differ");

  const Intrinsics kc = crop_camera(mesh, p_init, k, cfg.crop_size, cfg.crop_pad);

  GrayImage rgb_c;
  DepthMap depth_c;
  resample_view(rgb, depth, k, kc, rgb_c, depth_c);
  int valid_px = 0;
  for (double z : depth_c.raw()) valid_px += z > 0 ? 1 : 0;
  if (valid_px < cfg.min_valid_pixels)
    throw Error(ErrorCode::TooFewValidPixels,
                std::to_string(valid_px) + " valid depth pixels inside the crop");

  // the reference is rendered at the source camera and warped through the
  // same resampling as the observation, so both frames share one imaging
  // path and a perfect initialization correlates exactly
  RenderOutput ref_full = render(mesh, p_init, k);
  RenderOutput ref;
  ref.intensity = GrayImage();
  resample_view(ref_full.intensity, ref_full.depth, k, kc, ref.intensity, ref.depth);
  ref.mask = Mask(kc.height, kc.width, 0);
  ref.face_id = Grid<std::int32_t>(kc.height, kc.width, -1);
  bool any_mask = false;
  for (int r = 0; r < kc.height; ++r) {
    for (int c = 0; c < kc.width; ++c) {
      if (ref.depth.at(r, c) > 0) {
        ref.mask.at(r, c) = 1;
        any_mask = true;
      }
    }
  }
  if (!any_mask) throw Error(ErrorCode::OutOfView, "initial pose renders to an empty mask");

  FeatureMap f1 = extract_features(ref.intensity, ref.depth, kc);
  FeatureMap f2 = extract_features(rgb_c, depth_c, kc);
  CorrelationPyramid pyr = build_volume(f1, f2, cfg.pyramid_levels);
  // intensity-only stack for the classical score ascent
  CorrelationPyramid pyr_int;
  if (cfg.backend == Backend::Classical)
    pyr_int = build_volume(extract_intensity_features(ref.intensity),
                           extract_intensity_features(rgb_c), cfg.pyramid_levels);

  PointCloud cloud_src = grid_cloud(ref.depth, kc, kFeatureStride);
  PointCloud cloud_tgt = lift(depth_c, kc);

  Mask grid_mask(cloud_src.rows, cloud_src.cols, 0);
  for (int i = 0; i < cloud_src.rows; ++i)
    for (int j = 0; j < cloud_src.cols; ++j)
      grid_mask.at(i, j) = cloud_src.is_valid(i, j) ? 1 : 0;

  RefineTrace trace;
  trace.crop = kc;
  trace.steps.reserve(cfg.iterations + 1);

  RefineStep step0;
  step0.pose = p_init;
  step0.residual = PoseResidual9{};  // identity rotation, zero translation
  step0.flow = FlowField(kc.height, kc.width);
  step0.field = field_from_residual(Pose::identity(), grid_mask);
  trace.steps.push_back(std::move(step0));

  FlowField flow_grid(cloud_src.rows, cloud_src.cols);
  DenseSE3Field field_reset = trace.steps[0].field;
  HiddenState hidden;
  if (cfg.backend == Backend::Neural)
    hidden = HiddenState(cloud_src.rows, cloud_src.cols, cfg.weights->hidden_dim);

  for (int it = 1; it <= cfg.iterations; ++it) {
    const Pose& prev = trace.steps.back().pose;
    RefineStep step;
    step.pose = prev;
    step.residual = PoseResidual9{};
    step.flow = trace.steps.back().flow;
    step.field = field_reset;

    RefineConfig iter_cfg = cfg;
    iter_cfg.seed = cfg.seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(it));

    try {
      LookupWindow win = lookup(pyr, flow_grid, cfg.lookup_radius);

      DenseSE3Field field;
      if (cfg.backend == Backend::Classical) {
        field = classical_field(win, cloud_src, cloud_tgt, kc, iter_cfg, &pyr_int);
      } else {
        auto [f, h] = neural_step(win, field_reset, hidden, *cfg.weights);
        field = std::move(f);
        hidden = std::move(h);
      }

      auto [global, diag] = vote_global_pose(field, cloud_src, iter_cfg);
      diag.mean_peak_corr = match_correspondences(win, iter_cfg).mean_peak;

      Pose candidate = apply_residual(global, trace.steps[0].pose);
      step.residual = encode_residual(prev, candidate, kc);
      step.pose = decode_residual(prev, step.residual, kc);
      step.diag = diag;

      field_reset = field_from_residual(pose_residual(trace.steps[0].pose, step.pose), grid_mask);
      step.field = field_reset;
      step.flow = pose_induced_flow(ref, trace.steps[0].pose, step.pose, kc);
      flow_grid = downsample_flow(step.flow, kFeatureStride);
    } catch (const Error&) {
      // carry the previous pose forward; the refiner never aborts mid-loop
      step.diag.skipped = true;
    }
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// weights serialization
// ---------------------------------------------------------------------------

namespace {

constexpr char kWeightsMagic[4] = {'S', 'C', 'W', '2'};

void write_tensor(std::ofstream& out, const std::string& name, const float* data,
                  std::vector<std::uint32_t> dims) {
  std::uint16_t len = static_cast<std::uint16_t>(name.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(name.data(), len);
  std::uint32_t rank = static_cast<std::uint32_t>(dims.size());
  out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  std::uint64_t total = 1;
  for (std::uint32_t d : dims) {
    out.write(reinterpret_cast<const char*>(&d), sizeof(d));
    total *= d;
  }
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(total * sizeof(float)));
}

struct RawTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

}  // namespace

void save_weights(const std::string& path, const NeuralWeights& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  out.write(kWeightsMagic, 4);
  std::uint32_t version = 1, count = 10;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));

  auto rows = [](const Eigen::MatrixXf& m) { return static_cast<std::uint32_t>(m.rows()); };
  auto cols = [](const Eigen::MatrixXf& m) { return static_cast<std::uint32_t>(m.cols()); };
  // Eigen stores column-major; serialize row-major for a stable file layout.
  auto write_mat = [&](const std::string& name, const Eigen::MatrixXf& m) {
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    write_tensor(out, name, rm.data(), {rows(m), cols(m)});
  };
  auto write_vec = [&](const std::string& name, const Eigen::VectorXf& v) {
    write_tensor(out, name, v.data(), {static_cast<std::uint32_t>(v.size())});
  };
  write_mat("gru.w_z", w.w_z);
  write_mat("gru.w_r", w.w_r);
  write_mat("gru.w_h", w.w_h);
  write_vec("gru.b_z", w.b_z);
  write_vec("gru.b_r", w.b_r);
  write_vec("gru.b_h", w.b_h);
  write_mat("twist.w", w.twist_w);
  write_vec("twist.b", w.twist_b);
  write_mat("pose.w", w.pose_w);
  write_vec("pose.b", w.pose_b);
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

NeuralWeights load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kWeightsMagic, 4) != 0)
    throw Error(ErrorCode::ParseError, path + ": bad weights magic");
  std::uint32_t version = 0, count = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in || version != 1) throw Error(ErrorCode::ParseError, path + ": unsupported version");

  std::map<std::string, RawTensor> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    std::uint16_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string name(len, '\0');
    in.read(name.data(), len);
    std::uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), sizeof(rank));
    if (!in || rank > 4) throw Error(ErrorCode::ParseError, path + ": bad tensor header");
    RawTensor raw;
    std::uint64_t total = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      std::uint32_t d = 0;
      in.read(reinterpret_cast<char*>(&d), sizeof(d));
      raw.dims.push_back(d);
      total *= d;
    }
    if (total > (1u << 28)) throw Error(ErrorCode::ParseError, path + ": tensor too large");
    raw.data.resize(total);
    in.read(reinterpret_cast<char*>(raw.data.data()),
            static_cast<std::streamsize>(total * sizeof(float)));
    if (!in) throw Error(ErrorCode::ParseError, path + ": truncated tensor data");
    tensors.emplace(std::move(name), std::move(raw));
  }

  auto get = [&](const std::string& name) -> const RawTensor& {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw Error(ErrorCode::ShapeMismatch, path + ": missing tensor " + name);
    return it->second;
  };
  auto mat = [&](const std::string& name) {
    const RawTensor& t = get(name);
    if (t.dims.size() != 2) throw Error(ErrorCode::ShapeMismatch, name + " must be rank 2");
    Eigen::MatrixXf m(t.dims[0], t.dims[1]);
    for (std::uint32_t r = 0; r < t.dims[0]; ++r)
      for (std::uint32_t c = 0; c < t.dims[1]; ++c) m(r, c) = t.data[r * t.dims[1] + c];
    return m;
  };
  auto vec = [&](const std::string& name) {
    const RawTensor& t = get(name);
    if (t.dims.size() != 1) throw Error(ErrorCode::ShapeMismatch, name + " must be rank 1");
    return Eigen::Map<const Eigen::VectorXf>(t.data.data(), t.dims[0]).eval();
  };

  NeuralWeights w;
  w.w_z = mat("gru.w_z");
  w.w_r = mat("gru.w_r");
  w.w_h = mat("gru.w_h");
  w.b_z = vec("gru.b_z");
  w.b_r = vec("gru.b_r");
  w.b_h = vec("gru.b_h");
  w.twist_w = mat("twist.w");
  w.twist_b = vec("twist.b");
  w.pose_w = mat("pose.w");
  w.pose_b = vec("pose.b");

  w.hidden_dim = static_cast<int>(w.w_z.rows());
  w.input_dim = static_cast<int>(w.w_z.cols()) - w.hidden_dim;
  if (w.input_dim <= 0) throw Error(ErrorCode::ShapeMismatch, "gru.w_z narrower than hidden dim");

  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::ShapeMismatch, path + ": " + what);
  };
  const int io = w.input_dim + w.hidden_dim;
  expect(w.w_r.rows() == w.hidden_dim && w.w_r.cols() == io, "gru.w_r shape");
  expect(w.w_h.rows() == w.hidden_dim && w.w_h.cols() == io, "gru.w_h shape");
  expect(w.b_z.size() == w.hidden_dim && w.b_r.size() == w.hidden_dim &&
             w.b_h.size() == w.hidden_dim,
         "gru bias shapes");
  expect(w.twist_w.rows() == 6 && w.twist_w.cols() == w.hidden_dim && w.twist_b.size() == 6,
         "twist head shape");
  expect(w.pose_w.rows() == 9 && w.pose_w.cols() == w.hidden_dim && w.pose_b.size() == 9,
         "pose head shape");

  for (const auto& [name, t] : tensors)
    for (float v : t.data)
      if (!std::isfinite(v)) throw Error(ErrorCode::ShapeMismatch, name + " has non-finite values");
  return w;
}

NeuralWeights make_random_weights(int input_dim, int hidden_dim, std::uint64_t seed) {
  CounterRng rng(seed, "weights");
  auto rand_mat = [&](int r, int c) {
    Eigen::MatrixXf m(r, c);
    float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(c)));
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = static_cast<float>(rng.gaussian()) * scale;
    return m;
  };
  NeuralWeights w;
  w.input_dim = input_dim;
  w.hidden_dim = hidden_dim;
  const int io = input_dim + hidden_dim;
  w.w_z = rand_mat(hidden_dim, io);
  w.w_r = rand_mat(hidden_dim, io);
  w.w_h = rand_mat(hidden_dim, io);
  w.b_z = Eigen::VectorXf::Zero(hidden_dim);
  w.b_r = Eigen::VectorXf::Zero(hidden_dim);
  w.b_h = Eigen::VectorXf::Zero(hidden_dim);
  w.twist_w = rand_mat(6, hidden_dim) * 0.01f;
  w.twist_b = Eigen::VectorXf::Zero(6);
  w.pose_w = rand_mat(9, hidden_dim) * 0.01f;
  w.pose_b = Eigen::VectorXf::Zero(9);
  return w;
}

}  // namespace poseflow
