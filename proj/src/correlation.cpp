#include "poseflow/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace poseflow {

namespace {

void l2_normalize(std::span<float> v) {
  double n = 0;
  for (float x : v) n += static_cast<double>(x) * x;
  if (n <= 0) return;
  float inv = static_cast<float>(1.0 / std::sqrt(n));
  for (float& x : v) x *= inv;
}

void check_cell_dims(int rows, int cols) {
  if (rows % kFeatureStride != 0 || cols % kFeatureStride != 0 || rows == 0 || cols == 0)
    throw Error(ErrorCode::DimensionMismatch, "image dims must be a positive multiple of 8");
}

}  // namespace

FeatureMap extract_intensity_features(const GrayImage& rgb) {
  check_cell_dims(rgb.rows(), rgb.cols());
  const int gr = rgb.rows() / kFeatureStride, gc = rgb.cols() / kFeatureStride;
  FeatureMap f(gr, gc, 16);
  for (int i = 0; i < gr; ++i) {
    for (int j = 0; j < gc; ++j) {
      double blocks[16];
      // 4x4 grid of 2x2-pixel block averages
      for (int by = 0; by < 4; ++by) {
        for (int bx = 0; bx < 4; ++bx) {
          double s = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              s += rgb.at(i * 8 + by * 2 + dy, j * 8 + bx * 2 + dx);
          blocks[by * 4 + bx] = s / 4.0;
        }
      }
      double mean = 0;
      for (double b : blocks) mean += b;
      mean /= 16.0;
      double var = 0;
      for (double& b : blocks) {
        b -= mean;
        var += b * b;
      }
      double sd = std::sqrt(var / 16.0);
      // contrast normalization with noise shrinkage: the block-energy share
      // explained by sensor noise is removed, so noise-only cells stay near
      // zero while weak real contrast survives at reduced weight
      constexpr double kBlockNoiseSd = 0.012;
      constexpr double kContrastFloor = 0.02;
      double energy = var;  // 16 * sd^2
      double noise_energy = 16.0 * kBlockNoiseSd * kBlockNoiseSd;
      double shrink = energy > noise_energy ? (energy - noise_energy) / energy : 0.0;
      auto dst = f.at(i, j);
      double n = 0;
      for (int b = 0; b < 16; ++b) {
        dst[b] = static_cast<float>(shrink * blocks[b] / std::max(sd, kContrastFloor));
        n += static_cast<double>(dst[b]) * dst[b];
      }
      if (n > 1.0) {
        float inv = static_cast<float>(1.0 / std::sqrt(n));
        for (int b = 0; b < 16; ++b) dst[b] *= inv;
      }
    }
  }
  return f;
}

namespace {

/// Caps a sub-descriptor at unit norm without inflating weak signals.
void soft_normalize(std::span<float> v) {
  double n = 0;
  for (float x : v) n += static_cast<double>(x) * x;
  if (n <= 1.0) return;
  float inv = static_cast<float>(1.0 / std::sqrt(n));
  for (float& x : v) x *= inv;
}

}  // namespace

FeatureMap extract_geometry_features(const DepthMap& depth, const Intrinsics& k) {
  (void)k;
  check_cell_dims(depth.rows(), depth.cols());
  const int gr = depth.rows() / kFeatureStride, gc = depth.cols() / kFeatureStride;
  FeatureMap f(gr, gc, 16);

  // flat-bin threshold on the smoothed depth gradient, mm per pixel; set
  // above the sensor-noise gradient floor
  constexpr double kFlatThresh = 1.5;
  constexpr double kInvDepthScale = 1000.0;  // to 1/meters
  // context emphasizes local shape over absolute depth
  constexpr double kCtxMeanScale = 1.0;
  constexpr double kCtxDiffScale = 20.0;
  constexpr double kCtxStdScale = 20.0;
  constexpr double kCtxRangeScale = 10.0;
  constexpr double kHistScale = 0.7;

  // 3x3 valid-masked box smoothing tames per-pixel depth noise before
  // gradients are taken
  DepthMap smooth(depth.rows(), depth.cols(), 0.0);
  for (int r = 0; r < depth.rows(); ++r) {
    for (int c = 0; c < depth.cols(); ++c) {
      if (depth.at(r, c) <= 0) continue;
      double s = 0;
      int n = 0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          int rr = r + dr, cc = c + dc;
          if (!depth.in_bounds(rr, cc) || depth.at(rr, cc) <= 0) continue;
          s += depth.at(rr, cc);
          ++n;
        }
      }
      smooth.at(r, c) = s / n;
    }
  }

  // per-cell inverse depth means, reused for the neighborhood context
  Grid<double> cell_mean(gr, gc, 0.0);
  Grid<int> cell_count(gr, gc, 0);
  for (int i = 0; i < gr; ++i) {
    for (int j = 0; j < gc; ++j) {
      double s = 0;
      int n = 0;
      for (int r = i * 8; r < i * 8 + 8; ++r) {
        for (int c = j * 8; c < j * 8 + 8; ++c) {
          double z = depth.at(r, c);
          if (z <= 0) continue;
          s += kInvDepthScale / z;
          ++n;
        }
      }
      cell_count.at(i, j) = n;
      cell_mean.at(i, j) = n > 0 ? s / n : 0.0;
    }
  }

  auto grad = [&](int r, int c, double& gx, double& gy) -> bool {
    if (r <= 0 || r >= depth.rows() - 1 || c <= 0 || c >= depth.cols() - 1) return false;
    double zl = smooth.at(r, c - 1), zr = smooth.at(r, c + 1);
    double zu = smooth.at(r - 1, c), zd = smooth.at(r + 1, c);
    if (zl <= 0 || zr <= 0 || zu <= 0 || zd <= 0) return false;
    gx = 0.5 * (zr - zl);
    gy = 0.5 * (zd - zu);
    return true;
  };

  for (int i = 0; i < gr; ++i) {
    for (int j = 0; j < gc; ++j) {
      auto dst = f.at(i, j);
      const int n_valid = cell_count.at(i, j);

      // (a) 8-bin orientation histogram; zeroed for mostly-invalid cells
      if (n_valid >= 16) {
        double hist[8] = {};
        for (int r = i * 8; r < i * 8 + 8; ++r) {
          for (int c = j * 8; c < j * 8 + 8; ++c) {
            if (depth.at(r, c) <= 0) continue;
            double gx, gy;
            if (!grad(r, c, gx, gy)) continue;
            double mag = std::hypot(gx, gy);
            int bin;
            if (mag < kFlatThresh) {
              bin = 0;
            } else {
              double ang = std::atan2(gy, gx);  // [-pi, pi]
              bin = 1 + std::min(6, static_cast<int>((ang + std::numbers::pi) /
                                                     (2 * std::numbers::pi) * 7.0));
            }
            hist[bin] += 1.0;
          }
        }
        for (int b = 0; b < 8; ++b) dst[b] = static_cast<float>(kHistScale * hist[b] / 64.0);
        soft_normalize(dst.subspan(0, 8));
      }

      // (b) inverse-depth context of the cell and its 4-neighborhood
      if (n_valid > 0) {
        double mean = cell_mean.at(i, j);
        double var = 0, mn = 1e30, mx = -1e30;
        for (int r = i * 8; r < i * 8 + 8; ++r) {
          for (int c = j * 8; c < j * 8 + 8; ++c) {
            double z = depth.at(r, c);
            if (z <= 0) continue;
            double d = kInvDepthScale / z;
            var += (d - mean) * (d - mean);
            mn = std::min(mn, d);
            mx = std::max(mx, d);
          }
        }
        var /= n_valid;
        auto neighbor_diff = [&](int di, int dj) -> double {
          int ni = i + di, nj = j + dj;
          if (ni < 0 || ni >= gr || nj < 0 || nj >= gc || cell_count.at(ni, nj) == 0) return 0.0;
          return cell_mean.at(ni, nj) - mean;
        };
        dst[8] = static_cast<float>(kCtxMeanScale * (mean - 1.0));
        dst[9] = static_cast<float>(kCtxStdScale * std::sqrt(var));
        dst[10] = static_cast<float>(kCtxDiffScale * neighbor_diff(-1, 0));
        dst[11] = static_cast<float>(kCtxDiffScale * neighbor_diff(1, 0));
        dst[12] = static_cast<float>(kCtxDiffScale * neighbor_diff(0, -1));
        dst[13] = static_cast<float>(kCtxDiffScale * neighbor_diff(0, 1));
        dst[14] = static_cast<float>(n_valid / 64.0 * 0.3);
        dst[15] = static_cast<float>(kCtxRangeScale * (mx - mn));
        soft_normalize(dst.subspan(8, 8));
      }
      soft_normalize(dst);
    }
  }
  return f;
}

FeatureMap fuse(const FeatureMap& a, const FeatureMap& b) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw Error(ErrorCode::DimensionMismatch, "feature maps differ in spatial dims");
  FeatureMap out(a.rows, a.cols, a.channels + b.channels);
  for (int r = 0; r < a.rows; ++r) {
    for (int c = 0; c < a.cols; ++c) {
      auto dst = out.at(r, c);
      auto pa = a.at(r, c);
      auto pb = b.at(r, c);
      std::copy(pa.begin(), pa.end(), dst.begin());
      std::copy(pb.begin(), pb.end(), dst.begin() + a.channels);
      l2_normalize(dst);
    }
  }
  return out;
}

FeatureMap extract_features(const GrayImage& rgb, const DepthMap& depth, const Intrinsics& k) {
  if (rgb.rows() != depth.rows() || rgb.cols() != depth.cols())
    throw Error(ErrorCode::DimensionMismatch, "rgb and depth dims differ");
  return fuse(extract_intensity_features(rgb), extract_geometry_features(depth, k));
}

CorrelationPyramid build_volume(const FeatureMap& f1, const FeatureMap& f2, int levels) {
  if (f1.rows != f2.rows || f1.cols != f2.cols || f1.channels != f2.channels)
    throw Error(ErrorCode::DimensionMismatch, "feature maps differ in dims");

  CorrelationPyramid pyr;
  pyr.levels.resize(levels);
  auto& base = pyr.levels[0];
  base.src_rows = f1.rows;
  base.src_cols = f1.cols;
  base.tgt_rows = f2.rows;
  base.tgt_cols = f2.cols;
  base.v.resize(static_cast<size_t>(f1.rows) * f1.cols * f2.rows * f2.cols);

  for (int i = 0; i < f1.rows; ++i) {
    for (int j = 0; j < f1.cols; ++j) {
      auto a = f1.at(i, j);
      for (int ki = 0; ki < f2.rows; ++ki) {
        for (int l = 0; l < f2.cols; ++l) {
          auto b = f2.at(ki, l);
          double dot = 0;
          for (int ch = 0; ch < f1.channels; ++ch)
            dot += static_cast<double>(a[ch]) * b[ch];
          base.at(i, j, ki, l) = static_cast<float>(dot);
        }
      }
    }
  }

  for (int lev = 1; lev < levels; ++lev) {
    const auto& prev = pyr.levels[lev - 1];
    auto& cur = pyr.levels[lev];
    cur.src_rows = prev.src_rows;
    cur.src_cols = prev.src_cols;
    cur.tgt_rows = (prev.tgt_rows + 1) / 2;
    cur.tgt_cols = (prev.tgt_cols + 1) / 2;
    cur.v.resize(static_cast<size_t>(cur.src_rows) * cur.src_cols * cur.tgt_rows * cur.tgt_cols);
    for (int i = 0; i < cur.src_rows; ++i) {
      for (int j = 0; j < cur.src_cols; ++j) {
        for (int ki = 0; ki < cur.tgt_rows; ++ki) {
          for (int l = 0; l < cur.tgt_cols; ++l) {
            double s = 0;
            int n = 0;
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                int pk = ki * 2 + dy, pl = l * 2 + dx;
                if (pk >= prev.tgt_rows || pl >= prev.tgt_cols) continue;
                s += prev.at(i, j, pk, pl);
                ++n;
              }
            }
            cur.at(i, j, ki, l) = static_cast<float>(n > 0 ? s / n : 0.0);
          }
        }
      }
    }
  }
  return pyr;
}

LookupWindow lookup(const CorrelationPyramid& pyr, const FlowField& flow, int radius) {
  if (pyr.levels.empty()) throw Error(ErrorCode::DimensionMismatch, "empty pyramid");
  const auto& base = pyr.levels[0];
  if (flow.rows != base.src_rows || flow.cols != base.src_cols)
    throw Error(ErrorCode::DimensionMismatch, "flow must live on the source grid");

  LookupWindow win;
  win.rows = base.src_rows;
  win.cols = base.src_cols;
  win.radius = radius;
  win.levels = static_cast<int>(pyr.levels.size());
  win.data.resize(static_cast<size_t>(win.rows) * win.cols * win.per_pixel());
  win.center.resize(static_cast<size_t>(win.rows) * win.cols * 2);

  size_t pos = 0;
  for (int i = 0; i < win.rows; ++i) {
    for (int j = 0; j < win.cols; ++j) {
      size_t fi = flow.idx(i, j);
      double cx = j + flow.du[fi] / kFeatureStride;
      double cy = i + flow.dv[fi] / kFeatureStride;
      win.center[fi * 2] = cx;
      win.center[fi * 2 + 1] = cy;
      for (int lev = 0; lev < win.levels; ++lev) {
        const auto& vol = pyr.levels[lev];
        double scale = 1.0 / static_cast<double>(1 << lev);
        double lx = cx * scale, ly = cy * scale;
        for (int dy = -radius; dy <= radius; ++dy) {
          for (int dx = -radius; dx <= radius; ++dx) {
            double x = std::clamp(lx + dx, 0.0, vol.tgt_cols - 1.0);
            double y = std::clamp(ly + dy, 0.0, vol.tgt_rows - 1.0);
            int x0 = std::min(static_cast<int>(x), vol.tgt_cols - 1);
            int y0 = std::min(static_cast<int>(y), vol.tgt_rows - 1);
            int x1 = std::min(x0 + 1, vol.tgt_cols - 1);
            int y1 = std::min(y0 + 1, vol.tgt_rows - 1);
            double fx = x - x0, fy = y - y0;
            double val = (1 - fy) * ((1 - fx) * vol.at(i, j, y0, x0) + fx * vol.at(i, j, y0, x1)) +
                         fy * ((1 - fx) * vol.at(i, j, y1, x0) + fx * vol.at(i, j, y1, x1));
            win.data[pos++] = static_cast<float>(val);
          }
        }
      }
    }
  }
  return win;
}

void save_volume_level(const std::string& path, const CorrelationPyramid& pyr, int level) {
  if (level < 0 || level >= static_cast<int>(pyr.levels.size()))
    throw Error(ErrorCode::DimensionMismatch, "no such pyramid level");
  const auto& vol = pyr.levels[level];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  out.write("SCF2", 4);
  std::uint32_t dims[4] = {
      static_cast<std::uint32_t>(vol.src_rows), static_cast<std::uint32_t>(vol.src_cols),
      static_cast<std::uint32_t>(vol.tgt_rows), static_cast<std::uint32_t>(vol.tgt_cols)};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(vol.v.data()),
            static_cast<std::streamsize>(vol.v.size() * sizeof(float)));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

}  // namespace poseflow
