#pragma once

#include <span>
#include <vector>

#include "poseflow/core.hpp"
#include "poseflow/flow.hpp"
#include "poseflow/render.hpp"

namespace poseflow {

/// Dense descriptor grid at 1/8 image resolution, unit L2 norm per pixel
/// (zero where nothing was observed).
struct FeatureMap {
  int rows = 0, cols = 0, channels = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int r, int c, int ch)
      : rows(r), cols(c), channels(ch), data(static_cast<size_t>(r) * c * ch, 0.f) {}

  std::span<float> at(int r, int c) {
    return {data.data() + (static_cast<size_t>(r) * cols + c) * channels,
            static_cast<size_t>(channels)};
  }
  std::span<const float> at(int r, int c) const {
    return {data.data() + (static_cast<size_t>(r) * cols + c) * channels,
            static_cast<size_t>(channels)};
  }
};

constexpr int kFeatureStride = 8;

/// 16-dim per 8x8 cell: mean-removed, contrast-normalized 4x4 block averages.
FeatureMap extract_intensity_features(const GrayImage& rgb);

/// 16-dim per cell: 8-bin surface-normal orientation histogram from depth
/// gradients (bin 0 collects near-flat pixels) plus 8 inverse-depth context
/// statistics of the cell and its 4-neighborhood. Cells with < 25% valid
/// depth get a zeroed histogram part.
FeatureMap extract_geometry_features(const DepthMap& depth, const Intrinsics& k);

/// Channel concatenation followed by per-pixel L2 renormalization.
FeatureMap fuse(const FeatureMap& a, const FeatureMap& b);

/// Full 32-dim RGBD descriptor: fuse of the intensity and geometry parts.
FeatureMap extract_features(const GrayImage& rgb, const DepthMap& depth, const Intrinsics& k);

/// All-pairs similarity pyramid. Level 0 holds <f1[i,j], f2[k,l]>; deeper
/// levels average-pool the target dimensions by 2 per level.
struct CorrelationPyramid {
  struct Level {
    int src_rows = 0, src_cols = 0, tgt_rows = 0, tgt_cols = 0;
    std::vector<float> v;

    float at(int i, int j, int k, int l) const {
      return v[((static_cast<size_t>(i) * src_cols + j) * tgt_rows + k) * tgt_cols + l];
    }
    float& at(int i, int j, int k, int l) {
      return v[((static_cast<size_t>(i) * src_cols + j) * tgt_rows + k) * tgt_cols + l];
    }
  };
  std::vector<Level> levels;
};

CorrelationPyramid build_volume(const FeatureMap& f1, const FeatureMap& f2, int levels = 4);

/// Correlation samples around flow-displaced positions: per source pixel and
/// level, a (2r+1)^2 window sampled bilinearly (border-clamped) at
/// ((j + du/8)/2^l + dx, (i + dv/8)/2^l + dy).
struct LookupWindow {
  int rows = 0, cols = 0, radius = 0, levels = 0;

  std::vector<float> data;    // [i][j][level][dy][dx]
  std::vector<double> center;  // [i][j] -> (x, y) level-0 window center, grid coords

  int window() const { return 2 * radius + 1; }
  int per_pixel() const { return levels * window() * window(); }

  std::span<const float> at(int i, int j) const {
    return {data.data() + (static_cast<size_t>(i) * cols + j) * per_pixel(),
            static_cast<size_t>(per_pixel())};
  }
  float at(int i, int j, int level, int dy, int dx) const {
    return data[(static_cast<size_t>(i) * cols + j) * per_pixel() +
                static_cast<size_t>(level) * window() * window() +
                static_cast<size_t>(dy + radius) * window() + (dx + radius)];
  }
  double center_x(int i, int j) const { return center[(static_cast<size_t>(i) * cols + j) * 2]; }
  double center_y(int i, int j) const { return center[(static_cast<size_t>(i) * cols + j) * 2 + 1]; }
};

/// Flow values are full-resolution pixels; they are divided by the feature
/// stride to index the volume. Flow must live on the source grid.
LookupWindow lookup(const CorrelationPyramid& pyr, const FlowField& flow, int radius = 4);

/// Debug dump ("SCF2"-style): magic, u32 src_rows/src_cols/tgt_rows/tgt_cols,
/// then f32 data of one pyramid level.
void save_volume_level(const std::string& path, const CorrelationPyramid& pyr, int level);

}  // namespace poseflow
