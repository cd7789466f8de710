#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "poseflow/correlation.hpp"
#include "poseflow/rng.hpp"

using namespace poseflow;

namespace {

const Intrinsics kCam{500.0, 500.0, 128.0, 128.0, 256, 256};

FeatureMap random_unit_features(int rows, int cols, int channels, std::uint64_t seed) {
  CounterRng rng(seed, "features");
  FeatureMap f(rows, cols, channels);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      auto px = f.at(r, c);
      double n = 0;
      for (int ch = 0; ch < channels; ++ch) {
        px[ch] = static_cast<float>(rng.gaussian());
        n += static_cast<double>(px[ch]) * px[ch];
      }
      n = std::sqrt(n);
      for (int ch = 0; ch < channels; ++ch) px[ch] = static_cast<float>(px[ch] / n);
    }
  }
  return f;
}

/// Distinct basis descriptors: within any +-4 cell window only the true
/// match correlates.
FeatureMap injective_features(int rows, int cols, int channels = 97) {
  FeatureMap f(rows, cols, channels);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) f.at(r, c)[(r * 37 + c) % channels] = 1.f;
  return f;
}

}  // namespace

TEST_CASE("constant image yields zero intensity part, flat-bin geometry") {
  GrayImage rgb(64, 64, 0.5);
  DepthMap depth(64, 64, 800.0);
  FeatureMap f = extract_features(rgb, depth, kCam);
  REQUIRE(f.channels == 32);
  for (int r = 1; r < f.rows - 1; ++r) {
    for (int c = 1; c < f.cols - 1; ++c) {
      auto px = f.at(r, c);
      for (int ch = 0; ch < 16; ++ch) CHECK(px[ch] == 0.f);  // mean-removed constant
      // the flat bin (first geometry channel) dominates the histogram part
      CHECK(px[16] > 0.5f);
      for (int ch = 17; ch < 24; ++ch) CHECK(px[ch] == 0.f);
    }
  }
}

TEST_CASE("all-invalid depth zeroes the geometry histogram") {
  GrayImage rgb(32, 32, 0.0);
  CounterRng rng(3, "img");
  for (auto& v : rgb.raw()) v = rng.uniform();
  DepthMap depth(32, 32, 0.0);
  FeatureMap f = extract_features(rgb, depth, kCam);
  for (int r = 0; r < f.rows; ++r) {
    for (int c = 0; c < f.cols; ++c) {
      auto px = f.at(r, c);
      for (int ch = 16; ch < 32; ++ch) CHECK(px[ch] == 0.f);
      // intensity part survives
      double n = 0;
      for (int ch = 0; ch < 16; ++ch) n += static_cast<double>(px[ch]) * px[ch];
      CHECK(n == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("features are shift-equivariant by whole cells") {
  const int shift = 8;  // exactly one cell
  GrayImage rgb(64, 64, 0.0);
  DepthMap depth(64, 64, 0.0);
  CounterRng rng(7, "shift");
  for (int r = 0; r < 64; ++r) {
    for (int c = 0; c < 64; ++c) {
      rgb.at(r, c) = rng.uniform();
      depth.at(r, c) = 700 + 40 * std::sin(0.3 * r) + 25 * std::cos(0.2 * c);
    }
  }
  GrayImage rgb_s(64, 64, 0.0);
  DepthMap depth_s(64, 64, 0.0);
  for (int r = 0; r < 64; ++r) {
    for (int c = shift; c < 64; ++c) {
      rgb_s.at(r, c) = rgb.at(r, c - shift);
      depth_s.at(r, c) = depth.at(r, c - shift);
    }
  }
  FeatureMap f = extract_features(rgb, depth, kCam);
  FeatureMap fs = extract_features(rgb_s, depth_s, kCam);
  // compare interior cells (border cells see clamped gradients/neighbors)
  for (int r = 2; r < f.rows - 2; ++r) {
    for (int c = 2; c < f.cols - 2; ++c) {
      auto a = f.at(r, c);
      auto b = fs.at(r, c + 1);
      for (int ch = 0; ch < f.channels; ++ch)
        CHECK(std::abs(a[ch] - b[ch]) < 1e-6f);
    }
  }
}

TEST_CASE("fuse concatenates and renormalizes") {
  FeatureMap a = random_unit_features(4, 4, 16, 11);
  FeatureMap zeros(4, 4, 16);
  FeatureMap f = fuse(a, zeros);
  REQUIRE(f.channels == 32);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      auto src = a.at(r, c);
      auto dst = f.at(r, c);
      double n = 0;
      for (int ch = 0; ch < 32; ++ch) n += static_cast<double>(dst[ch]) * dst[ch];
      CHECK(n == doctest::Approx(1.0).epsilon(1e-5));  // unit norm at every pixel
      for (int ch = 0; ch < 16; ++ch)
        CHECK(dst[ch] == doctest::Approx(src[ch]).epsilon(1e-5));
    }
  }

  SUBCASE("dimension mismatch") {
    FeatureMap small(2, 2, 16);
    CHECK_THROWS_AS(fuse(a, small), Error);
  }

  SUBCASE("fuse commutes with spatial permutation") {
    FeatureMap b = random_unit_features(4, 4, 16, 12);
    FeatureMap direct = fuse(a, b);
    // transpose both inputs, fuse, compare against the transposed direct fuse
    auto transpose = [](const FeatureMap& m) {
      FeatureMap t(m.cols, m.rows, m.channels);
      for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) {
          auto src = m.at(r, c);
          auto dst = t.at(c, r);
          std::copy(src.begin(), src.end(), dst.begin());
        }
      return t;
    };
    FeatureMap swapped = fuse(transpose(a), transpose(b));
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        auto x = direct.at(r, c);
        auto y = swapped.at(c, r);
        for (int ch = 0; ch < 32; ++ch) CHECK(x[ch] == y[ch]);
      }
  }
}

TEST_CASE("correlation volume equals the quadruple-loop oracle") {
  FeatureMap f1 = random_unit_features(4, 4, 8, 21);
  FeatureMap f2 = random_unit_features(4, 4, 8, 22);
  CorrelationPyramid pyr = build_volume(f1, f2, 2);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k)
        for (int l = 0; l < 4; ++l) {
          double dot = 0;
          for (int ch = 0; ch < 8; ++ch)
            dot += static_cast<double>(f1.at(i, j)[ch]) * f2.at(k, l)[ch];
          CHECK(std::abs(pyr.levels[0].at(i, j, k, l) - dot) < 1e-6);
        }
}

TEST_CASE("self-correlation peaks on the diagonal") {
  FeatureMap f = injective_features(8, 8);
  CorrelationPyramid pyr = build_volume(f, f, 1);
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      float best = -2;
      int bi = -1, bj = -1;
      for (int k = 0; k < 8; ++k)
        for (int l = 0; l < 8; ++l)
          if (pyr.levels[0].at(i, j, k, l) > best) {
            best = pyr.levels[0].at(i, j, k, l);
            bi = k;
            bj = l;
          }
      CHECK(bi == i);
      CHECK(bj == j);
      CHECK(best == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("pyramid levels pool the previous level by 2x2 means") {
  FeatureMap f1 = random_unit_features(8, 8, 16, 31);
  FeatureMap f2 = random_unit_features(8, 8, 16, 32);
  CorrelationPyramid pyr = build_volume(f1, f2, 3);
  REQUIRE(pyr.levels[1].tgt_rows == 4);
  REQUIRE(pyr.levels[2].tgt_rows == 2);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      for (int k = 0; k < 4; ++k)
        for (int l = 0; l < 4; ++l) {
          double mean = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              mean += pyr.levels[0].at(i, j, 2 * k + dy, 2 * l + dx);
          mean /= 4.0;
          CHECK(std::abs(pyr.levels[1].at(i, j, k, l) - mean) < 1e-6);
        }
}

TEST_CASE("volume symmetry under argument swap") {
  FeatureMap f1 = random_unit_features(6, 5, 8, 41);
  FeatureMap f2 = random_unit_features(6, 5, 8, 42);
  CorrelationPyramid a = build_volume(f1, f2, 1);
  CorrelationPyramid b = build_volume(f2, f1, 1);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 5; ++j)
      for (int k = 0; k < 6; ++k)
        for (int l = 0; l < 5; ++l)
          CHECK(std::abs(a.levels[0].at(i, j, k, l) - b.levels[0].at(k, l, i, j)) < 1e-12);
}

TEST_CASE("level-0 correlations stay within [-1, 1] for unit features") {
  FeatureMap f1 = random_unit_features(8, 8, 32, 51);
  FeatureMap f2 = random_unit_features(8, 8, 32, 52);
  CorrelationPyramid pyr = build_volume(f1, f2, 1);
  for (float v : pyr.levels[0].v) {
    CHECK(v <= 1.f + 1e-6f);
    CHECK(v >= -1.f - 1e-6f);
  }
}

TEST_CASE("lookup equals a naive gather loop") {
  FeatureMap f1 = random_unit_features(8, 8, 8, 61);
  FeatureMap f2 = random_unit_features(8, 8, 8, 62);
  CorrelationPyramid pyr = build_volume(f1, f2, 3);

  FlowField flow(8, 8);
  CounterRng rng(63, "flow");
  for (size_t i = 0; i < flow.du.size(); ++i) {
    flow.du[i] = rng.uniform(-12, 12);
    flow.dv[i] = rng.uniform(-12, 12);
    flow.valid.raw()[i] = 1;
  }
  const int radius = 3;
  LookupWindow win = lookup(pyr, flow, radius);

  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      size_t fi = flow.idx(i, j);
      for (int lev = 0; lev < 3; ++lev) {
        const auto& vol = pyr.levels[lev];
        double cx = (j + flow.du[fi] / 8.0) / (1 << lev);
        double cy = (i + flow.dv[fi] / 8.0) / (1 << lev);
        for (int dy = -radius; dy <= radius; ++dy) {
          for (int dx = -radius; dx <= radius; ++dx) {
            double x = std::clamp(cx + dx, 0.0, vol.tgt_cols - 1.0);
            double y = std::clamp(cy + dy, 0.0, vol.tgt_rows - 1.0);
            int x0 = std::min(static_cast<int>(x), vol.tgt_cols - 1);
            int y0 = std::min(static_cast<int>(y), vol.tgt_rows - 1);
            int x1 = std::min(x0 + 1, vol.tgt_cols - 1);
            int y1 = std::min(y0 + 1, vol.tgt_rows - 1);
            double fx = x - x0, fy = y - y0;
            double expect =
                (1 - fy) * ((1 - fx) * vol.at(i, j, y0, x0) + fx * vol.at(i, j, y0, x1)) +
                fy * ((1 - fx) * vol.at(i, j, y1, x0) + fx * vol.at(i, j, y1, x1));
            CHECK(std::abs(win.at(i, j, lev, dy, dx) - expect) < 1e-6);
          }
        }
      }
    }
  }
}

TEST_CASE("zero-flow lookup centers on the self-correlation peak") {
  FeatureMap f = injective_features(12, 12);
  CorrelationPyramid pyr = build_volume(f, f, 2);
  FlowField zero(12, 12);
  LookupWindow win = lookup(pyr, zero, 4);
  for (int i = 0; i < 12; ++i) {
    for (int j = 0; j < 12; ++j) {
      float center = win.at(i, j, 0, 0, 0);
      CHECK(center == doctest::Approx(1.0));
      for (int dy = -4; dy <= 4; ++dy)
        for (int dx = -4; dx <= 4; ++dx)
          CHECK(win.at(i, j, 0, dy, dx) <= center + 1e-6f);
    }
  }
}

TEST_CASE("integer-cell shift is recovered exactly at the window center") {
  // f2 is f1 shifted right by 2 cells; guide the lookup with the true flow
  const int rows = 10, cols = 10, shift = 2;
  FeatureMap f1 = injective_features(rows, cols);
  FeatureMap f2(rows, cols, f1.channels);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      int src = c - shift;
      if (src < 0) src += cols;
      auto a = f1.at(r, src);
      auto b = f2.at(r, c);
      std::copy(a.begin(), a.end(), b.begin());
    }
  CorrelationPyramid pyr = build_volume(f1, f2, 1);
  FlowField flow(rows, cols);
  for (size_t i = 0; i < flow.du.size(); ++i) {
    flow.du[i] = shift * 8.0;  // full-res px
    flow.valid.raw()[i] = 1;
  }
  LookupWindow win = lookup(pyr, flow, 2);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j + shift < cols; ++j)
      CHECK(win.at(i, j, 0, 0, 0) == doctest::Approx(1.0));
}

TEST_CASE("lookup is linear in the volume") {
  FeatureMap f1 = random_unit_features(6, 6, 8, 71);
  FeatureMap f2 = random_unit_features(6, 6, 8, 72);
  CorrelationPyramid pyr = build_volume(f1, f2, 2);
  CorrelationPyramid scaled = pyr;
  const float alpha = 2.5f;
  for (auto& lev : scaled.levels)
    for (auto& v : lev.v) v *= alpha;

  FlowField flow(6, 6);
  CounterRng rng(73, "lin");
  for (size_t i = 0; i < flow.du.size(); ++i) {
    flow.du[i] = rng.uniform(-6, 6);
    flow.dv[i] = rng.uniform(-6, 6);
    flow.valid.raw()[i] = 1;
  }
  LookupWindow a = lookup(pyr, flow, 3);
  LookupWindow b = lookup(scaled, flow, 3);
  REQUIRE(a.data.size() == b.data.size());
  for (size_t i = 0; i < a.data.size(); ++i)
    CHECK(std::abs(alpha * a.data[i] - b.data[i]) < 1e-5f);
}

TEST_CASE("dimension mismatches are rejected") {
  FeatureMap f1 = random_unit_features(4, 4, 8, 81);
  FeatureMap f2 = random_unit_features(4, 5, 8, 82);
  CHECK_THROWS_AS(build_volume(f1, f2, 2), Error);

  GrayImage rgb(60, 64, 0.0);  // not a multiple of 8
  DepthMap depth(60, 64, 0.0);
  CHECK_THROWS_AS(extract_features(rgb, depth, kCam), Error);

  CorrelationPyramid pyr = build_volume(f1, random_unit_features(4, 4, 8, 83), 2);
  FlowField wrong(3, 3);
  CHECK_THROWS_AS(lookup(pyr, wrong, 2), Error);
}
