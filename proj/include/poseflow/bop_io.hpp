#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "poseflow/core.hpp"
#include "poseflow/geometry.hpp"
#include "poseflow/metrics.hpp"
#include "poseflow/synthetic.hpp"

namespace poseflow {

/// 16-bit grayscale PNG; stored value * depth_scale = millimeters.
DepthMap read_depth_png(const std::string& path, double depth_scale);
void write_depth_png(const std::string& path, const DepthMap& depth, double depth_scale);

/// 8- or 16-bit PNG, gray or RGB (RGB converted by BT.601 luma); values in [0, 1].
GrayImage read_gray_png(const std::string& path);
void write_gray_png(const std::string& path, const GrayImage& img);

struct BopGtEntry {
  int obj_id = 0;
  Pose pose;
};

struct BopFrame {
  GrayImage rgb;
  DepthMap depth;
  Intrinsics camera;
  double depth_scale = 1.0;
  std::vector<BopGtEntry> gt;
};

/// Reads scene_camera.json / scene_gt.json / depth / rgb for one image of a
/// BOP-layout scene directory. GT rotations are validated to 1e-4
/// orthonormality and repaired by polar decomposition with a warning on
/// stderr. Throws MissingFile / MalformedJson with path context.
BopFrame load_bop_scene(const std::string& root, int scene_id, int im_id);

struct BopResultRow {
  int scene_id = 0;
  int im_id = 0;
  int obj_id = 0;
  double score = 1.0;
  Pose pose;        // R row-major, t in mm
  double time_s = -1;
};

/// CSV with header scene_id,im_id,obj_id,score,R,t,time; R and t are
/// space-separated floats inside their comma-separated fields.
void write_bop_results(const std::string& path, const std::vector<BopResultRow>& rows);
std::vector<BopResultRow> read_bop_results(const std::string& path);

/// Per-object metadata sidecar (diameter, optional discrete symmetries and a
/// continuous axis discretized on load).
struct ObjectInfo {
  double diameter_mm = 0;
  SymmetrySet symmetries;
};

/// models_info.json: { "<obj_id>": { "diameter": mm, "symmetries_discrete":
/// [16 floats...], "symmetries_continuous": [{"axis":[x,y,z]}] } }
std::vector<std::pair<int, ObjectInfo>> load_models_info(const std::string& path,
                                                         int continuous_steps = 36);

/// Writes a synthetic scene set as a BOP-layout dataset (scene_camera.json,
/// scene_gt.json, 16-bit depth PNGs, 8-bit gray rgb PNGs, models/*.ply).
void write_bop_scenes(const std::string& root, int scene_id,
                      const std::vector<SyntheticScene>& scenes, double depth_scale = 0.1);

}  // namespace poseflow
