#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "poseflow/core.hpp"

namespace poseflow {

/// Triangle mesh in the object frame, millimeters. Immutable after build.
struct TriMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<std::int32_t, 3>> faces;
  double diameter = 0;  // max pairwise vertex distance
};

enum class MeshFormat { Obj, Ply };

/// Builds a mesh from raw arrays, validating indices and coordinates and
/// caching the diameter. Throws ParseError / EmptyMesh.
TriMesh make_mesh(std::vector<Eigen::Vector3d> vertices,
                  std::vector<std::array<std::int32_t, 3>> faces);

/// OBJ (v/f records) or PLY (ascii and binary little-endian) reader.
TriMesh load_mesh(const std::string& path, MeshFormat format);
/// Format deduced from the file extension (.obj / .ply).
TriMesh load_mesh(const std::string& path);

void save_mesh_ply(const std::string& path, const TriMesh& mesh);

/// Max pairwise distance. Exact up to `exact_limit` vertices, then computed
/// on a farthest-point subsample of that size.
double mesh_diameter(const std::vector<Eigen::Vector3d>& vertices, int exact_limit = 8192);

/// Deterministic farthest-point sampling; returns min(count, n) points.
std::vector<Eigen::Vector3d> farthest_point_sample(const std::vector<Eigen::Vector3d>& points,
                                                   int count, std::uint64_t seed);

}  // namespace poseflow
