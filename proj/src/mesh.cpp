#include "poseflow/mesh.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "poseflow/rng.hpp"

namespace poseflow {

namespace {

[[noreturn]] void parse_fail(const std::string& path, size_t line, const std::string& what) {
  throw Error(ErrorCode::ParseError, path + ":" + std::to_string(line) + ": " + what);
}

struct PlyProperty {
  std::string name;
  std::string type;       // scalar type, or list value type
  std::string count_type; // non-empty for list properties
  bool is_list = false;
};

size_t scalar_size(const std::string& type) {
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
  if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
  if (type == "int" || type == "uint" || type == "int32" || type == "uint32" || type == "float" ||
      type == "float32")
    return 4;
  if (type == "double" || type == "float64") return 8;
  return 0;
}

double read_scalar_binary(std::istream& in, const std::string& type) {
  auto rd = [&](auto v) -> double {
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return static_cast<double>(v);
  };
  if (type == "char" || type == "int8") return rd(std::int8_t{});
  if (type == "uchar" || type == "uint8") return rd(std::uint8_t{});
  if (type == "short" || type == "int16") return rd(std::int16_t{});
  if (type == "ushort" || type == "uint16") return rd(std::uint16_t{});
  if (type == "int" || type == "int32") return rd(std::int32_t{});
  if (type == "uint" || type == "uint32") return rd(std::uint32_t{});
  if (type == "float" || type == "float32") return rd(float{});
  return rd(double{});
}

TriMesh load_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path);

  std::string line;
  size_t lineno = 0;
  auto next_line = [&]() -> std::string& {
    if (!std::getline(in, line)) parse_fail(path, lineno, "unexpected end of header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++lineno;
    return line;
  };

  if (next_line() != "ply") parse_fail(path, lineno, "missing ply magic");

  bool binary = false;
  struct Element {
    std::string name;
    size_t count = 0;
    std::vector<PlyProperty> props;
  };
  std::vector<Element> elements;

  for (;;) {
    std::istringstream ls(next_line());
    std::string tok;
    ls >> tok;
    if (tok == "comment" || tok == "obj_info" || tok.empty()) continue;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") binary = true;
      else if (fmt != "ascii") parse_fail(path, lineno, "unsupported format " + fmt);
    } else if (tok == "element") {
      Element e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (tok == "property") {
      if (elements.empty()) parse_fail(path, lineno, "property before element");
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        p.is_list = true;
        ls >> p.count_type >> p.type >> p.name;
      } else {
        p.type = t;
        ls >> p.name;
      }
      if (scalar_size(p.type) == 0 || (p.is_list && scalar_size(p.count_type) == 0))
        parse_fail(path, lineno, "unknown property type");
      elements.back().props.push_back(p);
    } else if (tok == "end_header") {
      break;
    } else {
      parse_fail(path, lineno, "unknown header token " + tok);
    }
  }

  std::vector<Eigen::Vector3d> verts;
  std::vector<std::array<std::int32_t, 3>> faces;

  auto read_ascii_row = [&](const Element& el, std::vector<std::vector<double>>& out) {
    std::string row;
    if (!std::getline(in, row)) parse_fail(path, lineno, "unexpected end of data");
    ++lineno;
    std::istringstream rs(row);
    out.clear();
    for (const auto& p : el.props) {
      std::vector<double> vals;
      size_t count = 1;
      if (p.is_list) {
        double c;
        if (!(rs >> c)) parse_fail(path, lineno, "bad list count");
        count = static_cast<size_t>(c);
      }
      for (size_t i = 0; i < count; ++i) {
        double v;
        if (!(rs >> v)) parse_fail(path, lineno, "bad value");
        vals.push_back(v);
      }
      out.push_back(std::move(vals));
    }
  };

  for (const auto& el : elements) {
    int ix = -1, iy = -1, iz = -1, iidx = -1;
    for (size_t p = 0; p < el.props.size(); ++p) {
      if (el.props[p].name == "x") ix = static_cast<int>(p);
      if (el.props[p].name == "y") iy = static_cast<int>(p);
      if (el.props[p].name == "z") iz = static_cast<int>(p);
      if (el.props[p].name == "vertex_indices" || el.props[p].name == "vertex_index")
        iidx = static_cast<int>(p);
    }
    bool is_vertex = el.name == "vertex";
    bool is_face = el.name == "face";
    if (is_vertex && (ix < 0 || iy < 0 || iz < 0))
      parse_fail(path, lineno, "vertex element missing x/y/z");
    if (is_face && iidx < 0) parse_fail(path, lineno, "face element missing vertex_indices");

    std::vector<std::vector<double>> row;
    for (size_t r = 0; r < el.count; ++r) {
      row.clear();
      if (binary) {
        for (const auto& p : el.props) {
          std::vector<double> vals;
          size_t count = 1;
          if (p.is_list) count = static_cast<size_t>(read_scalar_binary(in, p.count_type));
          for (size_t i = 0; i < count; ++i) vals.push_back(read_scalar_binary(in, p.type));
          row.push_back(std::move(vals));
        }
        if (!in) parse_fail(path, lineno, "unexpected end of binary data");
      } else {
        read_ascii_row(el, row);
      }
      if (is_vertex) {
        verts.emplace_back(row[ix][0], row[iy][0], row[iz][0]);
      } else if (is_face) {
        const auto& idx = row[iidx];
        if (idx.size() < 3) parse_fail(path, lineno, "face with fewer than 3 indices");
        for (size_t i = 2; i < idx.size(); ++i)  // fan triangulation
          faces.push_back({static_cast<std::int32_t>(idx[0]), static_cast<std::int32_t>(idx[i - 1]),
                           static_cast<std::int32_t>(idx[i])});
      }
    }
  }
  return make_mesh(std::move(verts), std::move(faces));
}

TriMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path);

  std::vector<Eigen::Vector3d> verts;
  std::vector<std::array<std::int32_t, 3>> faces;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    if (tok == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) parse_fail(path, lineno, "bad vertex record");
      verts.emplace_back(x, y, z);
    } else if (tok == "f") {
      std::vector<std::int32_t> idx;
      std::string ref;
      while (ls >> ref) {
        // take the vertex index before any '/'
        size_t slash = ref.find('/');
        std::string head = slash == std::string::npos ? ref : ref.substr(0, slash);
        try {
          long v = std::stol(head);
          if (v < 0) v = static_cast<long>(verts.size()) + v + 1;  // relative reference
          idx.push_back(static_cast<std::int32_t>(v - 1));         // OBJ is 1-based
        } catch (const std::exception&) {
          parse_fail(path, lineno, "bad face index '" + ref + "'");
        }
      }
      if (idx.size() < 3) parse_fail(path, lineno, "face with fewer than 3 indices");
      for (size_t i = 2; i < idx.size(); ++i) faces.push_back({idx[0], idx[i - 1], idx[i]});
    }
    // all other records (vt, vn, usemtl, ...) are ignored
  }
  return make_mesh(std::move(verts), std::move(faces));
}

}  // namespace

TriMesh make_mesh(std::vector<Eigen::Vector3d> vertices,
                  std::vector<std::array<std::int32_t, 3>> faces) {
  if (vertices.empty()) throw Error(ErrorCode::EmptyMesh, "mesh has no vertices");
  for (const auto& v : vertices)
    if (!v.allFinite()) throw Error(ErrorCode::ParseError, "non-finite vertex coordinate");
  const auto n = static_cast<std::int32_t>(vertices.size());
  for (const auto& f : faces)
    for (int i = 0; i < 3; ++i)
      if (f[i] < 0 || f[i] >= n)
        throw Error(ErrorCode::ParseError,
                    "face index " + std::to_string(f[i]) + " out of range [0, " +
                        std::to_string(n) + ")");
  TriMesh m;
  m.vertices = std::move(vertices);
  m.faces = std::move(faces);
  m.diameter = mesh_diameter(m.vertices);
  return m;
}

TriMesh load_mesh(const std::string& path, MeshFormat format) {
  return format == MeshFormat::Obj ? load_obj(path) : load_ply(path);
}

TriMesh load_mesh(const std::string& path) {
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  for (auto& c : ext) c = static_cast<char>(std::tolower(c));
  if (ext == "obj") return load_obj(path);
  if (ext == "ply") return load_ply(path);
  throw Error(ErrorCode::ParseError, "cannot deduce mesh format from '" + path + "'");
}

void save_mesh_ply(const std::string& path, const TriMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << mesh.vertices.size() << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "element face " << mesh.faces.size() << "\n";
  out << "property list uchar int vertex_indices\nend_header\n";
  out.precision(17);
  for (const auto& v : mesh.vertices) out << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& f : mesh.faces) out << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

double mesh_diameter(const std::vector<Eigen::Vector3d>& vertices, int exact_limit) {
  if (vertices.size() < 2) return 0;
  const std::vector<Eigen::Vector3d>* pts = &vertices;
  std::vector<Eigen::Vector3d> sample;
  if (static_cast<int>(vertices.size()) > exact_limit) {
    sample = farthest_point_sample(vertices, exact_limit, 0);
    pts = &sample;
  }
  double best = 0;
  for (size_t i = 0; i < pts->size(); ++i)
    for (size_t j = i + 1; j < pts->size(); ++j)
      best = std::max(best, ((*pts)[i] - (*pts)[j]).squaredNorm());
  return std::sqrt(best);
}

std::vector<Eigen::Vector3d> farthest_point_sample(const std::vector<Eigen::Vector3d>& points,
                                                   int count, std::uint64_t seed) {
  std::vector<Eigen::Vector3d> out;
  if (points.empty() || count <= 0) return out;
  const size_t n = points.size();
  if (static_cast<size_t>(count) >= n) return points;

  CounterRng rng(seed, "fps");
  size_t cur = rng.uniform_index(static_cast<std::uint32_t>(n));
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  out.reserve(count);
  out.push_back(points[cur]);
  for (int k = 1; k < count; ++k) {
    double best = -1;
    size_t arg = 0;
    for (size_t i = 0; i < n; ++i) {
      double d = (points[i] - points[cur]).squaredNorm();
      if (d < dist[i]) dist[i] = d;
      if (dist[i] > best) {
        best = dist[i];
        arg = i;
      }
    }
    cur = arg;
    out.push_back(points[cur]);
  }
  return out;
}

}  // namespace poseflow
