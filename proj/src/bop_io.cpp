#include "poseflow/bop_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "poseflow/mesh.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace poseflow {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngImage {
  int width = 0, height = 0, bit_depth = 0, channels = 0;
  std::vector<std::uint16_t> pixels;  // channel-interleaved, widened to 16 bits
};

PngImage read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error(ErrorCode::MissingFile, path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::IoError, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::ParseError, path + ": png decode failed");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w, h;
  int bit_depth, color_type;
  png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // PNG is big-endian on disk
  png_read_update_info(png, info);

  PngImage img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.bit_depth = png_get_bit_depth(png, info);
  img.channels = png_get_channels(png, info);

  const size_t row_bytes = png_get_rowbytes(png, info);
  std::vector<std::uint8_t> raw(row_bytes * h);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = raw.data() + r * row_bytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  img.pixels.resize(static_cast<size_t>(img.width) * img.height * img.channels);
  if (img.bit_depth == 16) {
    const auto* p16 = reinterpret_cast<const std::uint16_t*>(raw.data());
    std::copy(p16, p16 + img.pixels.size(), img.pixels.begin());
  } else {
    for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = raw[i];
  }
  return img;
}

void write_png16_gray(const std::string& path, int width, int height,
                      const std::vector<std::uint16_t>& pixels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, path + ": png encode failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_set_swap(png);
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r)
    rows[r] = reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(pixels.data()) +
                                          static_cast<size_t>(r) * width);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_png8_gray(const std::string& path, int width, int height,
                     const std::vector<std::uint8_t>& pixels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, path + ": png encode failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r)
    rows[r] = const_cast<std::uint8_t*>(pixels.data()) + static_cast<size_t>(r) * width;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedJson, path + ": " + e.what());
  }
}

std::string zero_pad(int v, int width) {
  std::ostringstream os;
  os.width(width);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace

DepthMap read_depth_png(const std::string& path, double depth_scale) {
  PngImage img = read_png(path);
  if (img.channels != 1)
    throw Error(ErrorCode::ParseError, path + ": depth png must be single-channel");
  DepthMap depth(img.height, img.width, 0.0);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    depth.raw()[i] = img.pixels[i] * depth_scale;
  return depth;
}

void write_depth_png(const std::string& path, const DepthMap& depth, double depth_scale) {
  std::vector<std::uint16_t> px(depth.size());
  for (size_t i = 0; i < px.size(); ++i) {
    double v = depth.raw()[i] / depth_scale;
    px[i] = static_cast<std::uint16_t>(std::clamp(std::llround(v), 0ll, 65535ll));
  }
  write_png16_gray(path, depth.cols(), depth.rows(), px);
}

GrayImage read_gray_png(const std::string& path) {
  PngImage img = read_png(path);
  const double maxv = img.bit_depth == 16 ? 65535.0 : 255.0;
  GrayImage out(img.height, img.width, 0.0);
  for (size_t i = 0; i < out.size(); ++i) {
    if (img.channels >= 3) {
      double r = img.pixels[i * img.channels];
      double g = img.pixels[i * img.channels + 1];
      double b = img.pixels[i * img.channels + 2];
      out.raw()[i] = (0.299 * r + 0.587 * g + 0.114 * b) / maxv;
    } else {
      out.raw()[i] = img.pixels[i * img.channels] / maxv;
    }
  }
  return out;
}

void write_gray_png(const std::string& path, const GrayImage& img) {
  std::vector<std::uint8_t> px(img.size());
  for (size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<std::uint8_t>(std::clamp(std::llround(img.raw()[i] * 255.0), 0ll, 255ll));
  write_png8_gray(path, img.cols(), img.rows(), px);
}

BopFrame load_bop_scene(const std::string& root, int scene_id, int im_id) {
  fs::path scene_dir = fs::path(root) / zero_pad(scene_id, 6);
  if (!fs::exists(scene_dir)) throw Error(ErrorCode::MissingFile, scene_dir.string());

  const std::string im_key = std::to_string(im_id);
  json cam = load_json((scene_dir / "scene_camera.json").string());
  if (!cam.contains(im_key))
    throw Error(ErrorCode::MalformedJson,
                (scene_dir / "scene_camera.json").string() + ": no entry for image " + im_key);

  BopFrame frame;
  try {
    auto k = cam[im_key]["cam_K"];
    frame.camera.fx = k[0].get<double>();
    frame.camera.cx = k[2].get<double>();
    frame.camera.fy = k[4].get<double>();
    frame.camera.cy = k[5].get<double>();
    frame.depth_scale = cam[im_key].value("depth_scale", 1.0);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedJson,
                (scene_dir / "scene_camera.json").string() + ": " + e.what());
  }

  fs::path depth_path = scene_dir / "depth" / (zero_pad(im_id, 6) + ".png");
  if (!fs::exists(depth_path)) throw Error(ErrorCode::MissingFile, depth_path.string());
  frame.depth = read_depth_png(depth_path.string(), frame.depth_scale);
  frame.camera.width = frame.depth.cols();
  frame.camera.height = frame.depth.rows();

  fs::path rgb_path = scene_dir / "rgb" / (zero_pad(im_id, 6) + ".png");
  if (fs::exists(rgb_path)) {
    frame.rgb = read_gray_png(rgb_path.string());
  } else {
    frame.rgb = GrayImage(frame.camera.height, frame.camera.width, 0.0);
  }

  fs::path gt_path = scene_dir / "scene_gt.json";
  if (!fs::exists(gt_path)) throw Error(ErrorCode::MissingFile, gt_path.string());
  json gt = load_json(gt_path.string());
  if (gt.contains(im_key)) {
    try {
      for (const auto& e : gt[im_key]) {
        BopGtEntry entry;
        entry.obj_id = e["obj_id"].get<int>();
        auto r = e["cam_R_m2c"];
        auto t = e["cam_t_m2c"];
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) entry.pose.R(i, j) = r[i * 3 + j].get<double>();
        for (int i = 0; i < 3; ++i) entry.pose.t(i) = t[i].get<double>();
        if (orthonormality_drift(entry.pose.R) > 1e-4) {
          std::cerr << "warning: " << gt_path.string() << " image " << im_key << " obj "
                    << entry.obj_id << ": rotation not orthonormal, repairing\n";
          entry.pose.R = orthonormalize(entry.pose.R);
        }
        frame.gt.push_back(entry);
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedJson, gt_path.string() + ": " + e.what());
    }
  }
  return frame;
}

void write_bop_results(const std::string& path, const std::vector<BopResultRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  out << "scene_id,im_id,obj_id,score,R,t,time\n";
  out.precision(17);
  for (const auto& row : rows) {
    if (orthonormality_drift(row.pose.R) > 1e-6)
      throw Error(ErrorCode::DegenerateConfiguration, "result rotation is not orthonormal");
    out << row.scene_id << "," << row.im_id << "," << row.obj_id << "," << row.score << ",";
    for (int i = 0; i < 9; ++i) out << (i ? " " : "") << row.pose.R(i / 3, i % 3);
    out << ",";
    for (int i = 0; i < 3; ++i) out << (i ? " " : "") << row.pose.t(i);
    out << "," << row.time_s << "\n";
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

std::vector<BopResultRow> read_bop_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path);
  std::vector<BopResultRow> rows;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || lineno == 1) continue;  // header
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 7)
      throw Error(ErrorCode::ParseError,
                  path + ":" + std::to_string(lineno) + ": expected 7 fields");
    BopResultRow row;
    try {
      row.scene_id = std::stoi(fields[0]);
      row.im_id = std::stoi(fields[1]);
      row.obj_id = std::stoi(fields[2]);
      row.score = std::stod(fields[3]);
      std::istringstream rs(fields[4]);
      for (int i = 0; i < 9; ++i) rs >> row.pose.R(i / 3, i % 3);
      if (!rs) throw std::runtime_error("bad R field");
      std::istringstream ts(fields[5]);
      for (int i = 0; i < 3; ++i) ts >> row.pose.t(i);
      if (!ts) throw std::runtime_error("bad t field");
      row.time_s = std::stod(fields[6]);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::ParseError, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<std::pair<int, ObjectInfo>> load_models_info(const std::string& path,
                                                         int continuous_steps) {
  json j = load_json(path);
  std::vector<std::pair<int, ObjectInfo>> out;
  try {
    for (const auto& [key, val] : j.items()) {
      ObjectInfo info;
      info.diameter_mm = val.value("diameter", 0.0);
      if (val.contains("symmetries_discrete")) {
        for (const auto& m : val["symmetries_discrete"]) {
          Pose s;
          for (int i = 0; i < 3; ++i) {
            for (int c = 0; c < 3; ++c) s.R(i, c) = m[i * 4 + c].get<double>();
            s.t(i) = m[i * 4 + 3].get<double>();
          }
          if (orthonormality_drift(s.R) > 1e-4) s.R = orthonormalize(s.R);
          info.symmetries.add(s);
        }
      }
      if (val.contains("symmetries_continuous")) {
        for (const auto& m : val["symmetries_continuous"]) {
          Eigen::Vector3d axis(m["axis"][0].get<double>(), m["axis"][1].get<double>(),
                               m["axis"][2].get<double>());
          axis.normalize();
          for (int s = 1; s < continuous_steps; ++s) {
            double ang = 2.0 * M_PI * s / continuous_steps;
            Pose sym;
            sym.R = Eigen::AngleAxisd(ang, axis).toRotationMatrix();
            info.symmetries.add(sym);
          }
        }
      }
      out.emplace_back(std::stoi(key), std::move(info));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedJson, path + ": " + e.what());
  }
  return out;
}

void write_bop_scenes(const std::string& root, int scene_id,
                      const std::vector<SyntheticScene>& scenes, double depth_scale) {
  fs::path scene_dir = fs::path(root) / zero_pad(scene_id, 6);
  fs::create_directories(scene_dir / "depth");
  fs::create_directories(scene_dir / "rgb");
  fs::create_directories(fs::path(root) / "models");

  json cam_json = json::object();
  json gt_json = json::object();
  json models_info = json::object();

  for (size_t i = 0; i < scenes.size(); ++i) {
    const auto& s = scenes[i];
    const int im_id = static_cast<int>(i);
    write_depth_png((scene_dir / "depth" / (zero_pad(im_id, 6) + ".png")).string(), s.depth,
                    depth_scale);
    write_gray_png((scene_dir / "rgb" / (zero_pad(im_id, 6) + ".png")).string(), s.rgb);

    json k = json::array({s.camera.fx, 0.0, s.camera.cx, 0.0, s.camera.fy, s.camera.cy, 0.0, 0.0,
                          1.0});
    cam_json[std::to_string(im_id)] = {{"cam_K", k}, {"depth_scale", depth_scale}};

    const int obj_id = im_id + 1;
    json r = json::array();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) r.push_back(s.gt.R(a, b));
    json t = json::array({s.gt.t.x(), s.gt.t.y(), s.gt.t.z()});
    gt_json[std::to_string(im_id)] =
        json::array({{{"obj_id", obj_id}, {"cam_R_m2c", r}, {"cam_t_m2c", t}}});

    save_mesh_ply((fs::path(root) / "models" / ("obj_" + zero_pad(obj_id, 6) + ".ply")).string(),
                  s.mesh);
    models_info[std::to_string(obj_id)] = {{"diameter", s.mesh.diameter}};
  }

  std::ofstream(scene_dir / "scene_camera.json") << cam_json.dump(1) << "\n";
  std::ofstream(scene_dir / "scene_gt.json") << gt_json.dump(1) << "\n";
  std::ofstream(fs::path(root) / "models" / "models_info.json") << models_info.dump(1) << "\n";
}

}  // namespace poseflow
