#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace poseflow {

enum class ErrorCode {
  DegenerateInput,
  InvalidDepth,
  NearPiRotation,
  DegenerateConfiguration,
  ParseError,
  EmptyMesh,
  OutOfView,
  DimensionMismatch,
  TooFewValidPixels,
  TooFewCells,
  TooFewCorrespondences,
  NoConsensus,
  EmptyMask,
  EmptyUnion,
  EmptyDataset,
  LengthMismatch,
  MissingFile,
  MalformedJson,
  ShapeMismatch,
  IoError,
};

const char* error_code_name(ErrorCode code);

/// Library error; what() is "<CodeName>: <detail>" so CLI output stays
/// machine-parsable as a single line.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

/// Dense row-major 2D grid. Image convention: row 0 is the top row,
/// pixel (r, c) covers the continuous square [c, c+1) x [r, r+1) with
/// center (u, v) = (c + 0.5, r + 0.5).
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int rows, int cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return data_.empty(); }
  size_t size() const { return data_.size(); }

  T& at(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  const T& at(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

  bool in_bounds(int r, int c) const { return r >= 0 && r < rows_ && c >= 0 && c < cols_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  bool same_shape(int rows, int cols) const { return rows_ == rows && cols_ == cols; }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

/// Depth in millimeters; 0 marks an invalid pixel (no return).
using DepthMap = Grid<double>;
/// Grayscale intensity in [0, 1].
using GrayImage = Grid<double>;
using Mask = Grid<std::uint8_t>;

}  // namespace poseflow
