#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "macp/tensor.hpp"

namespace macp {

constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle into (-pi, pi].
double normalize_angle(double a);

struct Point {
  double x = 0, y = 0, z = 0, intensity = 0;
};

struct PointCloud {
  std::vector<Point> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Planar vehicle pose in the world frame.
struct Pose2D {
  double x = 0, y = 0, yaw = 0;

  static Pose2D of(double x, double y, double yaw) { return {x, y, normalize_angle(yaw)}; }
};

struct Vec2 {
  double x = 0, y = 0;
};

/// Maps a point expressed in the frame of `from` into the frame of `to`.
Vec2 change_frame(Vec2 p, const Pose2D& from, const Pose2D& to);

PointCloud transform_points(const PointCloud& cloud, const Pose2D& from, const Pose2D& to);

/// Oriented rectangle in the BEV plane; `l` runs along the heading.
struct Box2D {
  double x = 0, y = 0, l = 1, w = 1, yaw = 0;
};

Box2D transform_box(const Box2D& box, const Pose2D& from, const Pose2D& to);

struct VoxelConfig {
  double origin_x = -32.0, origin_y = -32.0;
  double cell_x = 0.5, cell_y = 0.5;
  int rows = 128, cols = 128;  ///< rows index x, cols index y
  int channels = 2;

  void validate() const;
  double row_center(int r) const { return origin_x + (r + 0.5) * cell_x; }
  double col_center(int c) const { return origin_y + (c + 0.5) * cell_y; }
};

struct Cell {
  int row = 0, col = 0;
  friend bool operator==(Cell a, Cell b) { return a.row == b.row && a.col == b.col; }
};

/// Immutable set of occupied cells with O(1) average coordinate lookup.
class SparseLayout {
 public:
  explicit SparseLayout(std::vector<Cell> coords);

  const std::vector<Cell>& coords() const { return coords_; }
  std::size_t size() const { return coords_.size(); }
  /// Slot of `c`, or -1 when the cell is not occupied.
  int find(Cell c) const;

 private:
  static std::int64_t key(Cell c) {
    return (static_cast<std::int64_t>(c.row) << 32) ^ static_cast<std::uint32_t>(c.col);
  }
  std::vector<Cell> coords_;
  std::unordered_map<std::int64_t, int> index_;
};

struct SparseTensor {
  std::shared_ptr<const SparseLayout> layout;
  std::vector<double> feats;  ///< size() x channels, row-major
  int channels = 0;

  SparseTensor() : layout(std::make_shared<SparseLayout>(std::vector<Cell>{})) {}
  SparseTensor(std::shared_ptr<const SparseLayout> l, std::vector<double> f, int c);

  std::size_t size() const { return layout->size(); }
  std::span<const double> feature(std::size_t i) const {
    return {feats.data() + i * static_cast<std::size_t>(channels), static_cast<std::size_t>(channels)};
  }
};

/// H x W x C feature map, row-major with channels innermost.
struct DenseGrid {
  int rows = 0, cols = 0, channels = 0;
  std::vector<double> values;

  DenseGrid() = default;
  DenseGrid(int h, int w, int c, double fill = 0.0)
      : rows(h), cols(w), channels(c), values(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t index(int r, int c, int ch) const {
    return (static_cast<std::size_t>(r) * cols + c) * channels + ch;
  }
  double& at(int r, int c, int ch) { return values[index(r, c, ch)]; }
  double at(int r, int c, int ch) const { return values[index(r, c, ch)]; }

  Tensor to_tensor() const& { return Tensor({rows, cols, channels}, values); }
  static DenseGrid from_tensor(const Tensor& t);
};

class OutOfBounds : public Error {
 public:
  using Error::Error;
};

/// Bins points into half-open pillars. Features per pillar: [min(n/16, 1), mean intensity].
SparseTensor voxelize(const PointCloud& cloud, const VoxelConfig& cfg);

DenseGrid to_dense(const SparseTensor& st, const VoxelConfig& cfg);

// Point-cloud frame files: "MACPPC01" followed by (x, y, z, intensity) as
// little-endian float32 records.
void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_point_cloud(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_point_cloud(const PointCloud& cloud);
PointCloud decode_point_cloud(std::span<const std::uint8_t> bytes);
/// Rounds every field to float32, the precision clouds are stored at.
Point to_file_precision(const Point& p);

}  // namespace macp
