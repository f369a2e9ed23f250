#include "macp/geom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "macp/bytes.hpp"

namespace macp {

double normalize_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

Vec2 change_frame(Vec2 p, const Pose2D& from, const Pose2D& to) {
  const double cf = std::cos(from.yaw), sf = std::sin(from.yaw);
  const double wx = cf * p.x - sf * p.y + from.x;
  const double wy = sf * p.x + cf * p.y + from.y;
  const double dx = wx - to.x, dy = wy - to.y;
  const double ct = std::cos(to.yaw), st = std::sin(to.yaw);
  return {ct * dx + st * dy, -st * dx + ct * dy};
}

PointCloud transform_points(const PointCloud& cloud, const Pose2D& from, const Pose2D& to) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const Point& p : cloud.points) {
    const Vec2 q = change_frame({p.x, p.y}, from, to);
    out.points.push_back({q.x, q.y, p.z, p.intensity});
  }
  return out;
}

Box2D transform_box(const Box2D& box, const Pose2D& from, const Pose2D& to) {
  const Vec2 c = change_frame({box.x, box.y}, from, to);
  return {c.x, c.y, box.l, box.w, normalize_angle(box.yaw + from.yaw - to.yaw)};
}

void VoxelConfig::validate() const {
  if (!(cell_x > 0) || !(cell_y > 0)) throw Error("voxel config: cell sizes must be positive");
  if (rows < 1 || cols < 1) throw Error("voxel config: extent must be at least 1x1");
  if (channels < 1) throw Error("voxel config: channels must be positive");
  if (!std::isfinite(origin_x) || !std::isfinite(origin_y)) throw Error("voxel config: origin not finite");
}

SparseLayout::SparseLayout(std::vector<Cell> coords) : coords_(std::move(coords)) {
  index_.reserve(coords_.size());
  for (std::size_t i = 0; i < coords_.size(); ++i) {
    if (!index_.emplace(key(coords_[i]), static_cast<int>(i)).second)
      throw Error("sparse layout: duplicate coordinate (" + std::to_string(coords_[i].row) + "," +
                  std::to_string(coords_[i].col) + ")");
  }
}

int SparseLayout::find(Cell c) const {
  auto it = index_.find(key(c));
  return it == index_.end() ? -1 : it->second;
}

SparseTensor::SparseTensor(std::shared_ptr<const SparseLayout> l, std::vector<double> f, int c)
    : layout(std::move(l)), feats(std::move(f)), channels(c) {
  if (!layout) throw Error("sparse tensor: null layout");
  if (c < 1 || feats.size() != layout->size() * static_cast<std::size_t>(c))
    throw Error("sparse tensor: feature count does not match layout");
}

DenseGrid DenseGrid::from_tensor(const Tensor& t) {
  if (t.shape.size() != 3) throw Error("dense grid: expected rank-3 tensor, got " + shape_str(t.shape));
  DenseGrid g;
  g.rows = t.shape[0];
  g.cols = t.shape[1];
  g.channels = t.shape[2];
  g.values = t.data;
  return g;
}

SparseTensor voxelize(const PointCloud& cloud, const VoxelConfig& cfg) {
  cfg.validate();
  struct Acc {
    int count = 0;
    double intensity = 0;
  };
  std::unordered_map<std::int64_t, Acc> bins;
  std::vector<Cell> cells;
  for (const Point& p : cloud.points) {
    const double fr = std::floor((p.x - cfg.origin_x) / cfg.cell_x);
    const double fc = std::floor((p.y - cfg.origin_y) / cfg.cell_y);
    if (!(fr >= 0 && fr < cfg.rows && fc >= 0 && fc < cfg.cols)) continue;
    const Cell cell{static_cast<int>(fr), static_cast<int>(fc)};
    const std::int64_t k = static_cast<std::int64_t>(cell.row) * cfg.cols + cell.col;
    auto [it, inserted] = bins.try_emplace(k);
    if (inserted) cells.push_back(cell);
    it->second.count += 1;
    it->second.intensity += p.intensity;
  }
  std::sort(cells.begin(), cells.end(),
            [](Cell a, Cell b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
  std::vector<double> feats;
  feats.reserve(cells.size() * 2);
  for (Cell c : cells) {
    const Acc& a = bins.at(static_cast<std::int64_t>(c.row) * cfg.cols + c.col);
    feats.push_back(std::min(a.count / 16.0, 1.0));
    feats.push_back(a.intensity / a.count);
  }
  return SparseTensor(std::make_shared<SparseLayout>(std::move(cells)), std::move(feats), 2);
}

DenseGrid to_dense(const SparseTensor& st, const VoxelConfig& cfg) {
  DenseGrid g(cfg.rows, cfg.cols, st.channels);
  const auto& coords = st.layout->coords();
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const Cell c = coords[i];
    if (c.row < 0 || c.row >= cfg.rows || c.col < 0 || c.col >= cfg.cols)
      throw OutOfBounds("to_dense: coordinate (" + std::to_string(c.row) + "," + std::to_string(c.col) +
                        ") outside " + std::to_string(cfg.rows) + "x" + std::to_string(cfg.cols));
    std::copy_n(st.feats.begin() + static_cast<std::ptrdiff_t>(i * st.channels), st.channels,
                g.values.begin() + static_cast<std::ptrdiff_t>(g.index(c.row, c.col, 0)));
  }
  return g;
}

namespace {
constexpr std::string_view kCloudMagic = "MACPPC01";
}

std::vector<std::uint8_t> encode_point_cloud(const PointCloud& cloud) {
  bytes::Writer w;
  w.raw(kCloudMagic);
  for (const Point& p : cloud.points) {
    w.f32(static_cast<float>(p.x));
    w.f32(static_cast<float>(p.y));
    w.f32(static_cast<float>(p.z));
    w.f32(static_cast<float>(p.intensity));
  }
  return w.take();
}

PointCloud decode_point_cloud(std::span<const std::uint8_t> data) {
  bytes::Reader r(data);
  if (!r.has(kCloudMagic.size()) || r.raw(kCloudMagic.size()) != kCloudMagic)
    throw Error("point cloud: bad magic");
  if (r.remaining() % 16 != 0) throw bytes::Truncated("point cloud: trailing partial record");
  PointCloud cloud;
  cloud.points.reserve(r.remaining() / 16);
  while (r.remaining() > 0) {
    Point p;
    p.x = r.f32();
    p.y = r.f32();
    p.z = r.f32();
    p.intensity = r.f32();
    cloud.points.push_back(p);
  }
  return cloud;
}

Point to_file_precision(const Point& p) {
  // Through memory: gcc 11 -O3 with AVX-512 drops a plain double->float->double round trip here.
  volatile float f[4] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z),
                         static_cast<float>(p.intensity)};
  return {f[0], f[1], f[2], f[3]};
}

void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  bytes::write_file(path.string(), encode_point_cloud(cloud));
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
  return decode_point_cloud(bytes::read_file(path.string()));
}

namespace bytes {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace bytes

}  // namespace macp
