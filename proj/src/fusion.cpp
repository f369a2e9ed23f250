#include "macp/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "macp/eval.hpp"

namespace macp::fusion {

using nn::Tape;
using nn::Var;

std::shared_ptr<const std::vector<int>> warp_indices(const Pose2D& sender, const Pose2D& ego, const VoxelConfig& cfg) {
  auto idx = std::make_shared<std::vector<int>>(static_cast<std::size_t>(cfg.rows) * cfg.cols, -1);
  for (int r = 0; r < cfg.rows; ++r)
    for (int c = 0; c < cfg.cols; ++c) {
      const Vec2 p = change_frame({cfg.row_center(r), cfg.col_center(c)}, ego, sender);
      const double fr = std::floor((p.x - cfg.origin_x) / cfg.cell_x);
      const double fc = std::floor((p.y - cfg.origin_y) / cfg.cell_y);
      if (fr < 0 || fr >= cfg.rows || fc < 0 || fc >= cfg.cols) continue;
      (*idx)[static_cast<std::size_t>(r) * cfg.cols + c] = static_cast<int>(fr) * cfg.cols + static_cast<int>(fc);
    }
  return idx;
}

Var warp_to_ego(Tape& t, Var grid, const Pose2D& sender, const Pose2D& ego, const VoxelConfig& cfg) {
  const Tensor& g = t.value(grid);
  if (g.shape.size() != 3 || g.shape[0] != cfg.rows || g.shape[1] != cfg.cols)
    throw Error("warp_to_ego: grid " + shape_str(g.shape) + " does not match the voxel config");
  return nn::gather_cells(t, grid, warp_indices(sender, ego, cfg), cfg.rows, cfg.cols);
}

DenseGrid warp_to_ego(const DenseGrid& grid, const Pose2D& sender, const Pose2D& ego, const VoxelConfig& cfg) {
  Tape t;
  return DenseGrid::from_tensor(t.value(warp_to_ego(t, t.constant(grid.to_tensor()), sender, ego, cfg)));
}

Var fuse_maps(Tape& t, Var ego, std::span<const Var> others, FusionMethod method, ad::ParamSet* reducer) {
  for (Var o : others)
    if (t.value(o).shape != t.value(ego).shape)
      throw Error("fuse_maps: partner map " + shape_str(t.value(o).shape) + " does not match ego " +
                  shape_str(t.value(ego).shape));
  const double n = static_cast<double>(others.size());
  switch (method) {
    case FusionMethod::weighted_sum:
      if (others.empty()) return ego;
      {
        const Var rest = others.size() == 1 ? others[0] : nn::add_all(t, others);
        const Var terms[] = {ego, nn::scale(t, rest, 1.0 / n)};
        return nn::add_all(t, terms);
      }
    case FusionMethod::mean:
    case FusionMethod::sum: {
      if (others.empty()) return ego;
      std::vector<Var> all{ego};
      all.insert(all.end(), others.begin(), others.end());
      const Var s = nn::add_all(t, all);
      return method == FusionMethod::sum ? s : nn::scale(t, s, 1.0 / (n + 1.0));
    }
    case FusionMethod::concat: {
      if (!reducer) throw Error("fuse_maps: concat needs the reducing conv parameters");
      Var partner;
      if (others.empty())
        partner = t.constant(Tensor(t.value(ego).shape));
      else
        partner = nn::scale(t, others.size() == 1 ? others[0] : nn::add_all(t, others), 1.0 / n);
      const std::string p = names::fusion_reduce();
      return nn::pointwise_conv(t, nn::concat_channels(t, ego, partner), t.param(reducer->at(p + ".w")),
                                t.param(reducer->at(p + ".b")));
    }
  }
  throw Error("fuse_maps: unknown method");
}

DenseGrid fuse_maps(const DenseGrid& ego, std::span<const DenseGrid> others, FusionMethod method,
                    const ad::ParamSet* reducer) {
  Tape t(inference_options());
  std::vector<Var> vs;
  for (const DenseGrid& o : others) vs.push_back(t.constant(o.to_tensor()));
  Var out = fuse_maps(t, t.constant(ego.to_tensor()), vs, method, const_cast<ad::ParamSet*>(reducer));
  return DenseGrid::from_tensor(t.value(out));
}

Var post_fusion_conv(Tape& t, Var grid, ad::ParamSet& ps) {
  const std::string conv = names::fusion_conv(), norm = names::fusion_norm();
  Var c = nn::dense_conv2d(t, grid, t.param(ps.at(conv + ".w")), Var{}, 3);
  c = nn::channel_norm(t, c, t.param(ps.at(norm + ".gamma")), t.param(ps.at(norm + ".beta")));
  return nn::gelu(t, c);
}

DenseGrid post_fusion_conv(const DenseGrid& grid, const Model& m) {
  Tape t(inference_options());
  Var out = post_fusion_conv(t, t.constant(grid.to_tensor()), const_cast<ad::ParamSet&>(m.params));
  return DenseGrid::from_tensor(t.value(out));
}

PointCloud early_fuse_clouds(std::span<const std::pair<PointCloud, Pose2D>> clouds, const Pose2D& ego) {
  PointCloud out;
  for (const auto& [cloud, pose] : clouds) {
    PointCloud moved = transform_points(cloud, pose, ego);
    out.points.insert(out.points.end(), moved.points.begin(), moved.points.end());
  }
  return out;
}

std::vector<Detection> late_fuse_detections(std::span<const std::pair<std::vector<Detection>, Pose2D>> sets,
                                            const Pose2D& ego, double nms_iou) {
  if (!(nms_iou > 0 && nms_iou < 1)) throw Error("late_fuse_detections: nms_iou must lie in (0,1)");
  std::vector<Detection> all;
  for (const auto& [dets, pose] : sets)
    for (const Detection& d : dets) all.push_back(Detection::of(transform_box(d.box(), pose, ego), d.score));
  std::stable_sort(all.begin(), all.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const Detection& d : all) {
    bool keep = true;
    for (const Detection& k : kept)
      if (eval::rotated_iou(d.box(), k.box()) > nms_iou) {
        keep = false;
        break;
      }
    if (keep) kept.push_back(d);
  }
  return kept;
}

}  // namespace macp::fusion
