#pragma once

#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "macp/model.hpp"
#include "macp/nnops.hpp"
#include "macp/perception.hpp"

namespace macp::fusion {

/// For every ego cell, the sender cell holding its center (nearest neighbour), or -1.
std::shared_ptr<const std::vector<int>> warp_indices(const Pose2D& sender, const Pose2D& ego, const VoxelConfig& cfg);

nn::Var warp_to_ego(nn::Tape& t, nn::Var grid, const Pose2D& sender, const Pose2D& ego, const VoxelConfig& cfg);
DenseGrid warp_to_ego(const DenseGrid& grid, const Pose2D& sender, const Pose2D& ego, const VoxelConfig& cfg);

/// `reducer` is required for concat only ("fusion.reduce.w/.b").
nn::Var fuse_maps(nn::Tape& t, nn::Var ego, std::span<const nn::Var> others, FusionMethod method,
                  ad::ParamSet* reducer = nullptr);
DenseGrid fuse_maps(const DenseGrid& ego, std::span<const DenseGrid> others, FusionMethod method,
                    const ad::ParamSet* reducer = nullptr);

/// 3x3 conv (no bias), channel norm, GELU.
nn::Var post_fusion_conv(nn::Tape& t, nn::Var grid, ad::ParamSet& ps);
DenseGrid post_fusion_conv(const DenseGrid& grid, const Model& m);

PointCloud early_fuse_clouds(std::span<const std::pair<PointCloud, Pose2D>> clouds, const Pose2D& ego);

std::vector<Detection> late_fuse_detections(std::span<const std::pair<std::vector<Detection>, Pose2D>> sets,
                                            const Pose2D& ego, double nms_iou = 0.5);

}  // namespace macp::fusion
