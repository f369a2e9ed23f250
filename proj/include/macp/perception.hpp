#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "macp/model.hpp"
#include "macp/nnops.hpp"

namespace macp {

struct Detection {
  double x = 0, y = 0, l = 1, w = 1, yaw = 0, score = 0;

  Box2D box() const { return {x, y, l, w, yaw}; }
  static Detection of(const Box2D& b, double score) { return {b.x, b.y, b.l, b.w, b.yaw, score}; }
};

/// Dense head maps. Yaw channels are (sin, cos).
struct HeadOutput {
  DenseGrid heatmap, offset, size, yaw;
};

struct HeadVars {
  nn::Var heatmap, offset, size, yaw;
};

struct Targets {
  HeadOutput maps;
  std::vector<int> positives;  ///< linear cell indices holding a box center
  int skipped = 0;             ///< boxes whose center lies outside the grid
};

/// Boxes are symmetric under a half turn; keeps yaw in (-pi/2, pi/2].
double canonical_box_yaw(double yaw);

// Forward passes. The tape overloads record onto `t` (params tracked when the
// tape allows it); the value overloads run a throwaway inference tape.
nn::Var encode_features(nn::Tape& t, const PointCloud& cloud, Model& m);
DenseGrid encode_features(const PointCloud& cloud, const Model& m);
HeadVars predict_heads(nn::Tape& t, nn::Var fused, Model& m);
HeadOutput predict_heads(const DenseGrid& fused, const Model& m);
HeadOutput head_values(const nn::Tape& t, const HeadVars& h);

/// Single-agent network: encoder, post-fusion conv on the ego map alone, heads.
HeadVars single_agent_forward(nn::Tape& t, const PointCloud& cloud, Model& m);
HeadOutput single_agent_infer(const PointCloud& cloud, const Model& m);

/// Options for a tape that never writes into the model.
nn::Tape::Options inference_options();

Targets splat_targets(std::span<const Box2D> gts, const VoxelConfig& cfg);

struct LossConfig {
  double alpha = 2.0, beta = 4.0;
  double heatmap_weight = 1.0, regression_weight = 1.0;
};

nn::Var detection_loss(nn::Tape& t, const HeadVars& pred, const Targets& target, const LossConfig& cfg = {});
double detection_loss(const HeadOutput& pred, const Targets& target, const LossConfig& cfg = {});

struct DecodeConfig {
  double score_thresh = 0.3;
  int max_det = 64;
};

std::vector<Detection> decode_detections(const HeadOutput& head, const VoxelConfig& cfg, const DecodeConfig& dc = {});

/// Global scaling and rotation about the sensor origin.
struct Augmentation {
  double scale = 1.0, rotation = 0.0;

  static Augmentation sample(std::mt19937_64& rng);
  PointCloud apply(const PointCloud& cloud) const;
  Box2D apply(const Box2D& box) const;
};

std::string detections_to_jsonl(std::span<const Detection> dets);
std::vector<Detection> detections_from_jsonl(const std::string& text);

}  // namespace macp
