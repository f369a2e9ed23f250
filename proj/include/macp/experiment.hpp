#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "macp/comms.hpp"
#include "macp/eval.hpp"
#include "macp/model.hpp"
#include "macp/peft.hpp"
#include "macp/perception.hpp"
#include "macp/scenario.hpp"

namespace macp::exp {

using scenario::Frame;

class Divergence : public Error {
 public:
  using Error::Error;
};

struct TrainConfig {
  int epochs = 8;
  double lr = 2e-3;
  int batch = 2;
  std::uint64_t seed = 1;
  bool augment = false;
  int max_agents = 7;
  ad::AdamWConfig adamw;
  LossConfig loss;
  /// Called after every epoch with (epoch, mean loss).
  std::function<void(int, double)> on_epoch;
};

struct TrainLog {
  std::vector<double> epoch_loss;
  std::int64_t steps = 0;
};

/// How partner latents cross the channel.
enum class Channel {
  simulated,  ///< single-precision rounding on the tape (differentiable)
  wire,       ///< real serialization through broadcast_round
  ideal,      ///< lossless float64 hand-over; smooth, so finite differences can check it
};

/// Ego map plus every partner (up to max_agents in total) through compress,
/// channel, decompress, warp, fuse; then post-fusion conv and heads.
HeadVars cooperative_forward(nn::Tape& t, const Frame& f, Model& m, int max_agents, Channel ch,
                             comms::ChannelStats* ego_stats = nullptr, const PointCloud* ego_cloud = nullptr);

/// Pretraining on single-agent frames (ego cloud, ego-frame gt).
TrainLog pretrain(Model& m, const std::vector<Frame>& frames, const TrainConfig& cfg);
/// Trains the non-frozen params of a cooperative model on cooperative frames.
TrainLog finetune(Model& m, const std::vector<Frame>& frames, const TrainConfig& cfg);

enum class Mode { no_fusion, early_fusion, late_fusion, cooperative };
const char* mode_name(Mode m);
Mode parse_mode(const std::string& s);

struct Mask {
  Vec2 center;
  double half_extent = 6.0;
};

struct EvalOptions {
  Mode mode = Mode::cooperative;
  int max_agents = 7;
  std::optional<Mask> mask;  ///< applied to the ego's own cloud
  DecodeConfig decode;
  std::string label;  ///< report mode label; defaults to the mode name
};

/// Detections for one frame in the ego frame, restricted to the evaluation range.
std::vector<Detection> detect(const Frame& f, const Model* single, const Model* coop, const EvalOptions& opt,
                              comms::ChannelStats* ego_stats = nullptr, std::int64_t* extra_bytes = nullptr);

eval::EvalReport evaluate(const std::vector<Frame>& frames, const Model* single, const Model* coop,
                          const EvalOptions& opt);

/// Non-overlapping vehicles at least 1.6 m wide keep their centers 1.6 m apart, so a detection this
/// close to the origin is the ego's own body seen by a partner.
inline constexpr double kSelfRadius = 1.5;

/// Keeps boxes whose centers satisfy |x|, |y| < half and lie at least `self_radius` from the origin.
std::vector<Detection> in_range(std::vector<Detection> dets, double half, double self_radius = 0.0);

/// Builds `vc` on top of the pretrained model and fine-tunes its trainable params.
Model finetune_variant(const Model& base, const peft::VariantConfig& vc, const std::vector<Frame>& frames,
                       const TrainConfig& cfg, TrainLog* log = nullptr);

/// n x n mask centers evenly spaced over [-span, span] in both axes (the single center is the origin).
std::vector<Vec2> mask_grid(int n, double span);

struct Robustness {
  std::vector<Vec2> centers;
  std::vector<double> single_ap, coop_ap;  ///< AP@0.5 per mask position
  double single_mean = 0, single_std = 0, coop_mean = 0, coop_std = 0;  ///< population std
};

/// Slides a square mask over the ego view and evaluates both models at every position.
Robustness robustness_sweep(const std::vector<Frame>& frames, const Model& single, const Model& coop,
                            const std::vector<Vec2>& centers, double half_extent, int max_agents = 7);

}  // namespace macp::exp
