#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "macp/autodiff.hpp"
#include "macp/geom.hpp"

namespace macp {

enum class FusionMethod { weighted_sum, mean, sum, concat };

const char* fusion_name(FusionMethod m);
FusionMethod parse_fusion(const std::string& name);

/// Architecture switches. The single-agent pretrained network is the
/// default-constructed configuration; PEFT variants toggle extra modules.
struct ArchConfig {
  VoxelConfig voxel;
  int width = 32;           ///< encoder / BEV channel count
  int encoder_blocks = 3;
  int pred_blocks = 2;
  bool encoder_conada = false;
  int encoder_bottleneck = 8;
  bool ssf = false;
  bool houlsby = false;
  int houlsby_bottleneck = 8;
  bool channel = false;     ///< compression channel for cooperative use
  int compression_factor = 4;
  FusionMethod fusion = FusionMethod::weighted_sum;

  int latent_channels() const { return width / compression_factor; }
  void validate() const;
};

/// Parameter groups used for freezing and accounting.
enum class ParamGroup { backbone, encoder_conada, channel, fusion, ssf, houlsby, head };

ParamGroup param_group(const std::string& name);
const char* group_name(ParamGroup g);

struct Model {
  ArchConfig arch;
  ad::ParamSet params;

  /// Fresh model with deterministic initialization from `seed`.
  static Model init(const ArchConfig& arch, std::uint64_t seed);
};

// Parameter names.
namespace names {
std::string encoder_embed();
std::string encoder_conv(int block);
std::string encoder_conada(int block);
std::string pred_conv(int block);
std::string pred_ssf(int block);
std::string pred_adapter(int block);
inline const char* channel() { return "channel"; }
inline const char* fusion_conv() { return "fusion.conv"; }
inline const char* fusion_norm() { return "fusion.norm"; }
inline const char* fusion_reduce() { return "fusion.reduce"; }
inline const char* head_heatmap() { return "head.heatmap"; }
inline const char* head_offset() { return "head.offset"; }
inline const char* head_size() { return "head.size"; }
inline const char* head_yaw() { return "head.yaw"; }
}  // namespace names

}  // namespace macp
