#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "macp/geom.hpp"

namespace macp::comms {

// FeatureMessage layout (little-endian):
//   "MACPFM01" | u32 agent_id | f64 x, y, yaw | u32 H, W, C | u32 factor | f32 payload[H*W*C]
constexpr char kMagic[] = "MACPFM01";
constexpr std::size_t kHeaderBytes = 8 + 4 + 3 * 8 + 3 * 4 + 4;

struct FeatureMessage {
  std::uint32_t agent_id = 0;
  Pose2D pose;
  DenseGrid latent;
  std::uint32_t compression_factor = 1;
};

enum class DecodeErrorKind { magic, truncated, mismatch };

class DecodeError : public Error {
 public:
  DecodeError(DecodeErrorKind k, const std::string& msg) : Error(msg), kind(k) {}
  DecodeErrorKind kind;
};

std::vector<std::uint8_t> encode_message(const DenseGrid& latent, std::uint32_t agent_id, const Pose2D& pose,
                                         std::uint32_t compression_factor);
inline std::vector<std::uint8_t> encode_message(const FeatureMessage& m) {
  return encode_message(m.latent, m.agent_id, m.pose, m.compression_factor);
}
FeatureMessage decode_message(std::span<const std::uint8_t> bytes);

/// Byte size of a message carrying an H x W x C latent.
std::size_t message_bytes(int h, int w, int c);

struct ChannelStats {
  std::int64_t messages = 0;
  std::int64_t payload_bytes = 0;
  std::int64_t header_bytes = 0;

  std::int64_t total_bytes() const { return payload_bytes + header_bytes; }
  void add_message(std::size_t serialized_len);
  ChannelStats& operator+=(const ChannelStats& o);
};

struct AgentState {
  std::uint32_t agent_id = 0;
  Pose2D pose;
  DenseGrid latent;
  std::uint32_t compression_factor = 1;
};

struct BroadcastResult {
  /// Messages received by each agent, ordered by sender id.
  std::map<std::uint32_t, std::vector<FeatureMessage>> inbox;
  /// One entry per sender -> receiver delivery.
  ChannelStats stats;
};

/// Sync setting: every agent's message reaches every other agent, loss-free.
BroadcastResult broadcast_round(std::span<const AgentState> agents);

/// Mean transmitted megabytes (2^20 bytes) per frame.
double am_megabytes(const ChannelStats& stats, std::int64_t n_frames);

}  // namespace macp::comms
