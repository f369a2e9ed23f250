#include "macp/comms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "macp/bytes.hpp"

namespace macp::comms {

namespace {

constexpr std::string_view kMagicView(kMagic, 8);

std::uint32_t checked_u32(int v, const char* what) {
  if (v < 0) throw Error(std::string("encode_message: negative ") + what);
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::size_t message_bytes(int h, int w, int c) {
  return kHeaderBytes + static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c) * 4;
}

std::vector<std::uint8_t> encode_message(const DenseGrid& latent, std::uint32_t agent_id, const Pose2D& pose,
                                         std::uint32_t compression_factor) {
  const std::uint32_t h = checked_u32(latent.rows, "rows"), w = checked_u32(latent.cols, "cols"),
                      c = checked_u32(latent.channels, "channels");
  const std::uint64_t n = std::uint64_t{h} * w * c;
  if (n > std::numeric_limits<std::uint32_t>::max() / 4)
    throw Error("encode_message: latent shape overflows the u32 payload range");
  if (n != latent.values.size()) throw Error("encode_message: grid values do not match its shape");
  bytes::Writer out;
  out.buffer().reserve(kHeaderBytes + n * 4);
  out.raw(kMagicView);
  out.u32(agent_id);
  out.f64(pose.x);
  out.f64(pose.y);
  out.f64(pose.yaw);
  out.u32(h);
  out.u32(w);
  out.u32(c);
  out.u32(compression_factor);
  for (double v : latent.values) {
    if (!std::isfinite(v)) throw Error("encode_message: non-finite latent value");
    out.f32(static_cast<float>(v));
  }
  return out.take();
}

FeatureMessage decode_message(std::span<const std::uint8_t> data) {
  const std::size_t magic_len = std::min<std::size_t>(8, data.size());
  if (!std::equal(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(magic_len), kMagicView.begin()))
    throw DecodeError(DecodeErrorKind::magic, "feature message: bad magic");
  if (data.size() < kHeaderBytes)
    throw DecodeError(DecodeErrorKind::truncated, "feature message: truncated header, expected " +
                                                      std::to_string(kHeaderBytes) + " bytes, got " +
                                                      std::to_string(data.size()));
  bytes::Reader in(data);
  in.raw(8);
  FeatureMessage m;
  m.agent_id = in.u32();
  m.pose.x = in.f64();
  m.pose.y = in.f64();
  m.pose.yaw = in.f64();
  const std::uint32_t h = in.u32(), w = in.u32(), c = in.u32();
  m.compression_factor = in.u32();
  // Three u32 factors fit comfortably in 128 bits.
  const unsigned __int128 want = kHeaderBytes + static_cast<unsigned __int128>(h) * w * c * 4;
  auto str = [](unsigned __int128 v) {
    if (v > std::numeric_limits<std::uint64_t>::max()) return std::string("more than 2^64");
    return std::to_string(static_cast<std::uint64_t>(v));
  };
  if (data.size() < want)
    throw DecodeError(DecodeErrorKind::truncated, "feature message: truncated payload, expected " + str(want) +
                                                      " bytes, got " + std::to_string(data.size()));
  if (data.size() > want)
    throw DecodeError(DecodeErrorKind::mismatch, "feature message: shape implies " + str(want) + " bytes but " +
                                                     std::to_string(data.size()) + " were received");
  if (h > static_cast<std::uint32_t>(std::numeric_limits<int>::max()) ||
      w > static_cast<std::uint32_t>(std::numeric_limits<int>::max()) ||
      c > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
    throw DecodeError(DecodeErrorKind::mismatch, "feature message: shape out of range");
  m.latent = DenseGrid(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  for (double& v : m.latent.values) v = static_cast<double>(in.f32());
  return m;
}

void ChannelStats::add_message(std::size_t len) {
  ++messages;
  header_bytes += static_cast<std::int64_t>(kHeaderBytes);
  payload_bytes += static_cast<std::int64_t>(len - kHeaderBytes);
}

ChannelStats& ChannelStats::operator+=(const ChannelStats& o) {
  messages += o.messages;
  payload_bytes += o.payload_bytes;
  header_bytes += o.header_bytes;
  return *this;
}

BroadcastResult broadcast_round(std::span<const AgentState> agents) {
  std::vector<const AgentState*> order;
  for (const AgentState& a : agents) order.push_back(&a);
  std::stable_sort(order.begin(), order.end(),
                   [](const AgentState* a, const AgentState* b) { return a->agent_id < b->agent_id; });
  BroadcastResult out;
  for (const AgentState* a : order) out.inbox[a->agent_id];
  for (const AgentState* s : order) {
    const auto wire = encode_message(s->latent, s->agent_id, s->pose, s->compression_factor);
    const FeatureMessage decoded = decode_message(wire);
    for (const AgentState* r : order) {
      if (r == s) continue;
      out.inbox[r->agent_id].push_back(decoded);
      out.stats.add_message(wire.size());
    }
  }
  return out;
}

double am_megabytes(const ChannelStats& stats, std::int64_t n_frames) {
  if (n_frames < 1) throw Error("am_megabytes: n_frames must be at least 1");
  return static_cast<double>(stats.total_bytes()) / static_cast<double>(n_frames) / 1048576.0;
}

}  // namespace macp::comms
