#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "macp/bytes.hpp"
#include "macp/comms.hpp"
#include "support.hpp"

using namespace macp;
using namespace macp::comms;

namespace {

DenseGrid random_grid(std::mt19937_64& rng, int h, int w, int c) {
  DenseGrid g(h, w, c);
  g.values = testing::uniform(rng, g.values.size(), -5, 5);
  return g;
}

DecodeErrorKind decode_kind(std::span<const std::uint8_t> b) {
  try {
    decode_message(b);
  } catch (const DecodeError& e) {
    return e.kind;
  }
  FAIL("expected a decode error");
  return DecodeErrorKind::magic;
}

DenseGrid golden_grid() {
  DenseGrid g(2, 3, 2);
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = static_cast<double>(i) * 0.25 - 1.0;
  g.values[5] = 0.1;
  return g;
}

}  // namespace

TEST_CASE("golden reference message") {
  const auto golden = bytes::read_file(std::string(MACP_TEST_DATA) + "/feature_message_golden.bin");
  const auto ours = encode_message(golden_grid(), 7, Pose2D{1.5, -2.25, 0.5}, 4);
  CHECK(ours.size() == 100);
  CHECK(ours == golden);
  const FeatureMessage m = decode_message(golden);
  CHECK(m.agent_id == 7);
  CHECK(m.pose.y == -2.25);
  CHECK(m.compression_factor == 4);
  CHECK(m.latent.channels == 2);
  CHECK(m.latent.values[5] == static_cast<double>(0.1f));
}

TEST_CASE("encode/decode round trip") {
  std::mt19937_64 rng(1);
  const DenseGrid g = random_grid(rng, 5, 7, 3);
  const auto wire = encode_message(g, 42, Pose2D::of(3.25, -8.5, 1.1), 8);
  CHECK(wire.size() == kHeaderBytes + 5 * 7 * 3 * 4);
  const FeatureMessage m = decode_message(wire);
  CHECK(m.agent_id == 42);
  CHECK(m.pose.x == 3.25);
  CHECK(m.pose.yaw == Pose2D::of(0, 0, 1.1).yaw);
  CHECK(m.compression_factor == 8);
  REQUIRE(m.latent.values.size() == g.values.size());
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    REQUIRE(m.latent.values[i] == static_cast<double>(static_cast<float>(g.values[i])));
    REQUIRE(std::abs(m.latent.values[i] - g.values[i]) <= std::abs(g.values[i]) * 6e-8);
  }
  // Idempotent after the first rounding.
  CHECK(encode_message(m) == wire);
  CHECK(decode_message(encode_message(m)).latent.values == m.latent.values);
}

TEST_CASE("payload size arithmetic") {
  CHECK(message_bytes(128, 128, 8) - kHeaderBytes == 524288);
  CHECK(encode_message(DenseGrid(128, 128, 8), 0, {}, 4).size() == kHeaderBytes + 524288);
  CHECK(message_bytes(128, 128, 4) - kHeaderBytes == 524288 / 2);
  CHECK(kHeaderBytes == 52);
  DenseGrid bad(2, 2, 1);
  bad.values[1] = NAN;
  CHECK_THROWS_AS(encode_message(bad, 0, {}, 1), Error);
}

TEST_CASE("decode errors are typed") {
  std::mt19937_64 rng(2);
  const auto wire = encode_message(random_grid(rng, 3, 3, 2), 1, {}, 2);
  SUBCASE("magic") {
    auto b = wire;
    b[3] = 'X';
    CHECK(decode_kind(b) == DecodeErrorKind::magic);
    const std::vector<std::uint8_t> junk = {'h', 'i'};
    CHECK(decode_kind(junk) == DecodeErrorKind::magic);
  }
  SUBCASE("truncation names both lengths") {
    const std::span<const std::uint8_t> cut(wire.data(), wire.size() - 5);
    CHECK(decode_kind(cut) == DecodeErrorKind::truncated);
    try {
      decode_message(cut);
    } catch (const DecodeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find(std::to_string(wire.size())) != std::string::npos);
      CHECK(msg.find(std::to_string(wire.size() - 5)) != std::string::npos);
    }
    CHECK(decode_kind(std::span<const std::uint8_t>(wire.data(), 20)) == DecodeErrorKind::truncated);
    CHECK(decode_kind(std::span<const std::uint8_t>(wire.data(), 4)) == DecodeErrorKind::truncated);
  }
  SUBCASE("shape and payload disagree") {
    auto b = wire;
    b.push_back(0);
    CHECK(decode_kind(b) == DecodeErrorKind::mismatch);
  }
}

TEST_CASE("fuzzed input never crashes") {
  std::mt19937_64 rng(3);
  const auto wire = encode_message(random_grid(rng, 4, 4, 2), 9, Pose2D::of(1, 2, 3), 4);
  std::uniform_int_distribution<int> byte(0, 255);
  int ok = 0, typed = 0;
  for (int trial = 0; trial < 20000; ++trial) {
    std::vector<std::uint8_t> b;
    switch (trial % 3) {
      case 0: {  // random prefix
        b.assign(wire.begin(), wire.begin() + static_cast<std::ptrdiff_t>(rng() % (wire.size() + 1)));
        break;
      }
      case 1: {  // bit flips, header biased
        b = wire;
        for (int k = 0; k < 3; ++k) b[rng() % std::min<std::size_t>(b.size(), 60)] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
        break;
      }
      default: {  // valid magic, random rest
        b.assign(wire.begin(), wire.begin() + 8);
        const std::size_t n = rng() % 120;
        for (std::size_t i = 0; i < n; ++i) b.push_back(static_cast<std::uint8_t>(byte(rng)));
      }
    }
    try {
      const FeatureMessage m = decode_message(b);
      REQUIRE(m.latent.values.size() * 4 + kHeaderBytes == b.size());
      ++ok;
    } catch (const DecodeError&) {
      ++typed;
    }
  }
  CHECK(ok + typed == 20000);
  CHECK(ok > 0);
  CHECK(typed > 0);
}

TEST_CASE("broadcast_round") {
  std::mt19937_64 rng(4);
  auto agents = [&](int n) {
    std::vector<AgentState> a;
    for (int i = 0; i < n; ++i)
      a.push_back({static_cast<std::uint32_t>(10 - i), Pose2D::of(i, -i, 0.1 * i), random_grid(rng, 3, 4, 2), 4});
    return a;
  };
  SUBCASE("two agents") {
    const auto a = agents(2);
    const BroadcastResult r = broadcast_round(a);
    CHECK(r.inbox.at(10).size() == 1);
    CHECK(r.inbox.at(9).size() == 1);
    CHECK(r.inbox.at(10)[0].agent_id == 9);
    CHECK(r.stats.messages == 2);
  }
  SUBCASE("complete graph and byte accounting") {
    for (int n = 1; n <= 7; ++n) {
      const auto a = agents(n);
      const BroadcastResult r = broadcast_round(a);
      CHECK(r.stats.messages == n * (n - 1));
      std::int64_t expect = 0;
      for (const AgentState& s : a) expect += static_cast<std::int64_t>(encode_message(s.latent, s.agent_id, s.pose, 4).size()) * (n - 1);
      CHECK(r.stats.total_bytes() == expect);
      CHECK(r.stats.header_bytes == static_cast<std::int64_t>(kHeaderBytes) * n * (n - 1));
      for (const auto& [id, inbox] : r.inbox) {
        CHECK(inbox.size() == static_cast<std::size_t>(n - 1));
        CHECK(std::is_sorted(inbox.begin(), inbox.end(),
                             [](const FeatureMessage& x, const FeatureMessage& y) { return x.agent_id < y.agent_id; }));
        for (const FeatureMessage& m : inbox) CHECK(m.agent_id != id);
      }
    }
  }
  SUBCASE("delivered latents match the sender after single-precision rounding") {
    const auto a = agents(3);
    const BroadcastResult r = broadcast_round(a);
    const FeatureMessage& m = r.inbox.at(10).back();  // from agent 9
    for (std::size_t i = 0; i < m.latent.values.size(); ++i)
      CHECK(m.latent.values[i] == static_cast<double>(static_cast<float>(a[1].latent.values[i])));
  }
}

TEST_CASE("am_megabytes") {
  ChannelStats s;
  CHECK(am_megabytes(s, 10) == 0.0);
  CHECK_THROWS_AS(am_megabytes(s, 0), Error);
  s.add_message(message_bytes(128, 128, 8));
  CHECK(am_megabytes(s, 1) == doctest::Approx(0.5).epsilon(1e-4));
  ChannelStats f4, f32;
  f4.add_message(message_bytes(128, 128, 8));
  f32.add_message(message_bytes(128, 128, 1));
  CHECK(static_cast<double>(f4.payload_bytes) / static_cast<double>(f32.payload_bytes) == 8.0);
  ChannelStats two = f4;
  two += f4;
  CHECK(am_megabytes(two, 2) == am_megabytes(f4, 1));
}
