#include <string_view>

#include "macp/autodiff.hpp"
#include "macp/bytes.hpp"

namespace macp::ad {

namespace {
constexpr std::string_view kMagic = "MACPCK01";
}

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params) {
  bytes::Writer w;
  w.raw(kMagic);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param& p = params[i];
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.raw(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.shape.size()));
    for (int d : p.value.shape) w.u32(static_cast<std::uint32_t>(d));
    w.u8(p.frozen ? 1 : 0);
    for (double v : p.value.data) w.f64(v);
  }
  return w.take();
}

ParamSet decode_checkpoint(std::span<const std::uint8_t> data) {
  bytes::Reader r(data);
  if (!r.has(kMagic.size()) || r.raw(kMagic.size()) != kMagic) throw Error("checkpoint: bad magic");
  const std::uint32_t count = r.u32();
  ParamSet out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    std::string name(r.raw(len));
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw Error("checkpoint: implausible rank for " + name);
    std::vector<int> shape;
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::uint32_t d = r.u32();
      shape.push_back(static_cast<int>(d));
      n *= d;
    }
    const bool frozen = r.u8() != 0;
    if (n > r.remaining() / 8) throw bytes::Truncated("checkpoint: truncated values for " + name);
    std::vector<double> values(static_cast<std::size_t>(n));
    for (double& v : values) v = r.f64();
    out.add(std::move(name), Tensor(std::move(shape), std::move(values)), frozen);
  }
  if (r.remaining() != 0) throw Error("checkpoint: trailing bytes");
  return out;
}

void save_checkpoint(const std::string& path, const ParamSet& params) {
  bytes::write_file(path, encode_checkpoint(params));
}

ParamSet load_checkpoint(const std::string& path) { return decode_checkpoint(bytes::read_file(path)); }

}  // namespace macp::ad
