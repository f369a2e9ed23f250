#include "macp/model.hpp"

#include <cmath>
#include <random>

#include "macp/peft.hpp"

namespace macp {

const char* fusion_name(FusionMethod m) {
  switch (m) {
    case FusionMethod::weighted_sum: return "weighted_sum";
    case FusionMethod::mean: return "mean";
    case FusionMethod::sum: return "sum";
    case FusionMethod::concat: return "concat";
  }
  return "?";
}

FusionMethod parse_fusion(const std::string& name) {
  for (FusionMethod m : {FusionMethod::weighted_sum, FusionMethod::mean, FusionMethod::sum, FusionMethod::concat})
    if (name == fusion_name(m)) return m;
  throw Error("unknown fusion method: " + name);
}

void ArchConfig::validate() const {
  voxel.validate();
  if (width < 1 || encoder_blocks < 1 || pred_blocks < 1) throw Error("architecture widths and block counts must be >= 1");
  if (encoder_conada && (encoder_bottleneck < 1 || encoder_bottleneck >= width))
    throw Error("encoder adapter bottleneck must satisfy 1 <= D' < C");
  if (houlsby && (houlsby_bottleneck < 1 || houlsby_bottleneck >= width))
    throw Error("adapter bottleneck must satisfy 1 <= D' < C");
  if (channel && (compression_factor < 1 || width % compression_factor != 0))
    throw Error("compression factor must divide the channel count (" + std::to_string(width) + "), got " +
                std::to_string(compression_factor));
}

namespace names {
std::string encoder_embed() { return "encoder.embed"; }
std::string encoder_conv(int b) { return "encoder.block" + std::to_string(b) + ".conv"; }
std::string encoder_conada(int b) { return "encoder.block" + std::to_string(b) + ".conada"; }
std::string pred_conv(int b) { return "pred.block" + std::to_string(b) + ".conv"; }
std::string pred_ssf(int b) { return "pred.block" + std::to_string(b) + ".ssf"; }
std::string pred_adapter(int b) { return "pred.block" + std::to_string(b) + ".adapter"; }
}  // namespace names

namespace {

bool starts_with(const std::string& s, const std::string& p) { return s.compare(0, p.size(), p) == 0; }
bool contains(const std::string& s, const char* p) { return s.find(p) != std::string::npos; }

// Uniform +-1/sqrt(fan_in) for weights and bias.
void add_conv(ad::ParamSet& ps, const std::string& prefix, int k, int in, int out, bool bias, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(k * k * in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor w({k * k, in, out});
  for (double& v : w.data) v = u(rng);
  ps.add(prefix + ".w", std::move(w));
  if (bias) {
    Tensor b({out});
    for (double& v : b.data) v = u(rng);
    ps.add(prefix + ".b", std::move(b));
  }
}

}  // namespace

ParamGroup param_group(const std::string& name) {
  if (starts_with(name, "encoder.")) return contains(name, ".conada.") ? ParamGroup::encoder_conada : ParamGroup::backbone;
  if (starts_with(name, "pred.")) {
    if (contains(name, ".ssf.")) return ParamGroup::ssf;
    if (contains(name, ".adapter.")) return ParamGroup::houlsby;
    return ParamGroup::backbone;
  }
  if (starts_with(name, "channel.")) return ParamGroup::channel;
  if (starts_with(name, "fusion.")) return ParamGroup::fusion;
  if (starts_with(name, "head.")) return ParamGroup::head;
  throw Error("parameter outside every group: " + name);
}

const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::backbone: return "backbone";
    case ParamGroup::encoder_conada: return "encoder_conada";
    case ParamGroup::channel: return "channel";
    case ParamGroup::fusion: return "fusion";
    case ParamGroup::ssf: return "ssf";
    case ParamGroup::houlsby: return "houlsby";
    case ParamGroup::head: return "head";
  }
  return "?";
}

Model Model::init(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  Model m;
  m.arch = arch;
  ad::ParamSet& ps = m.params;
  const int c = arch.width;
  // Pretrained modules draw from the main stream; adapters from a second one
  // so that adding them never perturbs the backbone initialization.
  std::mt19937_64 rng(seed);
  std::mt19937_64 extra(seed ^ 0x9e3779b97f4a7c15ULL);

  add_conv(ps, names::encoder_embed(), 1, arch.voxel.channels, c, true, rng);
  for (int b = 0; b < arch.encoder_blocks; ++b) {
    add_conv(ps, names::encoder_conv(b), 3, c, c, true, rng);
    if (arch.encoder_conada) peft::add_conada_params(ps, names::encoder_conada(b), c, arch.encoder_bottleneck, extra);
  }
  if (arch.channel) peft::add_conada_params(ps, names::channel(), c, arch.latent_channels(), extra, true);
  if (arch.channel && arch.fusion == FusionMethod::concat) {
    // [I; 0]: starts out passing the ego half through.
    Tensor w({1, 2 * c, c});
    for (int i = 0; i < c; ++i) w[static_cast<std::size_t>(i) * c + i] = 1.0;
    ps.add(std::string(names::fusion_reduce()) + ".w", std::move(w));
    ps.add(std::string(names::fusion_reduce()) + ".b", Tensor({c}));
  }
  add_conv(ps, names::fusion_conv(), 3, c, c, false, rng);
  ps.add(std::string(names::fusion_norm()) + ".gamma", Tensor({c}, 1.0));
  ps.add(std::string(names::fusion_norm()) + ".beta", Tensor({c}));
  for (int b = 0; b < arch.pred_blocks; ++b) {
    add_conv(ps, names::pred_conv(b), 3, c, c, true, rng);
    if (arch.ssf) peft::add_ssf_params(ps, names::pred_ssf(b), c);
    if (arch.houlsby) peft::add_conada_params(ps, names::pred_adapter(b), c, arch.houlsby_bottleneck, extra);
  }
  add_conv(ps, names::head_heatmap(), 1, c, 1, true, rng);
  // Prior of about 0.1 foreground probability.
  ps.at(std::string(names::head_heatmap()) + ".b").value[0] = -2.19;
  add_conv(ps, names::head_offset(), 1, c, 2, true, rng);
  add_conv(ps, names::head_size(), 1, c, 2, true, rng);
  add_conv(ps, names::head_yaw(), 1, c, 2, true, rng);
  return m;
}

}  // namespace macp
