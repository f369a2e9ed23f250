#include "macp/peft.hpp"

#include <cmath>
#include <numeric>

namespace macp::peft {

namespace {

nn::ConvKernel random_down(int c, int d, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(c));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> w(static_cast<std::size_t>(c) * d), b(static_cast<std::size_t>(d));
  for (double& v : w) v = u(rng);
  for (double& v : b) v = u(rng);
  return nn::ConvKernel(1, c, d, std::move(w), std::move(b));
}

nn::ConvKernel zero_up(int d, int c) {
  return nn::ConvKernel(1, d, c, std::vector<double>(static_cast<std::size_t>(c) * d, 0.0),
                        std::vector<double>(static_cast<std::size_t>(c), 0.0));
}

void check_width(int c, int d, bool allow_full) {
  if (c < 1 || d < 1) throw Error("adapter widths must be positive");
  if (allow_full ? d > c : d >= c)
    throw Error("adapter bottleneck must satisfy D' " + std::string(allow_full ? "<=" : "<") + " C, got C=" +
                std::to_string(c) + " D'=" + std::to_string(d));
}

void check_channels(int have, int want, const char* op) {
  if (have != want)
    throw Error(std::string(op) + ": channel mismatch, input has " + std::to_string(have) + " channels, module expects " +
                std::to_string(want));
}

DenseGrid gelu_grid(DenseGrid g) {
  for (double& v : g.values) v = nn::gelu(v);
  return g;
}

nn::Var pw(nn::Tape& t, nn::Var x, ad::ParamSet& ps, const std::string& prefix) {
  return nn::pointwise_conv(t, x, t.param(ps.at(prefix + ".w")), t.param(ps.at(prefix + ".b")));
}

}  // namespace

ConAda ConAda::make(int channels, int bottleneck, std::mt19937_64& rng) {
  check_width(channels, bottleneck, false);
  return {random_down(channels, bottleneck, rng), zero_up(bottleneck, channels)};
}

ConAda ConAda::make_channel(int channels, int latent, std::mt19937_64& rng) {
  check_width(channels, latent, true);
  return {random_down(channels, latent, rng), zero_up(latent, channels)};
}

DenseGrid conada_compress(const DenseGrid& x, const ConAda& m) {
  check_channels(x.channels, m.down.in, "conada_compress");
  return gelu_grid(nn::pointwise_conv(x, m.down));
}

DenseGrid conada_decompress(const DenseGrid& latent, const ConAda& m) {
  check_channels(latent.channels, m.up.in, "conada_decompress");
  return nn::pointwise_conv(latent, m.up);
}

DenseGrid conada_forward(const DenseGrid& x, const ConAda& m) { return conada_decompress(conada_compress(x, m), m); }

SparseTensor conada_forward(const SparseTensor& x, const ConAda& m) {
  check_channels(x.channels, m.down.in, "conada_forward");
  SparseTensor h = nn::pointwise_conv(x, m.down);
  h.feats = nn::gelu(h.feats);
  return nn::pointwise_conv(h, m.up);
}

Rational compression_factor(const ConAda& m) {
  m.down.validate();
  const std::int64_t g = std::gcd<std::int64_t, std::int64_t>(m.down.in, m.down.out);
  return {m.down.in / g, m.down.out / g};
}

void add_conada_params(ad::ParamSet& ps, const std::string& prefix, int channels, int bottleneck,
                       std::mt19937_64& rng, bool allow_full_width) {
  const ConAda m = allow_full_width ? ConAda::make_channel(channels, bottleneck, rng)
                                    : ConAda::make(channels, bottleneck, rng);
  ps.add(prefix + ".down.w", Tensor({1, channels, bottleneck}, m.down.weights));
  ps.add(prefix + ".down.b", Tensor({bottleneck}, m.down.bias));
  ps.add(prefix + ".up.w", Tensor({1, bottleneck, channels}, m.up.weights));
  ps.add(prefix + ".up.b", Tensor({channels}, m.up.bias));
}

void add_ssf_params(ad::ParamSet& ps, const std::string& prefix, int channels) {
  ps.add(prefix + ".gamma", Tensor({channels}, 1.0));
  ps.add(prefix + ".beta", Tensor({channels}, 0.0));
}

ConAda conada_from_params(const ad::ParamSet& ps, const std::string& prefix) {
  const Tensor& dw = ps.at(prefix + ".down.w").value;
  const Tensor& uw = ps.at(prefix + ".up.w").value;
  return {nn::ConvKernel(1, dw.dim(1), dw.dim(2), dw.data, ps.at(prefix + ".down.b").value.data),
          nn::ConvKernel(1, uw.dim(1), uw.dim(2), uw.data, ps.at(prefix + ".up.b").value.data)};
}

nn::Var conada_compress(nn::Tape& t, nn::Var x, ad::ParamSet& ps, const std::string& prefix) {
  return nn::gelu(t, pw(t, x, ps, prefix + ".down"));
}

nn::Var conada_decompress(nn::Tape& t, nn::Var latent, ad::ParamSet& ps, const std::string& prefix) {
  return pw(t, latent, ps, prefix + ".up");
}

nn::Var conada_forward(nn::Tape& t, nn::Var x, ad::ParamSet& ps, const std::string& prefix) {
  return conada_decompress(t, conada_compress(t, x, ps, prefix), ps, prefix);
}

nn::Var ssf_forward(nn::Tape& t, nn::Var x, ad::ParamSet& ps, const std::string& prefix) {
  return nn::scale_shift(t, x, t.param(ps.at(prefix + ".gamma")), t.param(ps.at(prefix + ".beta")));
}

nn::Var houlsby_forward(nn::Tape& t, nn::Var x, ad::ParamSet& ps, const std::string& prefix) {
  return nn::residual_add(t, x, conada_forward(t, x, ps, prefix));
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full_finetune: return "full";
    case Variant::head_only: return "head";
    case Variant::adapter_only: return "adapter";
    case Variant::ssf_only: return "ssf";
    case Variant::conada_only: return "conada";
    case Variant::macp: return "macp";
  }
  return "?";
}

std::vector<Variant> all_variants() {
  return {Variant::full_finetune, Variant::head_only, Variant::adapter_only,
          Variant::ssf_only,      Variant::conada_only, Variant::macp};
}

Variant parse_variant(const std::string& name) {
  for (Variant v : all_variants())
    if (name == variant_name(v)) return v;
  throw Error("unknown variant '" + name + "' (expected full, head, adapter, ssf, conada or macp)");
}

ArchConfig variant_arch(const VariantConfig& cfg, const ArchConfig& base) {
  ArchConfig a = base;
  a.channel = true;
  a.compression_factor = cfg.compression_factor;
  a.fusion = cfg.fusion;
  a.encoder_bottleneck = cfg.bottleneck;
  a.houlsby_bottleneck = cfg.bottleneck;
  a.encoder_conada = a.ssf = a.houlsby = false;
  switch (cfg.variant) {
    case Variant::full_finetune:
    case Variant::macp: a.encoder_conada = a.ssf = true; break;
    case Variant::conada_only: a.encoder_conada = true; break;
    case Variant::ssf_only: a.ssf = true; break;
    case Variant::adapter_only: a.houlsby = true; break;
    case Variant::head_only: break;
  }
  return a;
}

namespace {

bool is_pretrained(const std::string& name) {
  const ParamGroup g = param_group(name);
  if (g == ParamGroup::backbone || g == ParamGroup::head) return true;
  return g == ParamGroup::fusion && name.rfind(names::fusion_reduce(), 0) != 0;
}

bool trainable_in(Variant v, ParamGroup g) {
  switch (g) {
    case ParamGroup::channel:
    case ParamGroup::fusion:
    case ParamGroup::head: return true;
    case ParamGroup::backbone: return v == Variant::full_finetune;
    case ParamGroup::encoder_conada: return v == Variant::macp || v == Variant::conada_only || v == Variant::full_finetune;
    case ParamGroup::ssf: return v == Variant::macp || v == Variant::ssf_only || v == Variant::full_finetune;
    case ParamGroup::houlsby: return v == Variant::adapter_only;
  }
  return false;
}

}  // namespace

Model build_variant(const VariantConfig& cfg, const ad::ParamSet& base, const ArchConfig& base_arch) {
  Model m = Model::init(variant_arch(cfg, base_arch), cfg.seed);
  std::string bad;
  for (ad::Param* p : m.params.all()) {
    const ad::Param* src = base.find(p->name);
    if (src) {
      if (src->value.shape != p->value.shape) {
        bad += (bad.empty() ? "" : ", ") + p->name + " " + shape_str(src->value.shape) + " vs " +
               shape_str(p->value.shape);
        continue;
      }
      p->value = src->value;
    } else if (is_pretrained(p->name)) {
      bad += (bad.empty() ? "" : ", ") + p->name + " missing";
    }
    p->frozen = !trainable_in(cfg.variant, param_group(p->name));
  }
  if (!bad.empty()) throw Error("checkpoint does not match the architecture: " + bad);
  return m;
}

ParamCount count_params(const ad::ParamSet& ps) {
  ParamCount c;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto n = static_cast<std::int64_t>(ps[i].value.size());
    c.total += n;
    if (!ps[i].frozen) c.trainable += n;
  }
  return c;
}

}  // namespace macp::peft
