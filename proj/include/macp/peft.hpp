#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "macp/model.hpp"
#include "macp/nnops.hpp"

namespace macp::peft {

/// Convolution adapter: 1x1 down-projection, GELU, 1x1 up-projection.
struct ConAda {
  nn::ConvKernel down;  ///< C -> D'
  nn::ConvKernel up;    ///< D' -> C

  /// Encoder-style adapter: requires D' < C. Down kernel U(+-1/sqrt(C)), up kernel zero.
  static ConAda make(int channels, int bottleneck, std::mt19937_64& rng);
  /// Communication channel: D' <= C, so factor 1 (no compression) is allowed.
  static ConAda make_channel(int channels, int latent, std::mt19937_64& rng);

  int channels() const { return down.in; }
  int latent_channels() const { return down.out; }
};

DenseGrid conada_forward(const DenseGrid& x, const ConAda& m);
SparseTensor conada_forward(const SparseTensor& x, const ConAda& m);
DenseGrid conada_compress(const DenseGrid& x, const ConAda& m);
DenseGrid conada_decompress(const DenseGrid& latent, const ConAda& m);

struct Rational {
  std::int64_t num = 1, den = 1;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(Rational a, Rational b) { return a.num == b.num && a.den == b.den; }
};

/// C_in / C_out of the down convolution, in lowest terms.
Rational compression_factor(const ConAda& m);

// Parameter-backed modules. Each adds "<prefix>.down.w/.b, <prefix>.up.w/.b"
// (or "<prefix>.gamma/.beta" for SSF) to a ParamSet.
void add_conada_params(ad::ParamSet& ps, const std::string& prefix, int channels, int bottleneck,
                       std::mt19937_64& rng, bool allow_full_width = false);
void add_ssf_params(ad::ParamSet& ps, const std::string& prefix, int channels);
ConAda conada_from_params(const ad::ParamSet& ps, const std::string& prefix);

nn::Var conada_forward(nn::Tape& t, nn::Var x, ad::ParamSet& ps, const std::string& prefix);
nn::Var conada_compress(nn::Tape& t, nn::Var x, ad::ParamSet& ps, const std::string& prefix);
nn::Var conada_decompress(nn::Tape& t, nn::Var latent, ad::ParamSet& ps, const std::string& prefix);
nn::Var ssf_forward(nn::Tape& t, nn::Var x, ad::ParamSet& ps, const std::string& prefix);
/// Per-cell bottleneck adapter with residual connection (Houlsby-style).
nn::Var houlsby_forward(nn::Tape& t, nn::Var x, ad::ParamSet& ps, const std::string& prefix);

enum class Variant { full_finetune, head_only, adapter_only, ssf_only, conada_only, macp };

const char* variant_name(Variant v);
/// Accepts the CLI names "full", "head", "adapter", "ssf", "conada", "macp".
Variant parse_variant(const std::string& name);
std::vector<Variant> all_variants();

struct VariantConfig {
  Variant variant = Variant::macp;
  int bottleneck = 8;           ///< encoder ConAda / adapter width D'
  int compression_factor = 4;   ///< channel ConAda C / D'
  FusionMethod fusion = FusionMethod::weighted_sum;
  std::uint64_t seed = 1;       ///< initializes the new (non-pretrained) modules
};

ArchConfig variant_arch(const VariantConfig& cfg, const ArchConfig& base);

/// Builds the cooperative model for `cfg`, loads every pretrained parameter
/// from `base`, and applies the variant's freeze partition.
Model build_variant(const VariantConfig& cfg, const ad::ParamSet& base, const ArchConfig& base_arch = {});

struct ParamCount {
  std::int64_t total = 0;
  std::int64_t trainable = 0;
};

ParamCount count_params(const ad::ParamSet& ps);
inline ParamCount count_params(const Model& m) { return count_params(m.params); }

}  // namespace macp::peft
