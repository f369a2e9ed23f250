#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "macp/tensor.hpp"

namespace macp::ad {

/// Named trainable tensor. Frozen parameters still receive gradients; only
/// optimizer updates skip them.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  bool frozen = false;

  void zero_grad() {
    grad = Tensor(value.shape);
    has_grad = false;
  }
};

/// Ordered, name-indexed parameter collection with stable addresses.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other);
  ParamSet& operator=(const ParamSet& other);
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  Param& add(std::string name, Tensor value, bool frozen = false);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }
  Param& operator[](std::size_t i) { return *params_[i]; }
  const Param& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  std::vector<Param*> trainable();
  std::vector<Param*> all();

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class ContractViolation : public Error {
 public:
  using Error::Error;
};

class NonFinite : public Error {
 public:
  NonFinite(const std::string& op, int node)
      : Error("non-finite value produced by op '" + op + "' (node " + std::to_string(node) + ")"), op_name(op) {}
  std::string op_name;
};

/// Reverse-mode tape over tensor-valued primitives. Nodes are appended in
/// execution order, so reverse iteration is a valid topological order.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  struct Options {
    /// When false, frozen parameters are treated as constants and no weight
    /// gradient is formed for them. Training uses this to skip dead work.
    bool grads_for_frozen = true;
    /// When false, params are recorded as constants and never written to.
    bool track_params = true;
  };

  Tape() = default;
  explicit Tape(Options opts) : opts_(opts) {}

  Var constant(Tensor value);
  /// Leaf that requires grad (used for input-gradient checks).
  Var variable(Tensor value);
  Var param(Param& p);
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(const char* op, Tensor value, const std::vector<Var>& inputs, Backward backward);

  const Tensor& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }
  /// Gradient buffer of `v`, allocated as zeros on first access.
  Tensor& grad(Var v);
  bool has_grad(Var v) const { return !nodes_.at(static_cast<std::size_t>(v.id)).grad.data.empty(); }
  const char* op(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).op; }

  void backward(Var loss);
  /// Throws NonFinite naming the first op whose output is not finite.
  void check_finite() const;

  std::size_t size() const { return nodes_.size(); }
  const Options& options() const { return opts_; }

 private:
  struct Node {
    const char* op = "";
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
    Param* param = nullptr;
  };
  Options opts_;
  std::vector<Node> nodes_;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
  std::optional<double> clip_norm;  ///< global L2 clip; off unless set
};

struct Moments {
  Tensor m, v;
};

struct OptimState {
  std::map<std::string, Moments> moments;
  std::int64_t t = 0;
};

/// Decoupled-weight-decay Adam update over the non-frozen params.
void adamw_step(ParamSet& params, OptimState& state, double lr, const AdamWConfig& cfg = {});

double cosine_lr(std::int64_t step, std::int64_t total, double lr0);

/// Builds a loss on a fresh tape from the given parameters.
using LossFn = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst;  ///< "name[index]" of the worst element
};

/// Compares backward() against central differences for every element of
/// every listed parameter. Relative error per element is
/// |a - n| / max(floor, |a| + |n|).
GradCheckResult grad_check(const LossFn& fn, std::span<Param* const> params, double eps = 1e-5,
                           double floor = 1e-12);

// Checkpoint container: "MACPCK01", u32 count, then per param
// (u32 name length, name, u32 rank, u32 dims..., u8 frozen, f64 values).
std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params);
ParamSet decode_checkpoint(std::span<const std::uint8_t> data);
void save_checkpoint(const std::string& path, const ParamSet& params);
ParamSet load_checkpoint(const std::string& path);

}  // namespace macp::ad
