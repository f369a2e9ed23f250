#include "macp/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace macp::ad {

ParamSet::ParamSet(const ParamSet& other) {
  for (const auto& p : other.params_) {
    params_.push_back(std::make_unique<Param>(*p));
    index_.emplace(p->name, params_.size() - 1);
  }
}

ParamSet& ParamSet::operator=(const ParamSet& other) {
  if (this != &other) {
    ParamSet copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Param& ParamSet::add(std::string name, Tensor value, bool frozen) {
  if (contains(name)) throw Error("duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = std::move(name);
  p->value = std::move(value);
  p->frozen = frozen;
  index_.emplace(p->name, params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Param& ParamSet::at(const std::string& name) {
  Param* p = find(name);
  if (!p) throw Error("unknown parameter: " + name);
  return *p;
}

const Param& ParamSet::at(const std::string& name) const {
  const Param* p = find(name);
  if (!p) throw Error("unknown parameter: " + name);
  return *p;
}

Param* ParamSet::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Param* ParamSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::vector<Param*> ParamSet::trainable() {
  std::vector<Param*> out;
  for (auto& p : params_)
    if (!p->frozen) out.push_back(p.get());
  return out;
}

std::vector<Param*> ParamSet::all() {
  std::vector<Param*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::variable(Tensor value) {
  Node n;
  n.op = "variable";
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Param& p) {
  Node n;
  n.op = "param";
  n.value = p.value;
  if (opts_.track_params) {
    n.requires_grad = !p.frozen || opts_.grads_for_frozen;
    n.param = &p;
  }
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(const char* op, Tensor value, const std::vector<Var>& inputs, Backward backward) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (Var in : inputs) {
    if (in.valid() && requires_grad(in)) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad(Var v) {
  Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  if (n.grad.data.empty() || n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (!loss.valid() || static_cast<std::size_t>(loss.id) >= nodes_.size())
    throw ContractViolation("backward: loss is not a node of this tape");
  if (value(loss).size() != 1)
    throw ContractViolation("backward: loss must be a scalar, got shape " + shape_str(value(loss).shape));
  grad(loss).data[0] += 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.data.empty()) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
      n.grad = Tensor();  // consumed
    } else if (n.param) {
      Param& p = *n.param;
      if (!p.has_grad || p.grad.size() != p.value.size()) {
        p.grad = Tensor(p.value.shape);
      }
      for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad.data[i] += n.grad.data[i];
      p.has_grad = true;
    }
  }
}

void Tape::check_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (double v : nodes_[i].value.data) {
      if (!std::isfinite(v)) throw NonFinite(nodes_[i].op, static_cast<int>(i));
    }
  }
}

void adamw_step(ParamSet& params, OptimState& state, double lr, const AdamWConfig& cfg) {
  std::vector<Param*> train = params.trainable();
  for (Param* p : train) {
    if (!p->has_grad || p->grad.size() != p->value.size())
      throw Error("adamw_step: trainable parameter '" + p->name + "' has no gradient");
  }
  double clip_scale = 1.0;
  if (cfg.clip_norm) {
    double sq = 0;
    for (Param* p : train)
      for (double g : p->grad.data) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > *cfg.clip_norm && norm > 0) clip_scale = *cfg.clip_norm / norm;
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (Param* p : train) {
    Moments& mom = state.moments[p->name];
    if (mom.m.size() != p->value.size()) {
      mom.m = Tensor(p->value.shape);
      mom.v = Tensor(p->value.shape);
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad.data[i] * clip_scale;
      mom.m.data[i] = cfg.beta1 * mom.m.data[i] + (1.0 - cfg.beta1) * g;
      mom.v.data[i] = cfg.beta2 * mom.v.data[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = mom.m.data[i] / bc1;
      const double vhat = mom.v.data[i] / bc2;
      const double old = p->value.data[i];
      p->value.data[i] = old - lr * (mhat / (std::sqrt(vhat) + cfg.eps)) - lr * cfg.weight_decay * old;
    }
  }
}

double cosine_lr(std::int64_t step, std::int64_t total, double lr0) {
  if (total < 1) throw Error("cosine_lr: total must be >= 1");
  if (step < 0) step = 0;
  if (step > total) step = total;
  const double lr =
      0.5 * lr0 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) / static_cast<double>(total)));
  return lr > 0 ? lr : 0.0;
}

GradCheckResult grad_check(const LossFn& fn, std::span<Param* const> params, double eps, double floor) {
  for (Param* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = fn(tape);
    tape.check_finite();
    tape.backward(loss);
  }
  auto eval = [&]() {
    Tape tape;
    Var loss = fn(tape);
    tape.check_finite();
    return tape.value(loss).data.at(0);
  };
  GradCheckResult res;
  for (Param* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double analytic = p->has_grad ? p->grad.data[i] : 0.0;
      const double orig = p->value.data[i];
      p->value.data[i] = orig + eps;
      const double up = eval();
      p->value.data[i] = orig - eps;
      const double down = eval();
      p->value.data[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double rel = std::abs(analytic - numeric) / std::max(floor, std::abs(analytic) + std::abs(numeric));
      if (res.worst.empty() || rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace macp::ad
