#include "macp/perception.hpp"

#include <algorithm>
#include <cmath>
#include "json.hpp"
#include <numeric>
#include <sstream>

#include "macp/fusion.hpp"
#include "macp/peft.hpp"

namespace macp {

using nn::Tape;
using nn::Var;

double canonical_box_yaw(double yaw) {
  double a = normalize_angle(yaw);
  if (a > kPi / 2) a -= kPi;
  if (a <= -kPi / 2) a += kPi;
  return a;
}

nn::Tape::Options inference_options() {
  nn::Tape::Options o;
  o.grads_for_frozen = false;
  o.track_params = false;
  return o;
}

namespace {

Var param(Tape& t, Model& m, const std::string& name) { return t.param(m.params.at(name)); }

Var conv1x1(Tape& t, Var x, Model& m, const std::string& prefix) {
  return nn::pointwise_conv(t, x, param(t, m, prefix + ".w"), param(t, m, prefix + ".b"));
}

// Inference never writes through the model, so dropping const is safe.
Model& mutable_model(const Model& m) { return const_cast<Model&>(m); }

}  // namespace

Var encode_features(Tape& t, const PointCloud& cloud, Model& m) {
  const VoxelConfig& vc = m.arch.voxel;
  SparseTensor st = voxelize(cloud, vc);
  nn::SparseVar h{st.layout, t.constant(Tensor({static_cast<int>(st.size()), st.channels}, std::move(st.feats)))};
  h.feats = conv1x1(t, h.feats, m, names::encoder_embed());
  for (int b = 0; b < m.arch.encoder_blocks; ++b) {
    const std::string conv = names::encoder_conv(b);
    nn::SparseVar c = nn::subm_conv(t, h, param(t, m, conv + ".w"), param(t, m, conv + ".b"), 3);
    if (m.arch.encoder_conada)
      c.feats = nn::residual_add(t, c.feats, peft::conada_forward(t, h.feats, m.params, names::encoder_conada(b)));
    h.feats = nn::gelu(t, c.feats);
  }
  return nn::sparse_to_dense(t, h, vc.rows, vc.cols);
}

DenseGrid encode_features(const PointCloud& cloud, const Model& m) {
  Tape t(inference_options());
  return DenseGrid::from_tensor(t.value(encode_features(t, cloud, mutable_model(m))));
}

HeadVars predict_heads(Tape& t, Var fused, Model& m) {
  const Tensor& x = t.value(fused);
  if (x.shape.size() != 3 || x.shape[2] != m.arch.width)
    throw Error("predict_heads: expected a [H,W," + std::to_string(m.arch.width) + "] map, got " + shape_str(x.shape));
  Var h = fused;
  for (int b = 0; b < m.arch.pred_blocks; ++b) {
    const std::string conv = names::pred_conv(b);
    Var c = nn::dense_conv2d(t, h, param(t, m, conv + ".w"), param(t, m, conv + ".b"), 3);
    if (m.arch.ssf) c = peft::ssf_forward(t, c, m.params, names::pred_ssf(b));
    if (m.arch.houlsby) c = peft::houlsby_forward(t, c, m.params, names::pred_adapter(b));
    h = nn::gelu(t, c);
  }
  HeadVars out;
  out.heatmap = nn::sigmoid(t, conv1x1(t, h, m, names::head_heatmap()));
  out.offset = conv1x1(t, h, m, names::head_offset());
  out.size = conv1x1(t, h, m, names::head_size());
  out.yaw = conv1x1(t, h, m, names::head_yaw());
  return out;
}

HeadOutput head_values(const Tape& t, const HeadVars& h) {
  return {DenseGrid::from_tensor(t.value(h.heatmap)), DenseGrid::from_tensor(t.value(h.offset)),
          DenseGrid::from_tensor(t.value(h.size)), DenseGrid::from_tensor(t.value(h.yaw))};
}

HeadOutput predict_heads(const DenseGrid& fused, const Model& m) {
  Tape t(inference_options());
  return head_values(t, predict_heads(t, t.constant(fused.to_tensor()), mutable_model(m)));
}

HeadVars single_agent_forward(Tape& t, const PointCloud& cloud, Model& m) {
  Var ego = encode_features(t, cloud, m);
  return predict_heads(t, fusion::post_fusion_conv(t, ego, m.params), m);
}

HeadOutput single_agent_infer(const PointCloud& cloud, const Model& m) {
  Tape t(inference_options());
  return head_values(t, single_agent_forward(t, cloud, mutable_model(m)));
}

Targets splat_targets(std::span<const Box2D> gts, const VoxelConfig& cfg) {
  const int H = cfg.rows, W = cfg.cols;
  Targets tg;
  tg.maps = {DenseGrid(H, W, 1), DenseGrid(H, W, 2), DenseGrid(H, W, 2), DenseGrid(H, W, 2)};
  const double cell = std::min(cfg.cell_x, cfg.cell_y);
  for (const Box2D& b : gts) {
    const double fr = (b.x - cfg.origin_x) / cfg.cell_x, fc = (b.y - cfg.origin_y) / cfg.cell_y;
    if (!(fr >= 0 && fr < H && fc >= 0 && fc < W)) {
      ++tg.skipped;
      continue;
    }
    const int r = static_cast<int>(std::floor(fr)), c = static_cast<int>(std::floor(fc));
    const double sigma = std::max(1.0, std::min(b.l, b.w) / (6.0 * cell));
    const int rad = static_cast<int>(std::ceil(3.0 * sigma));
    for (int i = std::max(0, r - rad); i <= std::min(H - 1, r + rad); ++i)
      for (int j = std::max(0, c - rad); j <= std::min(W - 1, c + rad); ++j) {
        const double d2 = static_cast<double>((i - r) * (i - r) + (j - c) * (j - c));
        double& v = tg.maps.heatmap.at(i, j, 0);
        v = std::max(v, std::exp(-d2 / (2.0 * sigma * sigma)));
      }
    tg.maps.offset.at(r, c, 0) = (b.x - cfg.row_center(r)) / cfg.cell_x;
    tg.maps.offset.at(r, c, 1) = (b.y - cfg.col_center(c)) / cfg.cell_y;
    tg.maps.size.at(r, c, 0) = std::log(b.l);
    tg.maps.size.at(r, c, 1) = std::log(b.w);
    tg.maps.yaw.at(r, c, 0) = std::sin(b.yaw);
    tg.maps.yaw.at(r, c, 1) = std::cos(b.yaw);
    const int idx = r * W + c;
    if (std::find(tg.positives.begin(), tg.positives.end(), idx) == tg.positives.end()) tg.positives.push_back(idx);
  }
  std::sort(tg.positives.begin(), tg.positives.end());
  return tg;
}

namespace {

constexpr double kLogFloor = 1e-12;

struct LossParts {
  double value = 0;
  std::vector<double> d_heat, d_off, d_size, d_yaw;
};

void check_shapes(const HeadOutput& p, const Targets& tg) {
  auto same = [](const DenseGrid& a, const DenseGrid& b) {
    return a.rows == b.rows && a.cols == b.cols && a.channels == b.channels;
  };
  if (!same(p.heatmap, tg.maps.heatmap) || !same(p.offset, tg.maps.offset) || !same(p.size, tg.maps.size) ||
      !same(p.yaw, tg.maps.yaw))
    throw Error("detection_loss: prediction and target shapes differ");
}

// Focal term per cell and its derivative with respect to the probability.
void focal(double p, double t, const LossConfig& c, double& l, double& dl) {
  if (t >= 1.0) {
    const double q = std::pow(1.0 - p, c.alpha);
    const bool guard = p < kLogFloor;
    const double lg = std::log(guard ? kLogFloor : p);
    l = -q * lg;
    dl = c.alpha * std::pow(1.0 - p, c.alpha - 1.0) * lg - (guard ? 0.0 : q / p);
  } else {
    const double w = std::pow(1.0 - t, c.beta);
    const double pa = std::pow(p, c.alpha);
    const bool guard = 1.0 - p < kLogFloor;
    const double lg = std::log(guard ? kLogFloor : 1.0 - p);
    l = -w * pa * lg;
    dl = -w * (c.alpha * std::pow(p, c.alpha - 1.0) * lg - (guard ? 0.0 : pa / (1.0 - p)));
  }
}

double sgn(double x) { return (x > 0) - (x < 0); }

LossParts loss_parts(const HeadOutput& p, const Targets& tg, const LossConfig& c, bool want_grad) {
  check_shapes(p, tg);
  LossParts out;
  const double norm = 1.0 / std::max<double>(1.0, static_cast<double>(tg.positives.size()));
  const std::size_t n = p.heatmap.values.size();
  if (want_grad) {
    out.d_heat.assign(n, 0.0);
    out.d_off.assign(n * 2, 0.0);
    out.d_size.assign(n * 2, 0.0);
    out.d_yaw.assign(n * 2, 0.0);
  }
  double fl = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double l, dl;
    focal(p.heatmap.values[i], tg.maps.heatmap.values[i], c, l, dl);
    fl += l;
    if (want_grad) out.d_heat[i] = c.heatmap_weight * norm * dl;
  }
  double reg = 0;
  auto l1 = [&](const DenseGrid& a, const DenseGrid& b, std::vector<double>& g, std::size_t idx) {
    for (int ch = 0; ch < 2; ++ch) {
      const std::size_t k = idx * 2 + static_cast<std::size_t>(ch);
      const double d = a.values[k] - b.values[k];
      reg += std::abs(d);
      if (want_grad) g[k] = c.regression_weight * norm * sgn(d);
    }
  };
  for (int idx : tg.positives) {
    const auto k = static_cast<std::size_t>(idx);
    l1(p.offset, tg.maps.offset, out.d_off, k);
    l1(p.size, tg.maps.size, out.d_size, k);
    l1(p.yaw, tg.maps.yaw, out.d_yaw, k);
  }
  out.value = norm * (c.heatmap_weight * fl + c.regression_weight * reg);
  if (!std::isfinite(out.value)) throw ad::NonFinite("detection_loss", -1);
  return out;
}

}  // namespace

double detection_loss(const HeadOutput& pred, const Targets& target, const LossConfig& cfg) {
  return loss_parts(pred, target, cfg, false).value;
}

Var detection_loss(Tape& t, const HeadVars& pred, const Targets& target, const LossConfig& cfg) {
  auto parts = std::make_shared<LossParts>(loss_parts(head_values(t, pred), target, cfg, true));
  Tensor y({1}, parts->value);
  const HeadVars hv = pred;
  return t.record("detection_loss", std::move(y), {hv.heatmap, hv.offset, hv.size, hv.yaw},
                  [hv, parts](Tape& tp, const Tensor& g) {
                    auto acc = [&](Var v, const std::vector<double>& d) {
                      if (!tp.requires_grad(v)) return;
                      Tensor& gv = tp.grad(v);
                      for (std::size_t i = 0; i < d.size(); ++i) gv[i] += g[0] * d[i];
                    };
                    acc(hv.heatmap, parts->d_heat);
                    acc(hv.offset, parts->d_off);
                    acc(hv.size, parts->d_size);
                    acc(hv.yaw, parts->d_yaw);
                  });
}

std::vector<Detection> decode_detections(const HeadOutput& head, const VoxelConfig& cfg, const DecodeConfig& dc) {
  const DenseGrid& hm = head.heatmap;
  struct Cand {
    double score;
    int r, c;
  };
  std::vector<Cand> cands;
  for (int r = 0; r < hm.rows; ++r)
    for (int c = 0; c < hm.cols; ++c) {
      const double s = hm.at(r, c, 0);
      if (s < dc.score_thresh) continue;
      bool peak = true;
      for (int dr = -1; dr <= 1 && peak; ++dr)
        for (int dcl = -1; dcl <= 1; ++dcl) {
          if (!dr && !dcl) continue;
          const int rr = r + dr, cc = c + dcl;
          if (rr < 0 || rr >= hm.rows || cc < 0 || cc >= hm.cols) continue;
          const double o = hm.at(rr, cc, 0);
          // Plateaus keep their first cell in scan order.
          if (o > s || (o == s && (dr < 0 || (dr == 0 && dcl < 0)))) {
            peak = false;
            break;
          }
        }
      if (peak) cands.push_back({s, r, c});
    }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });
  if (cands.size() > static_cast<std::size_t>(std::max(0, dc.max_det))) cands.resize(static_cast<std::size_t>(dc.max_det));
  std::vector<Detection> out;
  out.reserve(cands.size());
  for (const Cand& k : cands) {
    Detection d;
    d.x = cfg.row_center(k.r) + head.offset.at(k.r, k.c, 0) * cfg.cell_x;
    d.y = cfg.col_center(k.c) + head.offset.at(k.r, k.c, 1) * cfg.cell_y;
    d.l = std::exp(head.size.at(k.r, k.c, 0));
    d.w = std::exp(head.size.at(k.r, k.c, 1));
    d.yaw = std::atan2(head.yaw.at(k.r, k.c, 0), head.yaw.at(k.r, k.c, 1));
    d.score = k.score;
    out.push_back(d);
  }
  return out;
}

Augmentation Augmentation::sample(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> s(0.95, 1.05), r(-kPi / 8, kPi / 8);
  Augmentation a;
  a.scale = s(rng);
  a.rotation = r(rng);
  return a;
}

PointCloud Augmentation::apply(const PointCloud& cloud) const {
  const double c = std::cos(rotation), s = std::sin(rotation);
  PointCloud out = cloud;
  for (Point& p : out.points) {
    const double x = p.x, y = p.y;
    p.x = scale * (c * x - s * y);
    p.y = scale * (s * x + c * y);
    p.z *= scale;
  }
  return out;
}

Box2D Augmentation::apply(const Box2D& b) const {
  const double c = std::cos(rotation), s = std::sin(rotation);
  return {scale * (c * b.x - s * b.y), scale * (s * b.x + c * b.y), scale * b.l, scale * b.w,
          canonical_box_yaw(b.yaw + rotation)};
}

std::string detections_to_jsonl(std::span<const Detection> dets) {
  std::string out;
  for (const Detection& d : dets) {
    nlohmann::json j = {{"x", d.x}, {"y", d.y}, {"l", d.l}, {"w", d.w}, {"yaw", d.yaw}, {"score", d.score}};
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<Detection> detections_from_jsonl(const std::string& text) {
  std::vector<Detection> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line);
    Detection d;
    d.x = j.at("x").get<double>();
    d.y = j.at("y").get<double>();
    d.l = j.at("l").get<double>();
    d.w = j.at("w").get<double>();
    d.yaw = j.at("yaw").get<double>();
    d.score = j.value("score", 1.0);
    out.push_back(d);
  }
  return out;
}

}  // namespace macp
