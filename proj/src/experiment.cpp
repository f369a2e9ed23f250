#include "macp/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "macp/fusion.hpp"
#include "macp/peft.hpp"

namespace macp::exp {

using nn::Tape;
using nn::Var;

namespace {

int agents_used(const Frame& f, int max_agents) {
  return static_cast<int>(std::min<std::size_t>(f.n_agents(), static_cast<std::size_t>(std::max(1, max_agents))));
}

void require_channel(const Model& m) {
  if (!m.arch.channel) throw Error("cooperative model has no compression channel");
}

}  // namespace

HeadVars cooperative_forward(Tape& t, const Frame& f, Model& m, int max_agents, Channel ch,
                             comms::ChannelStats* ego_stats, const PointCloud* ego_cloud) {
  require_channel(m);
  const int n = agents_used(f, max_agents);
  const VoxelConfig& vc = m.arch.voxel;
  const Var ego = encode_features(t, ego_cloud ? *ego_cloud : f.clouds[0], m);
  std::vector<Var> partners;
  if (ch != Channel::wire) {
    for (int a = 1; a < n; ++a) {
      const Var map = encode_features(t, f.clouds[static_cast<std::size_t>(a)], m);
      Var latent = peft::conada_compress(t, map, m.params, names::channel());
      if (ch == Channel::simulated) latent = nn::round_f32(t, latent);
      const Var dec = peft::conada_decompress(t, latent, m.params, names::channel());
      partners.push_back(fusion::warp_to_ego(t, dec, f.poses[static_cast<std::size_t>(a)], f.poses[0], vc));
    }
  } else if (n > 1) {
    // Every participant compresses and broadcasts; the ego consumes its inbox.
    std::vector<comms::AgentState> states;
    for (int a = 0; a < n; ++a) {
      const auto ai = static_cast<std::size_t>(a);
      const Var map = a == 0 ? ego : encode_features(t, f.clouds[ai], m);
      const Var latent = peft::conada_compress(t, map, m.params, names::channel());
      states.push_back({f.agent_ids[ai], f.poses[ai], DenseGrid::from_tensor(t.value(latent)),
                        static_cast<std::uint32_t>(m.arch.compression_factor)});
    }
    const comms::BroadcastResult round = comms::broadcast_round(states);
    for (const comms::FeatureMessage& msg : round.inbox.at(f.agent_ids[0])) {
      if (ego_stats) ego_stats->add_message(comms::encode_message(msg).size());
      const Var dec = peft::conada_decompress(t, t.constant(msg.latent.to_tensor()), m.params, names::channel());
      partners.push_back(fusion::warp_to_ego(t, dec, msg.pose, f.poses[0], vc));
    }
  }
  const Var fused = fusion::fuse_maps(t, ego, partners, m.arch.fusion, &m.params);
  return predict_heads(t, fusion::post_fusion_conv(t, fused, m.params), m);
}

namespace {

struct Sample {
  const Frame* frame;
  std::vector<Box2D> gts;
  PointCloud cloud;  ///< augmented ego cloud (pretraining)
};

void fill_missing_grads(ad::ParamSet& ps) {
  for (ad::Param* p : ps.trainable())
    if (!p->has_grad || p->grad.size() != p->value.size()) {
      p->grad = Tensor(p->value.shape);
      p->has_grad = true;
    }
}

void scale_grads(ad::ParamSet& ps, double s) {
  for (ad::Param* p : ps.trainable())
    for (double& g : p->grad.data) g *= s;
}

template <typename Step>
TrainLog train_loop(Model& m, std::size_t n, const TrainConfig& cfg, Step&& sample_loss) {
  if (n == 0) throw Error("training needs at least one frame");
  if (cfg.epochs < 1 || cfg.batch < 1 || !(cfg.lr > 0)) throw Error("training needs epochs >= 1, batch >= 1, lr > 0");
  TrainLog log;
  ad::OptimState opt;
  const std::int64_t per_epoch = static_cast<std::int64_t>((n + static_cast<std::size_t>(cfg.batch) - 1) /
                                                           static_cast<std::size_t>(cfg.batch));
  const std::int64_t total = per_epoch * cfg.epochs;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  m.params.zero_grad();
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch));
      for (std::size_t i = start; i < end; ++i) {
        double l = 0;
        try {
          l = sample_loss(order[i], rng);
        } catch (const ad::NonFinite& err) {
          throw Divergence(std::string(err.what()) + " at epoch " + std::to_string(e + 1));
        }
        if (!std::isfinite(l)) throw Divergence("non-finite loss at epoch " + std::to_string(e + 1));
        sum += l;
      }
      fill_missing_grads(m.params);
      scale_grads(m.params, 1.0 / static_cast<double>(end - start));
      ad::adamw_step(m.params, opt, ad::cosine_lr(log.steps, total, cfg.lr), cfg.adamw);
      m.params.zero_grad();
      ++log.steps;
      for (ad::Param* p : m.params.trainable())
        for (double v : p->value.data)
          if (!std::isfinite(v)) throw Divergence("parameter '" + p->name + "' became non-finite");
    }
    log.epoch_loss.push_back(sum / static_cast<double>(n));
    if (cfg.on_epoch) cfg.on_epoch(e + 1, log.epoch_loss.back());
  }
  return log;
}

double backprop(Tape& t, Var loss) {
  const double v = t.value(loss)[0];
  if (std::isfinite(v)) t.backward(loss);
  return v;
}

Tape::Options train_options() {
  Tape::Options o;
  o.grads_for_frozen = false;
  return o;
}

}  // namespace

TrainLog pretrain(Model& m, const std::vector<Frame>& frames, const TrainConfig& cfg) {
  return train_loop(m, frames.size(), cfg, [&](std::size_t i, std::mt19937_64& rng) {
    const Frame& f = frames[i];
    PointCloud cloud = f.clouds[0];
    std::vector<Box2D> gts = f.gts;
    if (cfg.augment) {
      const Augmentation a = Augmentation::sample(rng);
      cloud = a.apply(cloud);
      for (Box2D& b : gts) b = a.apply(b);
    }
    Tape t(train_options());
    const HeadVars h = single_agent_forward(t, cloud, m);
    return backprop(t, detection_loss(t, h, splat_targets(gts, m.arch.voxel), cfg.loss));
  });
}

TrainLog finetune(Model& m, const std::vector<Frame>& frames, const TrainConfig& cfg) {
  require_channel(m);
  return train_loop(m, frames.size(), cfg, [&](std::size_t i, std::mt19937_64&) {
    const Frame& f = frames[i];
    Tape t(train_options());
    const HeadVars h = cooperative_forward(t, f, m, cfg.max_agents, Channel::simulated);
    return backprop(t, detection_loss(t, h, splat_targets(f.gts, m.arch.voxel), cfg.loss));
  });
}

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::no_fusion: return "no_fusion";
    case Mode::early_fusion: return "early_fusion";
    case Mode::late_fusion: return "late_fusion";
    case Mode::cooperative: return "cooperative";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  for (Mode m : {Mode::no_fusion, Mode::early_fusion, Mode::late_fusion, Mode::cooperative})
    if (s == mode_name(m)) return m;
  throw Error("unknown evaluation mode '" + s + "'");
}

std::vector<Detection> in_range(std::vector<Detection> dets, double half, double self_radius) {
  dets.erase(std::remove_if(dets.begin(), dets.end(),
                            [&](const Detection& d) {
                              return !(std::abs(d.x) < half && std::abs(d.y) < half) ||
                                     std::hypot(d.x, d.y) < self_radius;
                            }),
             dets.end());
  return dets;
}

std::vector<Detection> detect(const Frame& f, const Model* single, const Model* coop, const EvalOptions& opt,
                              comms::ChannelStats* ego_stats, std::int64_t* extra_bytes) {
  const Model* needed = opt.mode == Mode::cooperative ? coop : single;
  if (!needed) throw Error(std::string("evaluation mode ") + mode_name(opt.mode) + " needs a trained model");
  const VoxelConfig& vc = needed->arch.voxel;
  const double half = std::min({-vc.origin_x, vc.origin_x + vc.rows * vc.cell_x, -vc.origin_y,
                                vc.origin_y + vc.cols * vc.cell_y});
  PointCloud ego_cloud = opt.mask ? scenario::mask_fov(f.clouds[0], opt.mask->center, opt.mask->half_extent)
                                  : f.clouds[0];
  const int n = agents_used(f, opt.max_agents);
  std::vector<Detection> dets;
  switch (opt.mode) {
    case Mode::no_fusion: dets = decode_detections(single_agent_infer(ego_cloud, *single), vc, opt.decode); break;
    case Mode::early_fusion: {
      std::vector<std::pair<PointCloud, Pose2D>> clouds{{ego_cloud, f.poses[0]}};
      for (int a = 1; a < n; ++a) {
        clouds.push_back({f.clouds[static_cast<std::size_t>(a)], f.poses[static_cast<std::size_t>(a)]});
        if (extra_bytes) *extra_bytes += static_cast<std::int64_t>(encode_point_cloud(clouds.back().first).size());
      }
      dets = decode_detections(single_agent_infer(fusion::early_fuse_clouds(clouds, f.poses[0]), *single), vc,
                               opt.decode);
      break;
    }
    case Mode::late_fusion: {
      std::vector<std::pair<std::vector<Detection>, Pose2D>> sets;
      for (int a = 0; a < n; ++a) {
        const PointCloud& c = a == 0 ? ego_cloud : f.clouds[static_cast<std::size_t>(a)];
        sets.push_back({in_range(decode_detections(single_agent_infer(c, *single), vc, opt.decode), half),
                        f.poses[static_cast<std::size_t>(a)]});
        if (a > 0 && extra_bytes) *extra_bytes += static_cast<std::int64_t>(detections_to_jsonl(sets.back().first).size());
      }
      dets = fusion::late_fuse_detections(sets, f.poses[0]);
      break;
    }
    case Mode::cooperative: {
      Tape t(inference_options());
      const HeadVars h = cooperative_forward(t, f, const_cast<Model&>(*coop), opt.max_agents, Channel::wire,
                                             ego_stats, &ego_cloud);
      dets = decode_detections(head_values(t, h), vc, opt.decode);
      break;
    }
  }
  return in_range(std::move(dets), half, kSelfRadius);
}

eval::EvalReport evaluate(const std::vector<Frame>& frames, const Model* single, const Model* coop,
                          const EvalOptions& opt) {
  if (frames.empty()) throw Error("evaluate: no frames");
  std::vector<eval::FrameEval> fe;
  comms::ChannelStats stats;
  std::int64_t extra = 0;
  for (const Frame& f : frames) fe.push_back({detect(f, single, coop, opt, &stats, &extra), f.gts});
  eval::EvalReport r;
  r.mode = opt.label.empty() ? mode_name(opt.mode) : opt.label;
  r.rows = eval::ap_table(fe);
  r.frames = static_cast<std::int64_t>(frames.size());
  r.am_mb = opt.mode == Mode::cooperative ? comms::am_megabytes(stats, r.frames)
                                          : static_cast<double>(extra) / static_cast<double>(r.frames) / 1048576.0;
  const Model* used = opt.mode == Mode::cooperative ? coop : single;
  const peft::ParamCount pc = peft::count_params(*used);
  r.params_total = pc.total;
  r.params_trainable = pc.trainable;
  return r;
}

Model finetune_variant(const Model& base, const peft::VariantConfig& vc, const std::vector<Frame>& frames,
                       const TrainConfig& cfg, TrainLog* log) {
  Model m = peft::build_variant(vc, base.params, base.arch);
  TrainLog l = finetune(m, frames, cfg);
  if (log) *log = std::move(l);
  return m;
}

std::vector<Vec2> mask_grid(int n, double span) {
  if (n < 1) throw Error("mask grid needs at least one position per axis");
  std::vector<Vec2> out;
  auto at = [&](int i) { return n == 1 ? 0.0 : -span + 2.0 * span * i / (n - 1); };
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out.push_back({at(i), at(j)});
  return out;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

}  // namespace

Robustness robustness_sweep(const std::vector<Frame>& frames, const Model& single, const Model& coop,
                            const std::vector<Vec2>& centers, double half_extent, int max_agents) {
  if (centers.empty()) throw Error("robustness sweep needs at least one mask position");
  Robustness r;
  r.centers = centers;
  for (const Vec2& c : centers) {
    EvalOptions o;
    o.mask = Mask{c, half_extent};
    o.max_agents = max_agents;
    o.mode = Mode::no_fusion;
    r.single_ap.push_back(evaluate(frames, &single, nullptr, o).ap(0.5));
    o.mode = Mode::cooperative;
    r.coop_ap.push_back(evaluate(frames, nullptr, &coop, o).ap(0.5));
  }
  std::tie(r.single_mean, r.single_std) = mean_std(r.single_ap);
  std::tie(r.coop_mean, r.coop_std) = mean_std(r.coop_ap);
  return r;
}

}  // namespace macp::exp
