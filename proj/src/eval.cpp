#include "macp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace macp::eval {

std::vector<Vec2> box_corners(const Box2D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = b.l / 2, hw = b.w / 2;
  const double lx[4] = {hl, -hl, -hl, hl}, ly[4] = {hw, hw, -hw, -hw};
  std::vector<Vec2> out(4);
  for (int i = 0; i < 4; ++i) out[i] = {b.x + c * lx[i] - s * ly[i], b.y + s * lx[i] + c * ly[i]};
  return out;
}

double polygon_area(std::span<const Vec2> poly) {
  double a = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return a / 2;
}

std::vector<Vec2> clip_polygon(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> out(subject.begin(), subject.end());
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Vec2 a = clip[e], b = clip[(e + 1) % clip.size()];
    // > 0 inside (left of a->b).
    auto side = [&](Vec2 p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); };
    std::vector<Vec2> in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Vec2 p = in[i], q = in[(i + 1) % in.size()];
      const double sp = side(p), sq = side(q);
      if (sp >= 0) out.push_back(p);
      if ((sp >= 0) != (sq >= 0)) {
        const double t = sp / (sp - sq);
        out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
  }
  return out;
}

double rotated_iou(const Box2D& a, const Box2D& b) {
  for (const Box2D* x : {&a, &b})
    if (!(x->l > 0 && x->w > 0) || !std::isfinite(x->l * x->w))
      throw Error("rotated_iou: degenerate box (l=" + std::to_string(x->l) + ", w=" + std::to_string(x->w) + ")");
  const double ra = std::hypot(a.l, a.w) / 2, rb = std::hypot(b.l, b.w) / 2;
  if (std::hypot(a.x - b.x, a.y - b.y) > ra + rb) return 0.0;
  const auto pa = box_corners(a), pb = box_corners(b);
  const double inter = std::max(0.0, polygon_area(clip_polygon(pa, pb)));
  const double uni = a.l * a.w + b.l * b.w - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<ScoredMatch> match_frame(std::span<const Detection> dets, std::span<const Box2D> gts, double iou_thresh,
                                     std::vector<int>* gt_of_det) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return dets[i].score > dets[j].score; });
  std::vector<bool> used(gts.size(), false);
  std::vector<ScoredMatch> out(dets.size());
  if (gt_of_det) gt_of_det->assign(dets.size(), -1);
  for (std::size_t i : order) {
    int best = -1;
    double best_iou = iou_thresh;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double iou = rotated_iou(dets[i].box(), gts[g]);
      if (iou >= best_iou && (best < 0 || iou > best_iou)) {
        best = static_cast<int>(g);
        best_iou = iou;
      }
    }
    out[i] = {dets[i].score, best >= 0};
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = true;
      if (gt_of_det) (*gt_of_det)[i] = best;
    }
  }
  return out;
}

double average_precision(std::vector<ScoredMatch> m, std::int64_t n_gt) {
  if (n_gt == 0) return m.empty() ? 1.0 : 0.0;
  std::stable_sort(m.begin(), m.end(), [](const ScoredMatch& a, const ScoredMatch& b) { return a.score > b.score; });
  std::vector<double> rec, prec;
  std::int64_t tp = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    tp += m[i].tp;
    rec.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    prec.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  // Precision envelope, then area over recall steps.
  for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0, prev_r = 0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    ap += (rec[i] - prev_r) * prec[i];
    prev_r = rec[i];
  }
  return std::clamp(ap, 0.0, 1.0);
}

double match_and_ap(std::span<const Detection> dets, std::span<const Box2D> gts, double iou_thresh) {
  return average_precision(match_frame(dets, gts, iou_thresh), static_cast<std::int64_t>(gts.size()));
}

const std::vector<Bucket>& range_buckets() {
  static const std::vector<Bucket> b = {{"0-10m", 0, 10}, {"10-20m", 10, 20}, {"20-32m", 20, INFINITY}};
  return b;
}

int bucket_of(double x, double y) {
  const double d = std::hypot(x, y);
  const auto& b = range_buckets();
  for (std::size_t i = 0; i < b.size(); ++i)
    if (d >= b[i].lo && d < b[i].hi) return static_cast<int>(i);
  return static_cast<int>(b.size()) - 1;
}

std::vector<ApRow> ap_table(std::span<const FrameEval> frames, std::span<const double> ious) {
  static const double kDefault[] = {0.5, 0.7};
  if (ious.empty()) ious = kDefault;
  const auto& buckets = range_buckets();
  std::vector<ApRow> rows;
  for (double thr : ious) {
    std::vector<ScoredMatch> all;
    std::vector<std::vector<ScoredMatch>> per(buckets.size());
    std::int64_t n_gt = 0;
    std::vector<std::int64_t> gt_b(buckets.size(), 0);
    for (const FrameEval& f : frames) {
      std::vector<int> gt_of;
      const auto m = match_frame(f.dets, f.gts, thr, &gt_of);
      all.insert(all.end(), m.begin(), m.end());
      n_gt += static_cast<std::int64_t>(f.gts.size());
      for (const Box2D& g : f.gts) ++gt_b[static_cast<std::size_t>(bucket_of(g.x, g.y))];
      for (std::size_t i = 0; i < m.size(); ++i) {
        const int b = gt_of[i] >= 0 ? bucket_of(f.gts[static_cast<std::size_t>(gt_of[i])].x,
                                                 f.gts[static_cast<std::size_t>(gt_of[i])].y)
                                    : bucket_of(f.dets[i].x, f.dets[i].y);
        per[static_cast<std::size_t>(b)].push_back(m[i]);
      }
    }
    rows.push_back({thr, "overall", average_precision(all, n_gt), n_gt, static_cast<std::int64_t>(all.size())});
    for (std::size_t b = 0; b < buckets.size(); ++b)
      rows.push_back({thr, buckets[b].name, average_precision(per[b], gt_b[b]), gt_b[b],
                      static_cast<std::int64_t>(per[b].size())});
  }
  return rows;
}

double EvalReport::ap(double iou, const std::string& bucket) const {
  for (const ApRow& r : rows)
    if (std::abs(r.iou - iou) < 1e-9 && r.bucket == bucket) return r.ap;
  throw Error("report has no AP for iou " + std::to_string(iou) + " bucket " + bucket);
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["mode"] = mode;
  j["frames"] = frames;
  j["am_mb"] = am_mb;
  j["params_total"] = params_total;
  j["params_trainable"] = params_trainable;
  j["ap"] = nlohmann::json::array();
  for (const ApRow& r : rows)
    j["ap"].push_back({{"iou", r.iou}, {"bucket", r.bucket}, {"ap", r.ap}, {"n_gt", r.n_gt}, {"n_det", r.n_det}});
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.mode = j.at("mode").get<std::string>();
  r.frames = j.at("frames").get<std::int64_t>();
  r.am_mb = j.at("am_mb").get<double>();
  r.params_total = j.at("params_total").get<std::int64_t>();
  r.params_trainable = j.at("params_trainable").get<std::int64_t>();
  for (const auto& a : j.at("ap"))
    r.rows.push_back({a.at("iou").get<double>(), a.at("bucket").get<std::string>(), a.at("ap").get<double>(),
                      a.at("n_gt").get<std::int64_t>(), a.at("n_det").get<std::int64_t>()});
  return r;
}

std::string EvalReport::csv_header() { return "mode,iou,bucket,ap,am_mb,params_total,params_trainable\n"; }

std::string EvalReport::csv_rows() const {
  std::ostringstream o;
  o << std::setprecision(10);
  for (const ApRow& r : rows)
    o << mode << ',' << r.iou << ',' << r.bucket << ',' << r.ap << ',' << am_mb << ',' << params_total << ','
      << params_trainable << '\n';
  return o.str();
}

}  // namespace macp::eval
