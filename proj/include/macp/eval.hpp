#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "macp/geom.hpp"
#include "macp/perception.hpp"

namespace macp::eval {

/// Corners in counter-clockwise order.
std::vector<Vec2> box_corners(const Box2D& b);
double polygon_area(std::span<const Vec2> poly);
/// Sutherland-Hodgman: clips `subject` against the convex CCW polygon `clip`.
std::vector<Vec2> clip_polygon(std::span<const Vec2> subject, std::span<const Vec2> clip);

/// BEV IoU of two oriented rectangles. Throws on a zero-area box.
double rotated_iou(const Box2D& a, const Box2D& b);

struct ScoredMatch {
  double score = 0;
  bool tp = false;
};

/// Greedy matching: detections by descending score, each to the unmatched gt
/// of highest IoU >= thresh. `gt_of_det` receives the matched gt index or -1.
std::vector<ScoredMatch> match_frame(std::span<const Detection> dets, std::span<const Box2D> gts, double iou_thresh,
                                     std::vector<int>* gt_of_det = nullptr);

/// All-point interpolated AP from pooled matches. 0 gts and 0 dets gives 1.
double average_precision(std::vector<ScoredMatch> matches, std::int64_t n_gt);

double match_and_ap(std::span<const Detection> dets, std::span<const Box2D> gts, double iou_thresh);

/// Range buckets by Euclidean distance from the ego; the last bucket is open.
struct Bucket {
  std::string name;
  double lo, hi;
};
const std::vector<Bucket>& range_buckets();
int bucket_of(double x, double y);

struct FrameEval {
  std::vector<Detection> dets;
  std::vector<Box2D> gts;
};

struct ApRow {
  double iou = 0.5;
  std::string bucket = "overall";
  double ap = 0;
  std::int64_t n_gt = 0, n_det = 0;
};

/// AP at each threshold, overall and per bucket. Within a bucket a true
/// positive belongs to its gt's bucket and a false positive to its own.
std::vector<ApRow> ap_table(std::span<const FrameEval> frames, std::span<const double> ious = {});

struct EvalReport {
  std::string mode;
  std::vector<ApRow> rows;
  std::int64_t frames = 0;
  double am_mb = 0;
  std::int64_t params_total = 0, params_trainable = 0;

  double ap(double iou, const std::string& bucket = "overall") const;
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  static std::string csv_header();
  std::string csv_rows() const;
};

}  // namespace macp::eval
