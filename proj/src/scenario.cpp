#include "macp/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "macp/bytes.hpp"
#include "macp/eval.hpp"
#include "macp/perception.hpp"

namespace macp::scenario {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Box2D inflate(const Box2D& b, double m) { return {b.x, b.y, b.l + 2 * m, b.w + 2 * m, b.yaw}; }

}  // namespace

void WorldConfig::validate() const {
  if (!(half_x > 0 && half_y > 0)) throw Error("world: field extents must be positive");
  if (min_objects < 1 || max_objects < min_objects) throw Error("world: object count range is invalid");
  if (min_agents < 1 || max_agents < min_agents || max_agents > 7) throw Error("world: agent count must lie in [1, 7]");
  if (min_agents > min_objects) throw Error("world: agents are vehicles, so min_agents <= min_objects");
  if (!(partner_min >= 0 && partner_max >= partner_min)) throw Error("world: partner distance range is invalid");
  if (sensor.beams < 1 || !(sensor.max_range > 0)) throw Error("world: sensor needs beams >= 1 and a positive range");
  if (sensor.range_noise < 0 || sensor.angular_noise < 0 || sensor.dropout < 0 || sensor.dropout >= 1)
    throw Error("world: sensor noise parameters out of range");
  if (max_retries < 1 || !(eval_half > 0)) throw Error("world: retries and evaluation range must be positive");
}

WorldConfig WorldConfig::single_agent() {
  WorldConfig c;
  c.min_agents = c.max_agents = 1;
  return c;
}

WorldConfig WorldConfig::occlusion_heavy() {
  WorldConfig c;
  c.min_objects = 18;
  c.max_objects = 24;
  return c;
}

nlohmann::json to_json(const WorldConfig& c) {
  return {{"half_x", c.half_x},
          {"half_y", c.half_y},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"min_agents", c.min_agents},
          {"max_agents", c.max_agents},
          {"ego_jitter", c.ego_jitter},
          {"partner_min", c.partner_min},
          {"partner_max", c.partner_max},
          {"heading_jitter", c.heading_jitter},
          {"spawn_margin", c.spawn_margin},
          {"max_retries", c.max_retries},
          {"eval_half", c.eval_half},
          {"sensor",
           {{"beams", c.sensor.beams},
            {"max_range", c.sensor.max_range},
            {"range_noise", c.sensor.range_noise},
            {"angular_noise", c.sensor.angular_noise},
            {"dropout", c.sensor.dropout}}}};
}

WorldConfig world_config_from_json(const nlohmann::json& j, WorldConfig c) {
  if (!j.is_object()) throw Error("world config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (k == "half_x") c.half_x = v.get<double>();
    else if (k == "half_y") c.half_y = v.get<double>();
    else if (k == "min_objects") c.min_objects = v.get<int>();
    else if (k == "max_objects") c.max_objects = v.get<int>();
    else if (k == "min_agents") c.min_agents = v.get<int>();
    else if (k == "max_agents") c.max_agents = v.get<int>();
    else if (k == "ego_jitter") c.ego_jitter = v.get<double>();
    else if (k == "partner_min") c.partner_min = v.get<double>();
    else if (k == "partner_max") c.partner_max = v.get<double>();
    else if (k == "heading_jitter") c.heading_jitter = v.get<double>();
    else if (k == "spawn_margin") c.spawn_margin = v.get<double>();
    else if (k == "max_retries") c.max_retries = v.get<int>();
    else if (k == "eval_half") c.eval_half = v.get<double>();
    else if (k == "sensor") {
      if (!v.is_object()) throw Error("world.sensor must be a JSON object");
      for (const auto& [sk, sv] : v.items()) {
        if (sk == "beams") c.sensor.beams = sv.get<int>();
        else if (sk == "max_range") c.sensor.max_range = sv.get<double>();
        else if (sk == "range_noise") c.sensor.range_noise = sv.get<double>();
        else if (sk == "angular_noise") c.sensor.angular_noise = sv.get<double>();
        else if (sk == "dropout") c.sensor.dropout = sv.get<double>();
        else throw Error("unknown field world.sensor." + sk);
      }
    } else {
      throw Error("unknown field world." + k);
    }
  }
  c.validate();
  return c;
}

World gen_world(std::uint64_t seed, const WorldConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(splitmix64(seed));
  World w;
  w.seed = seed;
  w.cfg = cfg;
  std::uniform_int_distribution<int> n_obj_d(cfg.min_objects, cfg.max_objects), n_ag_d(cfg.min_agents, cfg.max_agents);
  const int n_obj = n_obj_d(rng);
  const int n_agents = std::min(n_ag_d(rng), n_obj);
  std::uniform_real_distribution<double> len(3.5, 5.5), wid(1.6, 2.2), jit(-cfg.heading_jitter, cfg.heading_jitter),
      unit(0.0, 1.0);
  const double inset = 3.0;

  auto heading = [&] { return normalize_angle((unit(rng) < 0.5 ? 0.0 : kPi) + jit(rng)); };
  auto fits = [&](const Box2D& b) {
    if (std::abs(b.x) > cfg.half_x - inset || std::abs(b.y) > cfg.half_y - inset) return false;
    for (const Box2D& o : w.objects)
      if (eval::rotated_iou(inflate(b, cfg.spawn_margin / 2), inflate(o, cfg.spawn_margin / 2)) > 0) return false;
    return true;
  };
  auto place = [&](auto&& center) {
    for (int t = 0; t < cfg.max_retries; ++t) {
      Box2D b;
      const Vec2 c = center();
      b.x = c.x;
      b.y = c.y;
      b.l = len(rng);
      b.w = wid(rng);
      b.yaw = heading();
      if (fits(b)) {
        w.objects.push_back(b);
        return;
      }
    }
    throw Error("gen_world: could not place object " + std::to_string(w.objects.size()) + " after " +
                std::to_string(cfg.max_retries) + " attempts (seed " + std::to_string(seed) + ")");
  };

  std::uniform_real_distribution<double> ej(-cfg.ego_jitter, cfg.ego_jitter);
  place([&] { return Vec2{ej(rng), ej(rng)}; });
  std::uniform_real_distribution<double> pd(cfg.partner_min, cfg.partner_max), pa(-kPi, kPi);
  const Box2D ego = w.objects[0];
  for (int a = 1; a < n_agents; ++a)
    place([&] {
      const double d = pd(rng), th = pa(rng);
      return Vec2{ego.x + d * std::cos(th), ego.y + d * std::sin(th)};
    });
  std::uniform_real_distribution<double> fx(-cfg.half_x + inset, cfg.half_x - inset),
      fy(-cfg.half_y + inset, cfg.half_y - inset);
  for (int o = n_agents; o < n_obj; ++o) place([&] { return Vec2{fx(rng), fy(rng)}; });

  for (int a = 0; a < n_agents; ++a) {
    const Box2D& b = w.objects[static_cast<std::size_t>(a)];
    w.agents.push_back({static_cast<std::uint32_t>(a), static_cast<std::size_t>(a), Pose2D::of(b.x, b.y, b.yaw)});
  }
  return w;
}

double ray_box_distance(Vec2 o, Vec2 d, const Box2D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double ox = c * (o.x - b.x) + s * (o.y - b.y), oy = -s * (o.x - b.x) + c * (o.y - b.y);
  const double dx = c * d.x + s * d.y, dy = -s * d.x + c * d.y;
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  auto slab = [&](double org, double dir, double half) {
    if (dir == 0.0) return std::abs(org) <= half;
    double a = (-half - org) / dir, bb = (half - org) / dir;
    if (a > bb) std::swap(a, bb);
    t0 = std::max(t0, a);
    t1 = std::min(t1, bb);
    return true;
  };
  if (!slab(ox, dx, b.l / 2) || !slab(oy, dy, b.w / 2)) return std::numeric_limits<double>::infinity();
  if (t1 < t0 || t0 < 0) return std::numeric_limits<double>::infinity();
  return t0;
}

PointCloud lidar_scan(const World& world, std::size_t agent, std::vector<int>* hit_object) {
  const Agent& ag = world.agents.at(agent);
  const SensorConfig& sc = world.cfg.sensor;
  std::mt19937_64 rng(splitmix64(world.seed ^ splitmix64(0x5ca7ULL + ag.id)));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0), zd(0.2, 1.8), in(0.3, 1.0);
  PointCloud cloud;
  if (hit_object) hit_object->clear();
  const Vec2 origin{ag.pose.x, ag.pose.y};
  for (int k = 0; k < sc.beams; ++k) {
    // Fixed draw order per ray keeps scans reproducible whatever the geometry.
    const double an = noise(rng), rn = noise(rng), drop = unit(rng), z = zd(rng), inten = in(rng);
    const double theta = 2.0 * kPi * k / sc.beams + sc.angular_noise * an;
    const double wa = ag.pose.yaw + theta;
    const Vec2 dir{std::cos(wa), std::sin(wa)};
    double best = std::numeric_limits<double>::infinity();
    int hit = -1;
    for (std::size_t o = 0; o < world.objects.size(); ++o) {
      if (o == ag.object) continue;
      const double t = ray_box_distance(origin, dir, world.objects[o]);
      if (t < best) {
        best = t;
        hit = static_cast<int>(o);
      }
    }
    if (hit < 0 || best > sc.max_range || drop < sc.dropout) continue;
    const double r = best + sc.range_noise * rn;
    // Stored at file precision so in-memory frames equal their on-disk copies.
    cloud.points.push_back(to_file_precision({r * std::cos(theta), r * std::sin(theta), z, inten}));
    if (hit_object) hit_object->push_back(hit);
  }
  return cloud;
}

const char* kind_name(Kind k) { return k == Kind::single ? "single" : "cooperative"; }

Kind parse_kind(const std::string& s) {
  if (s == "single") return Kind::single;
  if (s == "cooperative") return Kind::cooperative;
  throw Error("unknown dataset kind '" + s + "' (expected single or cooperative)");
}

std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t index) { return splitmix64(seed ^ splitmix64(index + 1)); }

Frame make_frame(Kind kind, std::uint64_t seed, const WorldConfig& base) {
  WorldConfig cfg = base;
  if (kind == Kind::single) cfg.min_agents = cfg.max_agents = 1;
  const World w = gen_world(seed, cfg);
  Frame f;
  f.seed = seed;
  std::vector<bool> seen(w.objects.size(), false), ego_seen(w.objects.size(), false);
  for (std::size_t a = 0; a < w.agents.size(); ++a) {
    std::vector<int> hits;
    f.clouds.push_back(lidar_scan(w, a, &hits));
    f.agent_ids.push_back(w.agents[a].id);
    f.poses.push_back(w.agents[a].pose);
    for (int h : hits) {
      seen[static_cast<std::size_t>(h)] = true;
      if (a == 0) ego_seen[static_cast<std::size_t>(h)] = true;
    }
  }
  const Pose2D ego = w.agents[0].pose;
  for (std::size_t o = 0; o < w.objects.size(); ++o) {
    if (o == w.agents[0].object || !seen[o]) continue;
    Box2D b = transform_box(w.objects[o], Pose2D{}, ego);
    if (std::abs(b.x) >= cfg.eval_half || std::abs(b.y) >= cfg.eval_half) continue;
    b.yaw = canonical_box_yaw(b.yaw);
    f.gts.push_back(b);
    if (ego_seen[o]) f.ego_visible_gts.push_back(b);
  }
  return f;
}

std::vector<Frame> make_dataset(Kind kind, int n_frames, std::uint64_t seed, const WorldConfig& cfg) {
  if (n_frames < 1) throw Error("make_dataset: n_frames must be at least 1");
  std::vector<Frame> out;
  out.reserve(static_cast<std::size_t>(n_frames));
  for (int i = 0; i < n_frames; ++i) out.push_back(make_frame(kind, frame_seed(seed, static_cast<std::uint64_t>(i)), cfg));
  return out;
}

PointCloud mask_fov(const PointCloud& cloud, Vec2 c, double h) {
  if (!(h > 0)) throw Error("mask_fov: half_extent must be positive");
  PointCloud out;
  for (const Point& p : cloud.points)
    if (!(std::abs(p.x - c.x) <= h && std::abs(p.y - c.y) <= h)) out.points.push_back(p);
  return out;
}

double signed_range(Vec2 p) { return std::hypot(p.x, p.y) * (p.x >= 0 ? 1.0 : -1.0); }

RangeHistograms signed_range_histogram(const std::vector<Frame>& frames, int bins, double max_range) {
  if (bins < 2) throw Error("signed_range_histogram: need at least 2 bins");
  if (!(max_range > 0)) throw Error("signed_range_histogram: range must be positive");
  RangeHistograms h;
  for (Histogram* x : {&h.ego, &h.surrounding}) {
    x->lo = -max_range;
    x->hi = max_range;
    x->counts.assign(static_cast<std::size_t>(bins), 0);
  }
  auto add = [&](Histogram& hist, Vec2 p) {
    const double d = signed_range(p);
    if (d < hist.lo || d > hist.hi) return;
    const int b = std::min(bins - 1, static_cast<int>(std::floor((d - hist.lo) / hist.bin_width())));
    ++hist.counts[static_cast<std::size_t>(b)];
  };
  for (const Frame& f : frames)
    for (std::size_t a = 0; a < f.n_agents(); ++a)
      for (const Point& p : f.clouds[a].points) {
        const Vec2 q = a == 0 ? Vec2{p.x, p.y} : change_frame({p.x, p.y}, f.poses[a], f.poses[0]);
        add(a == 0 ? h.ego : h.surrounding, q);
      }
  return h;
}

std::string histogram_csv(const RangeHistograms& h) {
  std::ostringstream o;
  o << std::setprecision(10) << "role,bin_lo,bin_hi,count\n";
  for (const auto& [role, hist] : {std::pair<const char*, const Histogram*>{"ego", &h.ego}, {"surrounding", &h.surrounding}})
    for (std::size_t i = 0; i < hist->counts.size(); ++i)
      o << role << ',' << hist->lo + static_cast<double>(i) * hist->bin_width() << ','
        << hist->lo + static_cast<double>(i + 1) * hist->bin_width() << ',' << hist->counts[i] << '\n';
  return o.str();
}

std::string boxes_to_jsonl(const std::vector<Box2D>& boxes) {
  std::string out;
  for (const Box2D& b : boxes)
    out += nlohmann::json{{"x", b.x}, {"y", b.y}, {"l", b.l}, {"w", b.w}, {"yaw", b.yaw}}.dump() + "\n";
  return out;
}

std::vector<Box2D> boxes_from_jsonl(const std::string& text) {
  std::vector<Box2D> out;
  for (const Detection& d : detections_from_jsonl(text)) out.push_back(d.box());
  return out;
}

namespace {

std::string frame_stem(std::size_t i) {
  std::ostringstream o;
  o << "frame_" << std::setw(5) << std::setfill('0') << i;
  return o.str();
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  bytes::write_file(p, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::string read_text(const std::filesystem::path& p) {
  const auto b = bytes::read_file(p);
  return std::string(b.begin(), b.end());
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw bytes::IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  nlohmann::json m;
  m["kind"] = kind_name(ds.kind);
  m["seed"] = ds.seed;
  m["n_frames"] = ds.frames.size();
  m["config"] = to_json(ds.cfg);
  m["frames"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    const Frame& f = ds.frames[i];
    const std::string stem = frame_stem(i);
    nlohmann::json fj;
    fj["seed"] = f.seed;
    fj["agents"] = nlohmann::json::array();
    for (std::size_t a = 0; a < f.n_agents(); ++a) {
      const std::string cloud = stem + "_agent_" + std::to_string(a) + ".pc";
      write_point_cloud(dir / cloud, f.clouds[a]);
      fj["agents"].push_back(
          {{"id", f.agent_ids[a]}, {"pose", {f.poses[a].x, f.poses[a].y, f.poses[a].yaw}}, {"cloud", cloud}});
    }
    std::string gt;
    for (const Box2D& b : f.gts) {
      const bool vis = std::any_of(f.ego_visible_gts.begin(), f.ego_visible_gts.end(), [&](const Box2D& e) {
        return e.x == b.x && e.y == b.y && e.l == b.l && e.w == b.w && e.yaw == b.yaw;
      });
      gt += nlohmann::json{{"x", b.x}, {"y", b.y}, {"l", b.l}, {"w", b.w}, {"yaw", b.yaw}, {"ego_visible", vis}}.dump() +
            "\n";
    }
    write_text(dir / (stem + "_gt.jsonl"), gt);
    fj["gt"] = stem + "_gt.jsonl";
    m["frames"].push_back(fj);
  }
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_text(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest in " + dir.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    ds.kind = parse_kind(m.at("kind").get<std::string>());
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.cfg = world_config_from_json(m.at("config"), WorldConfig{});
    for (const auto& fj : m.at("frames")) {
      Frame f;
      f.seed = fj.at("seed").get<std::uint64_t>();
      for (const auto& aj : fj.at("agents")) {
        f.agent_ids.push_back(aj.at("id").get<std::uint32_t>());
        const auto& p = aj.at("pose");
        f.poses.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
        f.clouds.push_back(read_point_cloud(dir / aj.at("cloud").get<std::string>()));
      }
      std::istringstream in(read_text(dir / fj.at("gt").get<std::string>()));
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const Box2D b{j.at("x").get<double>(), j.at("y").get<double>(), j.at("l").get<double>(),
                      j.at("w").get<double>(), j.at("yaw").get<double>()};
        f.gts.push_back(b);
        if (j.value("ego_visible", true)) f.ego_visible_gts.push_back(b);
      }
      ds.frames.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace macp::scenario
