// Experiment driver: data generation, pretraining, fine-tuning, evaluation, sweeps and diagnostics.
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "macp/autodiff.hpp"
#include "macp/bytes.hpp"
#include "macp/experiment.hpp"
#include "macp/peft.hpp"
#include "macp/scenario.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace macp;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kDivergence = 4, kMissing = 5 };

class ConfigError : public Error {
 public:
  using Error::Error;
};

class MissingArtifact : public Error {
 public:
  using Error::Error;
};

const char* kSplits[] = {"pretrain", "finetune", "test"};

// ---- config ---------------------------------------------------------------

template <typename T>
T field(const json& j, const std::string& path, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + path + key + "' has the wrong type");
  }
}

template <typename T>
T required(const json& j, const std::string& path, const std::string& key) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError("config is missing required field '" + path + key + "'");
  return field<T>(j, path, key, T{});
}

void only_keys(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError("config field '" + path + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : keys) ok = ok || k == a;
    if (!ok) throw ConfigError("unknown config field '" + path + k + "'");
  }
}

struct Split {
  scenario::Kind kind = scenario::Kind::cooperative;
  int n_frames = 0;
  std::uint64_t seed = 0;
  scenario::WorldConfig world;
};

struct Config {
  std::uint64_t seed = 1;
  fs::path out = "runs/default";
  std::map<std::string, Split> data;
  exp::TrainConfig pretrain, finetune;
  peft::VariantConfig variant;
  std::vector<exp::Mode> modes{exp::Mode::no_fusion, exp::Mode::early_fusion, exp::Mode::late_fusion,
                               exp::Mode::cooperative};
  int eval_max_agents = 7;
  std::vector<int> factors{1, 2, 4, 8, 16, 32};
  std::vector<int> cavs{1, 2, 3, 4};
  std::vector<FusionMethod> fusions{FusionMethod::weighted_sum, FusionMethod::mean, FusionMethod::sum,
                                    FusionMethod::concat};
  int mask_grid = 3;
  double mask_span = 12.0, mask_half_extent = 6.0;
  int diag_bins = 64;
};

exp::TrainConfig train_section(const json& j, const std::string& path, exp::TrainConfig t, bool finetune) {
  if (finetune)
    only_keys(j, path, {"epochs", "lr", "batch", "weight_decay", "max_agents", "variant", "compression_factor",
                        "fusion", "bottleneck"});
  else
    only_keys(j, path, {"epochs", "lr", "batch", "weight_decay", "augment"});
  t.epochs = field(j, path, "epochs", t.epochs);
  t.lr = field(j, path, "lr", t.lr);
  t.batch = field(j, path, "batch", t.batch);
  t.adamw.weight_decay = field(j, path, "weight_decay", t.adamw.weight_decay);
  if (finetune) t.max_agents = field(j, path, "max_agents", t.max_agents);
  else t.augment = field(j, path, "augment", t.augment);
  if (t.epochs < 1 || t.epochs > 20) throw ConfigError(path + "epochs must lie in [1, 20]");
  if (!(t.lr > 0)) throw ConfigError(path + "lr must be positive");
  if (t.batch < 1) throw ConfigError(path + "batch must be at least 1");
  if (t.max_agents < 1 || t.max_agents > 7) throw ConfigError(path + "max_agents must lie in [1, 7]");
  return t;
}

void check_factor(int f) {
  ArchConfig a;
  if (f < 1 || a.width % f != 0)
    throw ConfigError("compression factor " + std::to_string(f) + " must divide the latent width " +
                      std::to_string(a.width));
}

Config parse_config(const json& j) {
  Config c;
  only_keys(j, "", {"seed", "out", "data", "pretrain", "finetune", "eval", "sweep", "diag"});
  c.seed = required<std::uint64_t>(j, "", "seed");
  c.out = field<std::string>(j, "", "out", c.out.string());
  const json& data = j.contains("data") ? j.at("data") : throw ConfigError("config is missing required field 'data'");
  only_keys(data, "data.", {"pretrain", "finetune", "test"});
  for (std::size_t k = 0; k < 3; ++k) {
    const std::string name = kSplits[k], path = "data." + name + ".";
    if (!data.contains(name)) throw ConfigError("config is missing required field 'data." + name + "'");
    const json& s = data.at(name);
    only_keys(s, path, {"kind", "n_frames", "seed", "world"});
    Split sp;
    try {
      sp.kind = scenario::parse_kind(required<std::string>(s, path, "kind"));
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(path + "kind: " + e.what());
    }
    sp.n_frames = required<int>(s, path, "n_frames");
    if (sp.n_frames < 1) throw ConfigError(path + "n_frames must be at least 1");
    sp.seed = field<std::uint64_t>(s, path, "seed", scenario::frame_seed(c.seed, 1000 + k));
    const scenario::WorldConfig base = sp.kind == scenario::Kind::single ? scenario::WorldConfig::single_agent()
                                                                          : scenario::WorldConfig::occlusion_heavy();
    try {
      sp.world = scenario::world_config_from_json(s.contains("world") ? s.at("world") : json::object(), base);
    } catch (const json::exception& e) {
      throw ConfigError(path + "world: " + e.what());
    } catch (const Error& e) {
      throw ConfigError(path + "world: " + e.what());
    }
    c.data[name] = sp;
  }
  if (c.data["pretrain"].kind != scenario::Kind::single)
    throw ConfigError("data.pretrain.kind must be single (pretraining uses the single-agent source set)");
  for (const char* n : {"finetune", "test"})
    if (c.data[n].kind != scenario::Kind::cooperative) throw ConfigError(std::string("data.") + n + ".kind must be cooperative");

  exp::TrainConfig pre;
  pre.augment = true;
  pre.lr = 2e-3;
  pre.seed = c.seed;
  c.pretrain = train_section(j.value("pretrain", json::object()), "pretrain.", pre, false);
  exp::TrainConfig ft;
  ft.epochs = 20;
  ft.lr = 1e-3;
  ft.seed = c.seed;
  const json fj = j.value("finetune", json::object());
  c.finetune = train_section(fj, "finetune.", ft, true);
  try {
    c.variant.variant = peft::parse_variant(field<std::string>(fj, "finetune.", "variant", "macp"));
    c.variant.fusion = parse_fusion(field<std::string>(fj, "finetune.", "fusion", "weighted_sum"));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("finetune: ") + e.what());
  }
  c.variant.compression_factor = field(fj, "finetune.", "compression_factor", c.variant.compression_factor);
  c.variant.bottleneck = field(fj, "finetune.", "bottleneck", c.variant.bottleneck);
  c.variant.seed = c.seed;
  check_factor(c.variant.compression_factor);
  if (c.variant.bottleneck < 1 || c.variant.bottleneck >= ArchConfig{}.width)
    throw ConfigError("finetune.bottleneck must lie in [1, width)");

  const json ej = j.value("eval", json::object());
  only_keys(ej, "eval.", {"modes", "max_agents"});
  if (ej.contains("modes")) {
    c.modes.clear();
    for (const auto& m : ej.at("modes")) {
      try {
        c.modes.push_back(exp::parse_mode(m.get<std::string>()));
      } catch (const std::exception& e) {
        throw ConfigError(std::string("eval.modes: ") + e.what());
      }
    }
  }
  c.eval_max_agents = field(ej, "eval.", "max_agents", c.eval_max_agents);
  if (c.eval_max_agents < 1 || c.eval_max_agents > 7) throw ConfigError("eval.max_agents must lie in [1, 7]");

  const json sj = j.value("sweep", json::object());
  only_keys(sj, "sweep.", {"factors", "cavs", "fusions", "mask_grid", "mask_span", "mask_half_extent"});
  c.factors = field(sj, "sweep.", "factors", c.factors);
  for (int f : c.factors) check_factor(f);
  c.cavs = field(sj, "sweep.", "cavs", c.cavs);
  for (int n : c.cavs)
    if (n < 1 || n > 7) throw ConfigError("sweep.cavs entries must lie in [1, 7]");
  if (sj.contains("fusions")) {
    c.fusions.clear();
    for (const auto& f : sj.at("fusions")) {
      try {
        c.fusions.push_back(parse_fusion(f.get<std::string>()));
      } catch (const std::exception& e) {
        throw ConfigError(std::string("sweep.fusions: ") + e.what());
      }
    }
  }
  c.mask_grid = field(sj, "sweep.", "mask_grid", c.mask_grid);
  c.mask_span = field(sj, "sweep.", "mask_span", c.mask_span);
  c.mask_half_extent = field(sj, "sweep.", "mask_half_extent", c.mask_half_extent);
  if (c.mask_grid < 1 || !(c.mask_half_extent > 0) || !(c.mask_span >= 0))
    throw ConfigError("sweep mask settings must have grid >= 1, half extent > 0, span >= 0");

  const json dj = j.value("diag", json::object());
  only_keys(dj, "diag.", {"bins"});
  c.diag_bins = field(dj, "diag.", "bins", c.diag_bins);
  if (c.diag_bins < 2) throw ConfigError("diag.bins must be at least 2");
  return c;
}

json resolved(const Config& c) {
  json j;
  j["seed"] = c.seed;
  j["out"] = c.out.string();
  for (const auto& [name, s] : c.data)
    j["data"][name] = {{"kind", scenario::kind_name(s.kind)},
                       {"n_frames", s.n_frames},
                       {"seed", s.seed},
                       {"world", scenario::to_json(s.world)}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"lr", c.pretrain.lr},
                   {"batch", c.pretrain.batch},
                   {"weight_decay", c.pretrain.adamw.weight_decay},
                   {"augment", c.pretrain.augment}};
  j["finetune"] = {{"epochs", c.finetune.epochs},
                   {"lr", c.finetune.lr},
                   {"batch", c.finetune.batch},
                   {"weight_decay", c.finetune.adamw.weight_decay},
                   {"max_agents", c.finetune.max_agents},
                   {"variant", peft::variant_name(c.variant.variant)},
                   {"compression_factor", c.variant.compression_factor},
                   {"fusion", fusion_name(c.variant.fusion)},
                   {"bottleneck", c.variant.bottleneck}};
  std::vector<std::string> modes, fusions;
  for (exp::Mode m : c.modes) modes.push_back(exp::mode_name(m));
  for (FusionMethod f : c.fusions) fusions.push_back(fusion_name(f));
  j["eval"] = {{"modes", modes}, {"max_agents", c.eval_max_agents}};
  j["sweep"] = {{"factors", c.factors},
                {"cavs", c.cavs},
                {"fusions", fusions},
                {"mask_grid", c.mask_grid},
                {"mask_span", c.mask_span},
                {"mask_half_extent", c.mask_half_extent}};
  j["diag"] = {{"bins", c.diag_bins}};
  return j;
}

// ---- artifacts ------------------------------------------------------------

void write_text(const fs::path& p, const std::string& s) {
  bytes::write_file(p.string(), std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

fs::path stage_dir(const Config& c, const std::string& stage) {
  const fs::path d = c.out / stage;
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec) throw bytes::IoError("cannot create " + d.string() + ": " + ec.message());
  write_text(d / "resolved_config.json", resolved(c).dump(2) + "\n");
  return d;
}

fs::path data_dir(const Config& c, const std::string& split) { return c.out / "data" / split; }

std::vector<exp::Frame> load_split(const Config& c, const std::string& split) {
  const fs::path d = data_dir(c, split);
  if (!fs::exists(d / "manifest.json"))
    throw MissingArtifact("dataset '" + split + "' not found at " + d.string() + " (run gen-data first)");
  return scenario::read_dataset(d).frames;
}

fs::path pretrained_path(const Config& c) { return c.out / "pretrain" / "model.ck"; }

Model load_pretrained(const Config& c) {
  const fs::path p = pretrained_path(c);
  if (!fs::exists(p)) throw MissingArtifact("pretrained checkpoint not found at " + p.string() + " (run pretrain first)");
  Model m;
  m.params = ad::load_checkpoint(p.string());
  return m;
}

std::string variant_tag(const peft::VariantConfig& v) {
  return std::string(peft::variant_name(v.variant)) + "_f" + std::to_string(v.compression_factor) + "_" +
         fusion_name(v.fusion);
}

fs::path finetuned_path(const Config& c, const peft::VariantConfig& v) {
  return c.out / "finetune" / variant_tag(v) / "model.ck";
}

Model load_finetuned(const Config& c, const peft::VariantConfig& v) {
  const fs::path p = finetuned_path(c, v);
  if (!fs::exists(p))
    throw MissingArtifact("fine-tuned checkpoint not found at " + p.string() + " (run finetune first)");
  Model m;
  m.arch = peft::variant_arch(v, ArchConfig{});
  m.params = ad::load_checkpoint(p.string());
  return m;
}

std::string loss_csv(const exp::TrainLog& log) {
  std::ostringstream o;
  o << std::setprecision(10) << "epoch,loss\n";
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) o << e + 1 << ',' << log.epoch_loss[e] << '\n';
  return o.str();
}

exp::TrainConfig with_progress(exp::TrainConfig t, const std::string& what) {
  t.on_epoch = [what](int e, double l) { std::fprintf(stderr, "%s epoch %d loss %.5f\n", what.c_str(), e, l); };
  return t;
}

void write_report(const fs::path& dir, const std::vector<eval::EvalReport>& reports) {
  json all = json::array();
  std::string csv = eval::EvalReport::csv_header();
  for (const auto& r : reports) {
    all.push_back(json::parse(r.to_json()));
    csv += r.csv_rows();
  }
  write_text(dir / "report.json", all.dump(2) + "\n");
  write_text(dir / "report.csv", csv);
}

// ---- commands -------------------------------------------------------------

void cmd_gen_data(const Config& c) {
  stage_dir(c, "data");
  for (const char* name : kSplits) {
    const Split& s = c.data.at(name);
    scenario::Dataset ds{s.kind, s.seed, s.world, scenario::make_dataset(s.kind, s.n_frames, s.seed, s.world)};
    scenario::write_dataset(data_dir(c, name), ds);
    std::fprintf(stderr, "wrote %d %s frames to %s\n", s.n_frames, scenario::kind_name(s.kind),
                 data_dir(c, name).string().c_str());
  }
}

void cmd_pretrain(const Config& c) {
  const auto frames = load_split(c, "pretrain");
  const fs::path d = stage_dir(c, "pretrain");
  Model m = Model::init(ArchConfig{}, c.seed);
  const exp::TrainLog log = exp::pretrain(m, frames, with_progress(c.pretrain, "pretrain"));
  write_text(d / "loss.csv", loss_csv(log));
  ad::save_checkpoint((d / "model.ck").string(), m.params);
}

Model run_finetune(const Config& c, const peft::VariantConfig& v, const std::vector<exp::Frame>& train,
                   const std::vector<exp::Frame>& test) {
  const Model base = load_pretrained(c);
  const fs::path d = stage_dir(c, "finetune/" + variant_tag(v));
  exp::TrainLog log;
  Model m = exp::finetune_variant(base, v, train, with_progress(c.finetune, variant_tag(v)), &log);
  write_text(d / "loss.csv", loss_csv(log));
  ad::save_checkpoint((d / "model.ck").string(), m.params);
  exp::EvalOptions o;
  o.max_agents = c.eval_max_agents;
  o.label = variant_tag(v);
  write_report(d, {exp::evaluate(test, nullptr, &m, o)});
  return m;
}

void cmd_finetune(const Config& c) {
  run_finetune(c, c.variant, load_split(c, "finetune"), load_split(c, "test"));
}

void cmd_eval(const Config& c) {
  const auto test = load_split(c, "test");
  std::optional<Model> single, coop;
  std::vector<eval::EvalReport> reports;
  for (exp::Mode mode : c.modes) {
    exp::EvalOptions o;
    o.mode = mode;
    o.max_agents = c.eval_max_agents;
    if (mode == exp::Mode::cooperative) {
      if (!coop) coop = load_finetuned(c, c.variant);
    } else if (!single) {
      single = load_pretrained(c);
    }
    reports.push_back(exp::evaluate(test, single ? &*single : nullptr, coop ? &*coop : nullptr, o));
  }
  write_report(stage_dir(c, "eval"), reports);
}

void cmd_sweep(const Config& c, const std::string& kind) {
  std::ostringstream csv;
  csv << std::setprecision(10);
  fs::path d;
  if (kind == "compression") {
    load_pretrained(c);
    const auto train = load_split(c, "finetune"), test = load_split(c, "test");
    d = stage_dir(c, "sweep");
    csv << "factor,latent_channels,payload_bytes,am_mb,ap50,ap70\n";
    for (int f : c.factors) {
      peft::VariantConfig v = c.variant;
      v.compression_factor = f;
      const Model m = run_finetune(c, v, train, test);
      exp::EvalOptions o;
      o.max_agents = c.eval_max_agents;
      const eval::EvalReport r = exp::evaluate(test, nullptr, &m, o);
      const ArchConfig& a = m.arch;
      csv << f << ',' << a.latent_channels() << ','
          << comms::message_bytes(a.voxel.rows, a.voxel.cols, a.latent_channels()) - comms::kHeaderBytes << ','
          << r.am_mb << ',' << r.ap(0.5) << ',' << r.ap(0.7) << '\n';
    }
  } else if (kind == "cavs") {
    const Model m = load_finetuned(c, c.variant);
    const auto test = load_split(c, "test");
    d = stage_dir(c, "sweep");
    csv << "max_agents,am_mb,ap50,ap70\n";
    for (int n : c.cavs) {
      exp::EvalOptions o;
      o.max_agents = n;
      const eval::EvalReport r = exp::evaluate(test, nullptr, &m, o);
      csv << n << ',' << r.am_mb << ',' << r.ap(0.5) << ',' << r.ap(0.7) << '\n';
    }
  } else if (kind == "fusion") {
    load_pretrained(c);
    const auto train = load_split(c, "finetune"), test = load_split(c, "test");
    d = stage_dir(c, "sweep");
    csv << "fusion,params_trainable,am_mb,ap50,ap70\n";
    for (FusionMethod f : c.fusions) {
      peft::VariantConfig v = c.variant;
      v.fusion = f;
      const Model m = run_finetune(c, v, train, test);
      exp::EvalOptions o;
      o.max_agents = c.eval_max_agents;
      const eval::EvalReport r = exp::evaluate(test, nullptr, &m, o);
      csv << fusion_name(f) << ',' << r.params_trainable << ',' << r.am_mb << ',' << r.ap(0.5) << ',' << r.ap(0.7)
          << '\n';
    }
  } else if (kind == "robustness") {
    const Model single = load_pretrained(c), coop = load_finetuned(c, c.variant);
    const auto test = load_split(c, "test");
    d = stage_dir(c, "sweep");
    const exp::Robustness r = exp::robustness_sweep(test, single, coop, exp::mask_grid(c.mask_grid, c.mask_span),
                                                    c.mask_half_extent, c.eval_max_agents);
    csv << "row,cx,cy,no_fusion_ap50,cooperative_ap50,no_fusion_std,cooperative_std\n";
    for (std::size_t i = 0; i < r.centers.size(); ++i)
      csv << "position," << r.centers[i].x << ',' << r.centers[i].y << ',' << r.single_ap[i] << ',' << r.coop_ap[i]
          << ",,\n";
    csv << "summary,,," << r.single_mean << ',' << r.coop_mean << ',' << r.single_std << ',' << r.coop_std << '\n';
  } else {
    throw ConfigError("unknown sweep kind '" + kind + "' (expected compression, cavs, fusion or robustness)");
  }
  write_text(d / (kind + ".csv"), csv.str());
  std::cout << csv.str();
}

void cmd_diag_shift(const Config& c) {
  const fs::path dir = data_dir(c, "test");
  if (!fs::exists(dir / "manifest.json")) throw MissingArtifact("dataset 'test' not found at " + dir.string());
  const scenario::Dataset ds = scenario::read_dataset(dir);
  if (ds.kind != scenario::Kind::cooperative) throw ConfigError("diag-shift needs a cooperative dataset");
  const std::string csv = scenario::histogram_csv(scenario::signed_range_histogram(ds.frames, c.diag_bins));
  write_text(stage_dir(c, "diag") / "signed_range.csv", csv);
  std::cout << csv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cooperative perception experiments with parameter-efficient adapters"};
  app.require_subcommand(1);
  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON experiment config")->required();
  app.add_option("--out", out, "Output root (overrides the config)");
  app.add_option("--seed", seed, "Master seed (overrides the config)");

  std::string variant, fusion, sweep_kind;
  std::optional<int> factor, epochs;
  auto* gen = app.add_subcommand("gen-data", "Generate the pretrain, finetune and test splits");
  auto* pre = app.add_subcommand("pretrain", "Train the single-agent detector on the source split");
  auto* ft = app.add_subcommand("finetune", "Fine-tune a cooperative variant and evaluate it");
  ft->add_option("--variant", variant, "full | head | adapter | ssf | conada | macp");
  ft->add_option("--factor", factor, "Channel compression factor");
  ft->add_option("--fusion", fusion, "weighted_sum | mean | sum | concat");
  ft->add_option("--epochs", epochs, "Fine-tuning epochs");
  auto* ev = app.add_subcommand("eval", "Evaluate the configured modes on the test split");
  ev->add_option("--variant", variant, "Cooperative variant to load");
  ev->add_option("--factor", factor, "Compression factor of the variant to load");
  ev->add_option("--fusion", fusion, "Fusion method of the variant to load");
  auto* sw = app.add_subcommand("sweep", "Run a compression, cavs, fusion or robustness sweep");
  sw->add_option("--kind", sweep_kind, "compression | cavs | fusion | robustness")->required();
  auto* diag = app.add_subcommand("diag-shift", "Signed-range histograms of ego vs surrounding points");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    json j;
    try {
      const auto raw = bytes::read_file(config_path);
      j = json::parse(std::string(raw.begin(), raw.end()));
    } catch (const json::exception& e) {
      throw ConfigError("cannot parse " + config_path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    if (seed) j["seed"] = *seed;
    if (!out.empty()) j["out"] = out;
    json& fj = j["finetune"];
    if (fj.is_null()) fj = json::object();
    if (!variant.empty()) fj["variant"] = variant;
    if (!fusion.empty()) fj["fusion"] = fusion;
    if (factor) fj["compression_factor"] = *factor;
    if (epochs) fj["epochs"] = *epochs;
    const Config c = parse_config(j);

    if (*gen) cmd_gen_data(c);
    else if (*pre) cmd_pretrain(c);
    else if (*ft) cmd_finetune(c);
    else if (*ev) cmd_eval(c);
    else if (*sw) cmd_sweep(c, sweep_kind);
    else if (*diag) cmd_diag_shift(c);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const bytes::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const exp::Divergence& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return kMissing;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
