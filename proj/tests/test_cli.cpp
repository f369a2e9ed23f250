#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "macp/autodiff.hpp"
#include "macp/bytes.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "macp_cli_test";

json tiny_config(const std::string& out) {
  return {{"seed", 7},
          {"out", (kRoot / out).string()},
          {"data",
           {{"pretrain", {{"kind", "single"}, {"n_frames", 3}}},
            {"finetune", {{"kind", "cooperative"}, {"n_frames", 2}}},
            {"test", {{"kind", "cooperative"}, {"n_frames", 2}}}}},
          {"pretrain", {{"epochs", 1}}},
          {"finetune", {{"epochs", 1}}},
          {"sweep", {{"factors", {4, 8, 16}}, {"cavs", {1, 2}}, {"fusions", {"weighted_sum"}}, {"mask_grid", 1}}}};
}

fs::path write_config(const json& j, const std::string& name) {
  fs::create_directories(kRoot);
  const fs::path p = kRoot / (name + ".json");
  std::ofstream(p) << j.dump(2);
  return p;
}

struct Run {
  int code;
  std::string err, out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Run run(const fs::path& cfg, const std::string& args) {
  const fs::path err = kRoot / "stderr.txt", out = kRoot / "stdout.txt";
  const std::string cmd = std::string(MACP_CLI) + " --config " + cfg.string() + " " + args + " >" + out.string() +
                          " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err), slurp(out)};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("config errors exit 2 and name the problem") {
  json j = tiny_config("bad");
  j["data"]["test"].erase("n_frames");
  Run r = run(write_config(j, "missing"), "gen-data");
  CHECK(r.code == 2);
  CHECK(r.err.find("data.test.n_frames") != std::string::npos);

  j = tiny_config("bad");
  j["pretrain"]["epochs"] = "three";
  CHECK(run(write_config(j, "type"), "gen-data").code == 2);
  j = tiny_config("bad");
  j["bogus"] = 1;
  r = run(write_config(j, "unknown"), "gen-data");
  CHECK(r.code == 2);
  CHECK(r.err.find("bogus") != std::string::npos);

  const fs::path ok = write_config(tiny_config("bad"), "ok");
  CHECK(run(ok, "finetune --variant bogus").code == 2);
  CHECK(run(ok, "finetune --factor 3").code == 2);
  CHECK(run(ok, "sweep --kind nothing").code == 2);
  CHECK(run(ok, "").code == 2);  // no subcommand
  std::ofstream(kRoot / "garbage.json") << "{ not json";
  CHECK(run(kRoot / "garbage.json", "gen-data").code == 2);
}

TEST_CASE("missing artifacts and I/O failures") {
  fs::remove_all(kRoot / "empty");
  const fs::path cfg = write_config(tiny_config("empty"), "empty");
  CHECK(run(cfg, "pretrain").code == 5);
  CHECK(run(cfg, "eval").code == 5);
  CHECK(run(cfg, "sweep --kind cavs").code == 5);
  CHECK(run(cfg, "diag-shift").code == 5);
  CHECK(run(cfg, "--out /proc/macp_nowhere gen-data").code == 3);
  CHECK(run(kRoot / "no_such_config.json", "gen-data").code == 3);
}

TEST_CASE("end-to-end pipeline") {
  fs::remove_all(kRoot / "a");
  fs::remove_all(kRoot / "b");
  const fs::path a = write_config(tiny_config("a"), "a"), b = write_config(tiny_config("b"), "b");

  REQUIRE(run(a, "gen-data").code == 0);
  REQUIRE(run(b, "gen-data").code == 0);
  for (const char* f : {"data/pretrain/manifest.json", "data/test/frame_00001_agent_0.pc", "data/finetune/frame_00000_gt.jsonl"}) {
    const std::string x = slurp(kRoot / "a" / f);
    CHECK(!x.empty());
    CHECK(x == slurp(kRoot / "b" / f));
  }
  CHECK(fs::exists(kRoot / "a/data/resolved_config.json"));

  REQUIRE(run(a, "pretrain").code == 0);
  REQUIRE(run(b, "pretrain").code == 0);
  CHECK(slurp(kRoot / "a/pretrain/model.ck") == slurp(kRoot / "b/pretrain/model.ck"));
  CHECK(count_lines(slurp(kRoot / "a/pretrain/loss.csv")) == 2);

  REQUIRE(run(a, "finetune").code == 0);
  const fs::path ft = kRoot / "a/finetune/macp_f4_weighted_sum";
  const auto pre = macp::ad::load_checkpoint((kRoot / "a/pretrain/model.ck").string());
  const auto tuned = macp::ad::load_checkpoint((ft / "model.ck").string());
  std::size_t frozen = 0;
  for (std::size_t i = 0; i < tuned.size(); ++i) {
    if (!tuned[i].frozen) continue;
    ++frozen;
    const macp::ad::Param* p = pre.find(tuned[i].name);
    REQUIRE(p != nullptr);
    CHECK(p->value.data == tuned[i].value.data);
  }
  CHECK(frozen > 0);
  const json macp_report = json::parse(slurp(ft / "report.json"));
  REQUIRE(run(a, "finetune --variant head").code == 0);
  const json head_report = json::parse(slurp(kRoot / "a/finetune/head_f4_weighted_sum/report.json"));
  CHECK(head_report[0]["params_trainable"].get<long>() < macp_report[0]["params_trainable"].get<long>());

  REQUIRE(run(a, "eval").code == 0);
  const std::string csv = slurp(kRoot / "a/eval/report.csv");
  CHECK(csv.rfind("mode,iou,bucket,ap,am_mb,params_total,params_trainable\n", 0) == 0);
  CHECK(count_lines(csv) == 1 + 4 * 8);

  Run s = run(a, "sweep --kind compression");
  REQUIRE(s.code == 0);
  std::istringstream rows(s.out);
  std::string line;
  std::getline(rows, line);
  CHECK(line == "factor,latent_channels,payload_bytes,am_mb,ap50,ap70");
  std::vector<long> payload;
  while (std::getline(rows, line)) payload.push_back(std::stol(line.substr(line.find(',', line.find(',') + 1) + 1)));
  REQUIRE(payload.size() == 3);
  CHECK(payload[0] == 2 * payload[1]);
  CHECK(payload[1] == 2 * payload[2]);

  s = run(a, "sweep --kind cavs");
  REQUIRE(s.code == 0);
  CHECK(count_lines(s.out) == 3);
  s = run(a, "sweep --kind robustness");
  REQUIRE(s.code == 0);
  CHECK(s.out.find("no_fusion_std,cooperative_std") != std::string::npos);
  CHECK(count_lines(s.out) == 3);

  s = run(a, "diag-shift");
  REQUIRE(s.code == 0);
  CHECK(s.out == slurp(kRoot / "a/diag/signed_range.csv"));
  CHECK(count_lines(s.out) == 1 + 2 * 64);
}

TEST_CASE("divergence exits 4") {
  json j = tiny_config("div");
  j["pretrain"]["lr"] = 1e300;
  j["pretrain"]["epochs"] = 2;
  const fs::path cfg = write_config(j, "div");
  REQUIRE(run(cfg, "gen-data").code == 0);
  CHECK(run(cfg, "pretrain").code == 4);
}

TEST_CASE("diag-shift rejects single-agent data") {
  fs::remove_all(kRoot / "single");
  const fs::path cfg = write_config(tiny_config("single"), "single");
  REQUIRE(run(cfg, "gen-data").code == 0);
  fs::remove_all(kRoot / "single/data/test");
  fs::copy(kRoot / "single/data/pretrain", kRoot / "single/data/test");
  CHECK(run(cfg, "diag-shift").code == 2);
}
