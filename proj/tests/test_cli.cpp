#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "linlab/cli.hpp"
#include "linlab/metrics.hpp"

using namespace linlab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliSandbox {
  fs::path dir;
  std::string cfg_path;

  CliSandbox() {
    dir = fs::temp_directory_path() /
          ("linlab-cli-test-" + std::to_string(::getpid()));
    fs::create_directories(dir);
    cfg_path = (dir / "run.cfg").string();
    std::ofstream out(cfg_path);
    out << "seed = 4\n"
           "[model]\n"
           "input_dim = 2\n"
           "widths = 8\n"
           "classes = 2\n"
           "[data]\n"
           "kind = synth\n"
           "d = 2\n"
           "classes = 2\n"
           "train_per_class = 30\n"
           "eval_per_class = 10\n"
           "margin = 0.5\n"
           "spread = 0.08\n"
           "[attack]\n"
           "kind = fgsm\n"
           "eps = 0.05\n"
           "[schedule]\n"
           "kind = short\n"
           "lr0 = 0.1\n"
           "epochs = 2\n"
           "batch = 32\n"
           "[eval]\n"
           "kind = pgd\n"
           "steps = 3\n"
           "restarts = 1\n"
           "probe_samples = 32\n"
           "probe_slice = 16\n";
  }
  ~CliSandbox() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }

  std::string out_dir(const char* name) const { return (dir / name).string(); }

  int run(std::vector<std::string> args) const {
    std::vector<const char*> argv = {"linlab"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<json> parse_jsonl(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<json> out;
  std::string l;
  while (std::getline(in, l)) out.push_back(json::parse(l));
  return out;
}

fs::path single_subdir(const std::string& out_dir) {
  fs::path found;
  std::size_t count = 0;
  for (const auto& e : fs::directory_iterator(out_dir))
    if (e.is_directory()) {
      found = e.path();
      ++count;
    }
  REQUIRE(count == 1);
  return found;
}

ParsedConfig tiny_cfg(const CliSandbox& sb) { return parse_config(sb.cfg_path); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("train writes the run directory and its logs") {
    CliSandbox sb;
    REQUIRE(sb.run({"train", "--config", sb.cfg_path, "--out",
                    sb.out_dir("runs")}) == 0);
    const fs::path rd = single_subdir(sb.out_dir("runs"));
    CHECK(rd.filename().string() == run_id(tiny_cfg(sb)));
    CHECK(fs::exists(rd / "metrics.jsonl"));
    CHECK(fs::exists(rd / "timing.jsonl"));
    CHECK(fs::exists(rd / "epochs.csv"));
    CHECK(fs::exists(rd / "model.ckpt"));

    const auto lines = parse_jsonl((rd / "metrics.jsonl").string());
    REQUIRE(lines.size() >= 3);
    CHECK(lines[0].at("kind") == "header");
    std::size_t steps = 0, epochs = 0;
    for (const auto& j : lines) {
      if (j.at("kind") == "step") ++steps;
      if (j.at("kind") == "epoch") ++epochs;
    }
    CHECK(steps == 2 * 2);  // 60 train rows, batch 32 -> 2 steps x 2 epochs
    CHECK(epochs == 2);
  }

  TEST_CASE("rerunning one config reproduces metrics byte for byte") {
    CliSandbox sb;
    REQUIRE(sb.run({"train", "--config", sb.cfg_path, "--out",
                    sb.out_dir("r1")}) == 0);
    REQUIRE(sb.run({"train", "--config", sb.cfg_path, "--out",
                    sb.out_dir("r2")}) == 0);
    const fs::path a = single_subdir(sb.out_dir("r1"));
    const fs::path b = single_subdir(sb.out_dir("r2"));
    CHECK(slurp((a / "metrics.jsonl").string()) ==
          slurp((b / "metrics.jsonl").string()));
    CHECK(slurp((a / "epochs.csv").string()) ==
          slurp((b / "epochs.csv").string()));
    // Timing differs run to run; only its shape is stable.
    CHECK(parse_jsonl((a / "timing.jsonl").string()).size() ==
          parse_jsonl((b / "timing.jsonl").string()).size());
  }

  TEST_CASE("the seed flag overrides the config and renames the run") {
    CliSandbox sb;
    REQUIRE(sb.run({"train", "--config", sb.cfg_path, "--out",
                    sb.out_dir("runs"), "--seed", "9"}) == 0);
    const fs::path rd = single_subdir(sb.out_dir("runs"));
    CHECK(rd.filename().string() != run_id(tiny_cfg(sb)));
    const auto lines = parse_jsonl((rd / "metrics.jsonl").string());
    const std::string echoed = lines[0].at("config").get<std::string>();
    const ParsedConfig c = parse_config_text(echoed);
    CHECK(c.run.seed == 9);
    CHECK(c.run.model.init_seed == 9);
  }

  TEST_CASE("eval and probe run against a saved checkpoint") {
    CliSandbox sb;
    REQUIRE(sb.run({"train", "--config", sb.cfg_path, "--out",
                    sb.out_dir("runs")}) == 0);
    const std::string ckpt =
        (single_subdir(sb.out_dir("runs")) / "model.ckpt").string();

    REQUIRE(sb.run({"eval", "--config", sb.cfg_path, "--checkpoint", ckpt,
                    "--out", sb.out_dir("ev")}) == 0);
    const auto ev =
        parse_jsonl((single_subdir(sb.out_dir("ev")) / "eval.jsonl").string());
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].at("clean_acc").get<double>() >= 0.0);
    CHECK(ev[0].at("robust_acc").get<double>() <=
          ev[0].at("clean_acc").get<double>() + 1e-12);

    REQUIRE(sb.run({"probe", "--config", sb.cfg_path, "--checkpoint", ckpt,
                    "--out", sb.out_dir("pr"), "--samples", "64"}) == 0);
    const auto pr = parse_jsonl(
        (single_subdir(sb.out_dir("pr")) / "probe.jsonl").string());
    REQUIRE(pr.size() == 3);
    CHECK(pr[0].at("metric") == "elin_mc");
    CHECK(pr[1].at("metric") == "grad_misalignment");
    CHECK(pr[2].at("metric") == "fd_gradalign");
    for (const auto& j : pr) CHECK(j.at("value").get<double>() >= 0.0);

    // Both need the checkpoint flag.
    CHECK(sb.run({"eval", "--config", sb.cfg_path}) != 0);
    CHECK(sb.run({"probe", "--config", sb.cfg_path}) != 0);
  }

  TEST_CASE("grid sweeps lambda by seed into a summary csv") {
    CliSandbox sb;
    REQUIRE(sb.run({"grid", "--config", sb.cfg_path, "--out", sb.out_dir("g"),
                    "--lambdas", "0,5", "--seeds", "4,6"}) == 0);
    const std::string csv = slurp(sb.out_dir("g") + "/grid_summary.csv");
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line ==
          "lambda,seed,run_id,final_clean,final_robust,max_elin_probe,"
          "co_flagged,diverged");
    std::size_t rows = 0;
    while (std::getline(in, line))
      if (!line.empty()) ++rows;
    CHECK(rows == 4);  // 2 lambdas x 2 seeds
    // Each cell trained into its own run directory.
    std::size_t run_dirs = 0;
    for (const auto& e : fs::directory_iterator(sb.out_dir("g")))
      if (e.is_directory()) ++run_dirs;
    CHECK(run_dirs == 4);
  }

  TEST_CASE("co-demo trains the pair and records a verdict") {
    CliSandbox sb;
    // The base config has no regularizer: co-demo must refuse.
    CHECK(sb.run({"co-demo", "--config", sb.cfg_path, "--out",
                  sb.out_dir("c0")}) != 0);

    std::string reg_cfg = (sb.dir / "reg.cfg").string();
    {
      std::ofstream out(reg_cfg);
      out << slurp(sb.cfg_path) << "[regularizer]\nkind = elle\n"
          << "lambda = 100\n";
    }
    REQUIRE(sb.run({"co-demo", "--config", reg_cfg, "--out",
                    sb.out_dir("cd")}) == 0);
    const auto rows = parse_jsonl(sb.out_dir("cd") + "/co_demo.jsonl");
    REQUIRE(rows.size() == 1);
    const json& v = rows[0];
    CHECK(v.contains("fgsm_flagged"));
    CHECK(v.contains("reg_flagged"));
    CHECK(v.at("fgsm_run") != v.at("reg_run"));
    CHECK(v.at("fgsm_final_robust").get<double>() >= 0.0);
    CHECK(v.at("reg_max_elin").get<double>() >= 0.0);
  }

  TEST_CASE("timing emits one row per method") {
    CliSandbox sb;
    REQUIRE(sb.run({"timing", "--config", sb.cfg_path, "--out",
                    sb.out_dir("t"), "--steps", "3"}) == 0);
    const std::string csv = slurp(sb.out_dir("t") + "/timing_summary.csv");
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "method,forward_ms,backward_ms,wall_ms");
    std::vector<std::string> methods;
    while (std::getline(in, line))
      if (!line.empty()) methods.push_back(line.substr(0, line.find(',')));
    CHECK(methods == std::vector<std::string>{"fgsm", "elle", "elle_a",
                                              "gradalign", "llr_sq", "cure"});
  }

  TEST_CASE("bad invocations exit nonzero") {
    CliSandbox sb;
    CHECK(sb.run({"frobnicate"}) != 0);
    CHECK(sb.run({"train", "--config", "/no/such/file.cfg"}) != 0);
    CHECK(sb.run({"train"}) != 0);  // no config at the default path
    CHECK(sb.run({"grid", "--config", sb.cfg_path, "--out", sb.out_dir("x")}) !=
          0);  // --lambdas is required
  }

  TEST_CASE("grid validation rejects empty axes") {
    CliSandbox sb;
    GridSpec g;
    g.base = tiny_cfg(sb);
    CHECK_THROWS(validate_grid(g));  // no lambdas
    g.lambdas = {1.0};
    CHECK_THROWS(validate_grid(g));  // no seeds
    g.seeds = {1};
    CHECK_NOTHROW(validate_grid(g));
    g.lambdas = {-2.0};
    CHECK_THROWS(validate_grid(g));
  }

  TEST_CASE("run_co_pair shares everything but the regularizer") {
    CliSandbox sb;
    ParsedConfig cfg = tiny_cfg(sb);
    cfg.run.reg.kind = RegKind::elle;
    cfg.run.reg.lambda = 50.0;
    std::size_t fgsm_steps = 0, reg_steps = 0;
    TrainHooks fh, rh;
    fh.on_step = [&](const StepRecord&) { ++fgsm_steps; };
    rh.on_step = [&](const StepRecord& r) {
      ++reg_steps;
      CHECK(r.lambda == 50.0);
    };
    const CoDemoResult r = run_co_pair(cfg, fh, rh);
    CHECK(fgsm_steps == reg_steps);
    CHECK_FALSE(r.fgsm.diverged);
    CHECK_FALSE(r.reg.diverged);
    for (const auto& s : r.fgsm.steps) CHECK(s.lambda == 0.0);
    // Same seed and data: the first-step attack draws coincide, so the clean
    // part of the first objective is shared and the lambda term adds on top.
    CHECK(r.reg.steps[0].loss > r.fgsm.steps[0].loss);
  }

  TEST_CASE("run_timing_suite reports finite medians for every method") {
    CliSandbox sb;
    const auto rows = run_timing_suite(tiny_cfg(sb), 3);
    REQUIRE(rows.size() == 6);
    for (const auto& r : rows) {
      CHECK(r.forward_ms >= 0.0);
      CHECK(r.backward_ms >= 0.0);
      CHECK(r.wall_ms >= r.backward_ms);
    }
    CHECK(rows[0].method == "fgsm");
    CHECK(rows[3].method == "gradalign");
  }
}
