#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "linlab/config.hpp"

using namespace linlab;
namespace fs = std::filesystem;

namespace {

const char* kFull = R"(
seed = 41

[model]
input_dim = 3
widths = 8, 4
classes = 2
activation = softplus

[data]
kind = synth
d = 3
classes = 2
train_per_class = 12
eval_per_class = 5
margin = 0.4
spread = 0.05

[attack]
kind = nfgsm
eps = 0.1
noise_factor = 1.5

[regularizer]
kind = elle_a
lambda = 1250
gamma = 0.97
shared_alpha = true
clamp_samples = false

[schedule]
kind = long_cos
lr0 = 0.05
epochs = 7
batch = 16
momentum = 0.8
weight_decay = 0.001

[eval]
kind = pgd
eps = 0.12
steps = 20
restarts = 3
probe_cadence = 2
probe_samples = 128
probe_slice = 64
checkpoint_every = 3
co_window = 4
co_k_spike = 8
co_rho = 0.4
)";

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("empty text yields the documented defaults") {
    const ParsedConfig c = parse_config_text("");
    CHECK(c.run.seed == 0);
    CHECK(c.run.model.input_dim == 2);
    CHECK(c.run.model.widths == std::vector<std::size_t>{16});
    CHECK(c.run.attack.kind == AttackKind::fgsm);
    CHECK(c.run.attack.eps == doctest::Approx(8.0 / 255.0));
    CHECK(c.run.eval_attack.kind == AttackKind::pgd);
    CHECK(c.run.eval_attack.steps == 10);
    CHECK(c.run.eval_attack.eps == c.run.attack.eps);  // inherited
    CHECK(c.run.reg.kind == RegKind::none);
    CHECK(c.run.reg.gamma == 0.99);
    CHECK(c.run.momentum == 0.9);
    CHECK(c.run.weight_decay == 5e-4);
    CHECK(c.run.epochs == 10);
    CHECK(c.run.schedule.epochs == 10);  // horizon mirrors epochs
    CHECK(c.run.probe_cadence == 1);
    CHECK(c.data.kind == "synth");
    CHECK(c.run.dataset.find("synth(") == 0);
  }

  TEST_CASE("full config lands in every field") {
    const ParsedConfig c = parse_config_text(kFull);
    CHECK(c.run.seed == 41);
    CHECK(c.run.model.init_seed == 41);  // model seeded from the run seed
    CHECK(c.run.model.input_dim == 3);
    CHECK(c.run.model.widths == std::vector<std::size_t>{8, 4});
    CHECK(c.run.model.activation == Activation::softplus);
    CHECK(c.data.train_per_class == 12);
    CHECK(c.data.margin == 0.4);
    CHECK(c.run.attack.kind == AttackKind::nfgsm);
    CHECK(c.run.attack.noise_factor == 1.5);
    CHECK(c.run.reg.kind == RegKind::elle_a);
    CHECK(c.run.reg.lambda == 1250.0);
    CHECK(c.run.reg.gamma == 0.97);
    CHECK(c.run.reg.shared_alpha);
    CHECK_FALSE(c.run.reg.clamp_samples);
    CHECK(c.run.schedule.kind == ScheduleKind::long_cosine);
    CHECK(c.run.epochs == 7);
    CHECK(c.run.schedule.epochs == 7);
    CHECK(c.run.batch == 16);
    CHECK(c.run.momentum == 0.8);
    CHECK(c.run.eval_attack.kind == AttackKind::pgd);
    CHECK(c.run.eval_attack.eps == 0.12);  // explicit, not inherited
    CHECK(c.run.eval_attack.steps == 20);
    CHECK(c.run.eval_attack.restarts == 3);
    CHECK(c.run.probe_cadence == 2);
    CHECK(c.run.checkpoint_every == 3);
    CHECK(c.run.co.window == 4);
    CHECK(c.run.co.k_spike == 8.0);
    CHECK(c.run.co.rho == 0.4);
  }

  TEST_CASE("comments, blank lines and spacing are tolerated") {
    const ParsedConfig c = parse_config_text(
        "# leading comment\n"
        "seed=9   ; trailing\n"
        "\n"
        "[attack]  # section comment\n"
        "  eps  =  0.25  \n");
    CHECK(c.run.seed == 9);
    CHECK(c.run.attack.eps == 0.25);
    CHECK(c.run.eval_attack.eps == 0.25);
  }

  TEST_CASE("errors name the offending section.key") {
    CHECK_THROWS_WITH_AS(parse_config_text("[model]\nfoo = 1\n"),
                         doctest::Contains("model.foo"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("seed = 1\nseed = 2\n"),
                         doctest::Contains("duplicate key seed"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("[schedule]\nlr0 = fast\n"),
                         doctest::Contains("schedule.lr0"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("[schedule]\nepochs = 2.5\n"),
                         doctest::Contains("non-negative integer"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("seed = -3\n"),
                         doctest::Contains("unsigned integer"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("[regularizer]\nshared_alpha = yes\n"),
                         doctest::Contains("true/false"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("[attack]\nkind = cw\n"),
                         doctest::Contains("unknown attack kind"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("[nosuch]\nx = 1\n"),
                         doctest::Contains("unknown section"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("just words\n"),
                         doctest::Contains("key = value"), std::runtime_error);
    // Structural validation still applies after parsing.
    CHECK_THROWS_WITH_AS(parse_config_text("[data]\nd = 5\n"),
                         doctest::Contains("data.d"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("[data]\nkind = idx\n"),
                         doctest::Contains("data.images"), std::runtime_error);
  }

  TEST_CASE("serialize round-trips and is a fixpoint") {
    const ParsedConfig a = parse_config_text(kFull);
    const std::string s1 = serialize(a);
    const ParsedConfig b = parse_config_text(s1);
    CHECK(serialize(b) == s1);
    CHECK(config_hash(a) == config_hash(b));
    CHECK(run_id(a) == run_id(b));

    // Defaults too, including the non-terminating 8/255.
    const ParsedConfig d0 = parse_config_text("");
    CHECK(serialize(parse_config_text(serialize(d0))) == serialize(d0));
  }

  TEST_CASE("run ids are 16 hex digits and field-sensitive") {
    const ParsedConfig base = parse_config_text(kFull);
    const std::string id = run_id(base);
    CHECK(id.size() == 16);
    for (char ch : id)
      CHECK(((ch >= '0' && ch <= '9') || (ch >= 'a' && ch <= 'f')));

    auto tweak = [&](const char* find, const char* repl) {
      std::string t(kFull);
      const auto p = t.find(find);
      REQUIRE(p != std::string::npos);
      t.replace(p, std::string(find).size(), repl);
      return run_id(parse_config_text(t));
    };
    CHECK(tweak("seed = 41", "seed = 42") != id);
    CHECK(tweak("eps = 0.1\n", "eps = 0.11\n") != id);
    CHECK(tweak("lambda = 1250", "lambda = 1251") != id);
    CHECK(tweak("widths = 8, 4", "widths = 8, 5") != id);
    CHECK(run_id(parse_config_text(kFull)) == id);  // stable across calls
  }

  TEST_CASE("synth datasets split one generation across train and eval") {
    DataConfig d;
    d.kind = "synth";
    d.d = 5;
    d.classes = 3;
    d.train_per_class = 4;
    d.eval_per_class = 2;
    d.margin = 0.3;
    d.spread = 0.0;  // collapse onto the class means
    const auto [train, eval] = build_datasets(d, 77);
    CHECK(train.size() == 12);
    CHECK(eval.size() == 6);
    CHECK(train.classes == 3);
    // spread 0: every row of a class is its mean, shared across the split.
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t j = 0; j < 5; ++j)
        CHECK(train.inputs.at(c * 4, j) == eval.inputs.at(c * 2, j));
    CHECK(train.labels[0] == 0);
    CHECK(train.labels[11] == 2);
    CHECK(train.name.find("_train") != std::string::npos);
    CHECK(eval.provenance.find("eval split") != std::string::npos);
  }

  TEST_CASE("idx datasets load and subset per the config") {
    const fs::path dir =
        fs::temp_directory_path() /
        ("linlab-config-test-" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const Dataset ds = synth_blobs(4, 2, 20, 0.3, 0.1, 3);
    save_idx(ds, (dir / "ti").string(), (dir / "tl").string(), 2, 2);
    save_idx(ds, (dir / "ei").string(), (dir / "el").string(), 2, 2);

    DataConfig d;
    d.kind = "idx";
    d.images = (dir / "ti").string();
    d.labels = (dir / "tl").string();
    d.eval_images = (dir / "ei").string();
    d.eval_labels = (dir / "el").string();
    d.train_n = 15;
    const auto [train, eval] = build_datasets(d, 5);
    CHECK(train.size() == 15);   // shuffled prefix
    CHECK(eval.size() == 40);    // eval_n 0 keeps everything
    CHECK(train.dim() == 4);

    const auto [t2, e2] = build_datasets(d, 5);
    CHECK(train.inputs.data == t2.inputs.data);  // same seed, same subset
    std::error_code ec;
    fs::remove_all(dir, ec);
  }

  TEST_CASE("parse_config reads files and reports missing ones") {
    const fs::path p = fs::temp_directory_path() /
                       ("linlab-cfg-" + std::to_string(::getpid()) + ".cfg");
    {
      std::ofstream out(p);
      out << "seed = 123\n";
    }
    CHECK(parse_config(p.string()).run.seed == 123);
    fs::remove(p);
    CHECK_THROWS_WITH_AS(parse_config(p.string()),
                         doctest::Contains("cannot open"), std::runtime_error);
  }
}
