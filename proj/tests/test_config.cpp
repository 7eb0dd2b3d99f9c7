#include "doctest.h"
#include "transsleep/config.hpp"
#include "transsleep/selftest.hpp"

using namespace transsleep;

TEST_CASE("defaults follow the published setup") {
  const config::RunConfig c;
  CHECK(c.train.adam.lr == 1e-3);
  CHECK(c.train.adam.beta1 == 0.9);
  CHECK(c.train.adam.beta2 == 0.999);
  CHECK(c.train.adam.weight_decay == 1e-3);
  CHECK(c.train.batch_size == 32);
  CHECK(c.train.max_epochs == 150);
  CHECK(c.train.lambda_c == 2.0);
  CHECK(c.train.lambda_s == 2.0);
  CHECK(c.train.lambda_t == 0.2);
  CHECK(c.model.ce.sequence_length == 25);
  CHECK(c.model.ce.hidden == 128);
  CHECK(c.model.ce.dropout == 0.5);
  CHECK(c.model.amf.heads == 4);
  CHECK(c.model.amf.features() == 224);
  CHECK(c.folds == 20);
  CHECK(c.pipeline.filter.low_hz == 0.5);
  CHECK(c.pipeline.filter.high_hz == 49.0);
  CHECK(c.pipeline.channel == "EEG Fpz-Cz");
  CHECK_NOTHROW(config::validate(c));
  CHECK(config::ablation_name(c.train.ablation) == "full");
}

TEST_CASE("parsing") {
  const auto c = config::parse(R"(# run
[train]
lr = 5e-4   # smaller
max_epochs = 20
patience = 4
ablation = "case2"
overlapping = true

[model]
widths = [8, 16, 32]

[data]
cache_dir = "/tmp/cache # not a comment"
)");
  CHECK(c.train.adam.lr == 5e-4);
  CHECK(c.train.max_epochs == 20);
  CHECK(c.train.ablation.aux_stage == false);
  CHECK(c.train.overlapping);
  CHECK(c.model.amf.widths == std::array<std::size_t, 3>{8, 16, 32});
  CHECK(c.cache_dir == "/tmp/cache # not a comment");
  CHECK(c.train.batch_size == 32);

  SUBCASE("resolved form round-trips") {
    const std::string text = config::to_toml(c);
    CHECK(config::to_toml(config::parse(text)) == text);
    for (const auto& key : config::keys()) CHECK(text.find(key.substr(key.find('.') + 1) + " = ") != std::string::npos);
  }
  SUBCASE("data.fs drives filter and model") {
    auto d = config::parse("[data]\nfs = 100\n");
    CHECK(d.model.amf.fs == 100.0);
    CHECK(d.pipeline.filter.fs == 100.0);
  }
}

TEST_CASE("strict parsing errors") {
  CHECK_THROWS_WITH_AS(config::parse("[train]\nlrr = 1\n"), doctest::Contains("train.lrr"), ConfigError);
  CHECK_THROWS_WITH_AS(config::parse("[bogus]\n"), doctest::Contains("bogus"), ConfigError);
  CHECK_THROWS_WITH_AS(config::parse("lr = 1\n"), doctest::Contains("before any"), ConfigError);
  CHECK_THROWS_WITH_AS(config::parse("[train]\nlr = 1\nlr = 2\n"), doctest::Contains("<config>:3"), ConfigError);
  CHECK_THROWS_WITH_AS(config::parse("[train]\nbatch_size = -3\n"), doctest::Contains("non-negative integer"),
                       ConfigError);
  CHECK_THROWS_AS(config::parse("[train]\nlr = fast\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("[train]\nlr = inf\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("[train]\noverlapping = yes\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("[model]\nwidths = [1, 2]\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("[data]\nchannel = EEG\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("[train]\nablation = \"case4\"\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("[train\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("[train]\n[train]\n"), ConfigError);
  CHECK_THROWS_AS(config::load("/nonexistent/run.toml"), ConfigError);
}

TEST_CASE("validation and required keys") {
  config::RunConfig c;
  CHECK_THROWS_WITH_AS(config::require(c, {"data.cache_dir"}), doctest::Contains("data.cache_dir"), ConfigError);
  c.cache_dir = "x";
  CHECK_NOTHROW(config::require(c, {"data.cache_dir"}));
  c.train.patience = 150;
  CHECK_THROWS_AS(config::validate(c), ConfigError);
  c = {};
  c.model.amf.widths = {16, 30, 64};
  CHECK_THROWS_AS(config::validate(c), ConfigError);
  c = {};
  c.pipeline.epoch_seconds = 20;
  CHECK_THROWS_AS(config::validate(c), ConfigError);
  c = {};
  c.train.micro_batch = 64;
  CHECK_THROWS_AS(config::validate(c), ConfigError);
}

TEST_CASE("built-in self checks pass") {
  for (const auto& c : selftest::invariant_suite(1)) {
    INFO(c.name << ": " << c.detail);
    CHECK(c.passed);
  }
  for (const auto& c : selftest::layer_gradient_checks(2)) {
    INFO(c.name << ": " << c.detail);
    CHECK(c.passed);
  }
}
