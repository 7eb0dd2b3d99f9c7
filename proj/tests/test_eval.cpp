#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "transsleep/eval.hpp"
#include "transsleep/model.hpp"
#include "transsleep/synth.hpp"

using namespace transsleep;
namespace fs = std::filesystem;

namespace {

std::vector<Stage> stages(std::initializer_list<int> v) {
  std::vector<Stage> out;
  for (int s : v) out.push_back(static_cast<Stage>(s));
  return out;
}

std::vector<Stage> random_stages(std::mt19937_64& rng, std::size_t n, int classes = 5) {
  std::vector<Stage> out(n);
  for (auto& s : out) s = static_cast<Stage>(rng() % static_cast<unsigned>(classes));
  return out;
}

struct Oracle {
  double acc;
  double mf1;
  std::array<double, 5> f1;
};

// Counts straight from the pairs, no confusion matrix.
Oracle brute_force(const std::vector<Stage>& preds, const std::vector<Stage>& labels) {
  Oracle o{};
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i];
  o.acc = static_cast<double>(correct) / static_cast<double>(preds.size());
  double sum = 0.0;
  for (int c = 0; c < 5; ++c) {
    const Stage s = static_cast<Stage>(c);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] == s && labels[i] == s) ++tp;
      if (preds[i] == s && labels[i] != s) ++fp;
      if (preds[i] != s && labels[i] == s) ++fn;
    }
    const std::size_t denom = 2 * tp + fp + fn;
    o.f1[c] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    sum += o.f1[c];
  }
  o.mf1 = sum / 5.0;
  return o;
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("transsleep_eval_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("metrics examples") {
  SUBCASE("perfect") {
    const auto r = metrics::compute(stages({0, 1, 2, 3, 4}), stages({0, 1, 2, 3, 4}));
    CHECK(r.acc == 1.0);
    CHECK(r.mf1 == 1.0);
    CHECK(r.warnings.empty());
  }
  SUBCASE("hand-computed") {
    const auto r = metrics::compute(stages({0, 1, 1, 1}), stages({0, 0, 1, 1}));
    CHECK(r.acc == 0.75);
    CHECK(r.f1[0] == doctest::Approx(2.0 / 3.0));
    CHECK(r.f1[1] == doctest::Approx(0.8));
    CHECK(r.f1[2] == 0.0);
    CHECK(r.mf1 == doctest::Approx((2.0 / 3.0 + 0.8) / 5.0));
    CHECK(r.warnings.size() == 3);
    CHECK(r.warnings[0].find("N2") != std::string::npos);
    CHECK(r.confusion[0][1] == 1);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(metrics::compute({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(metrics::compute(stages({0}), stages({0, 1})), std::invalid_argument);
  }
}

TEST_CASE("metrics agree with a brute-force oracle") {
  std::mt19937_64 rng(2024);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    const int classes = 1 + static_cast<int>(rng() % 5);
    const auto labels = random_stages(rng, n, classes);
    const auto preds = random_stages(rng, n, classes);
    const auto r = metrics::compute(preds, labels);
    const auto o = brute_force(preds, labels);
    bool same = r.acc == o.acc && r.mf1 == o.mf1 && std::equal(r.f1.begin(), r.f1.end(), o.f1.begin());
    std::size_t trace = 0;
    for (std::size_t c = 0; c < 5; ++c) trace += r.confusion[c][c];
    same = same && r.acc == static_cast<double>(trace) / static_cast<double>(r.total());
    for (std::size_t c = 0; c < 5; ++c) {
      std::size_t row = 0;
      for (std::size_t k = 0; k < 5; ++k) row += r.confusion[c][k];
      same = same && row == static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kAllStages[c]));
    }
    mismatches += !same;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("MF1 is invariant under consistent relabeling") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto labels = random_stages(rng, 40);
    const auto preds = random_stages(rng, 40);
    std::array<int, 5> perm{0, 1, 2, 3, 4};
    std::shuffle(perm.begin(), perm.end(), rng);
    auto relabel = [&](std::vector<Stage> v) {
      for (auto& s : v) s = static_cast<Stage>(perm[stage_index(s)]);
      return v;
    };
    const auto a = metrics::compute(preds, labels);
    const auto b = metrics::compute(relabel(preds), relabel(labels));
    CHECK(a.mf1 == doctest::Approx(b.mf1).epsilon(1e-15));
    CHECK(a.acc == b.acc);
  }
}

TEST_CASE("transition analysis") {
  SUBCASE("perfect predictions") {
    const auto labels = stages({0, 0, 1, 2, 2, 2, 4});
    const auto r = metrics::transition_analysis(labels, labels);
    CHECK(r.transition.rate == 0.0);
    CHECK(r.non_transition.rate == 0.0);
    CHECK(r.transition.count == 5);
    CHECK(r.transition.share + r.non_transition.share == doctest::Approx(1.0));
  }
  SUBCASE("errors split by partition") {
    const auto labels = stages({0, 0, 0, 2, 2, 2});
    const auto preds = stages({1, 0, 2, 2, 2, 1});
    const auto r = metrics::transition_analysis(preds, labels);
    CHECK(r.transition.count == 2);
    CHECK(r.transition.errors == 1);
    CHECK(r.non_transition.errors == 2);
    CHECK(r.non_transition.rate == 0.5);
  }
  SUBCASE("random sequences") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      const auto labels = random_stages(rng, 1 + rng() % 50);
      const auto preds = random_stages(rng, labels.size());
      const auto r = metrics::transition_analysis(preds, labels);
      CHECK(r.transition.count + r.non_transition.count == labels.size());
      CHECK(r.transition.share + r.non_transition.share == doctest::Approx(1.0));
      CHECK(r.transition.rate >= 0.0);
      CHECK(r.transition.rate <= 1.0);
    }
  }
}

TEST_CASE("k-fold split") {
  std::vector<std::string> ids;
  for (int i = 0; i < 20; ++i) ids.push_back("s" + std::to_string(i));
  SUBCASE("leave one subject out") {
    const auto plan = eval::kfold_split(ids, 20, 3);
    REQUIRE(plan.test_subjects.size() == 20);
    std::set<std::string> seen;
    for (const auto& fold : plan.test_subjects) {
      CHECK(fold.size() == 1);
      seen.insert(fold[0]);
    }
    CHECK(seen.size() == 20);
  }
  SUBCASE("uneven folds are disjoint and complete") {
    const auto plan = eval::kfold_split(ids, 6, 1);
    std::size_t total = 0;
    for (std::size_t f = 0; f < 6; ++f) {
      CHECK(plan.test_subjects[f].size() >= 3);
      for (const auto& id : plan.test_subjects[f]) CHECK(plan.fold_of.at(id) == f);
      total += plan.test_subjects[f].size();
    }
    CHECK(total == 20);
  }
  SUBCASE("determinism") {
    CHECK(eval::kfold_split(ids, 4, 9).test_subjects == eval::kfold_split(ids, 4, 9).test_subjects);
    CHECK(eval::kfold_split(ids, 4, 9).test_subjects != eval::kfold_split(ids, 4, 10).test_subjects);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(eval::kfold_split(ids, 1), std::invalid_argument);
    CHECK_THROWS_AS(eval::kfold_split(ids, 21), std::invalid_argument);
    CHECK_THROWS_AS(eval::kfold_split({"a", "a"}, 2), std::invalid_argument);
  }
}

TEST_CASE("hypnogram export") {
  const fs::path dir = temp_dir("hyp");
  const auto labels = stages({0, 1, 4});
  const auto preds = stages({0, 2, 4});
  eval::hypnogram_export({5, 6, 7}, labels, preds, dir / "subj");
  std::ifstream csv(dir / "subj.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "epoch_index,true_stage,predicted_stage");
  CHECK(lines[2] == "6,N1,N2");

  std::ifstream svg_in(dir / "subj.svg");
  std::stringstream svg;
  svg << svg_in.rdbuf();
  std::size_t polylines = 0;
  for (std::size_t pos = svg.str().find("<polyline"); pos != std::string::npos;
       pos = svg.str().find("<polyline", pos + 1)) {
    ++polylines;
  }
  CHECK(polylines == 2);

  const auto rows = eval::read_hypnogram_csv(dir / "subj.csv");
  CHECK(rows.preds == preds);
  CHECK(rows.labels == labels);
  CHECK(rows.epoch_index == std::vector<std::size_t>{5, 6, 7});

  SUBCASE("stage rows run W REM N1 N2 N3 from the top") {
    const std::string s = eval::hypnogram_svg(stages({0, 4, 1, 2, 3}), stages({0, 0, 0, 0, 0}));
    CHECK(s.find("points=\"40,10 ") != std::string::npos);
    CHECK(s.find("30 ") != std::string::npos);
  }
  SUBCASE("unwritable path") {
    CHECK_THROWS_AS(eval::hypnogram_export({0}, stages({0}), stages({0}), dir / "missing" / "x"), std::runtime_error);
  }
  SUBCASE("empty input") { CHECK_THROWS_AS(eval::hypnogram_export({}, {}, {}, dir / "e"), std::invalid_argument); }
  fs::remove_all(dir);
}

TEST_CASE("report JSON and pooling") {
  std::mt19937_64 rng(4);
  std::vector<metrics::EvalReport> reports;
  metrics::Confusion sum{};
  std::vector<Stage> all_p, all_l;
  for (int f = 0; f < 3; ++f) {
    const auto labels = random_stages(rng, 50);
    const auto preds = random_stages(rng, 50);
    reports.push_back(metrics::transition_analysis(preds, labels));
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t k = 0; k < 5; ++k) sum[i][k] += reports.back().confusion[i][k];
    all_p.insert(all_p.end(), preds.begin(), preds.end());
    all_l.insert(all_l.end(), labels.begin(), labels.end());
  }
  const auto pooled = eval::pool_reports(reports);
  CHECK(pooled.confusion == sum);
  const auto direct = metrics::compute(all_p, all_l);
  CHECK(pooled.mf1 == direct.mf1);
  CHECK(pooled.acc == direct.acc);
  CHECK(pooled.transition.count + pooled.non_transition.count == 150);

  const auto j = eval::report_to_json(reports[0]);
  for (const char* key : {"acc", "mf1", "per_class_f1", "confusion", "transition", "non_transition"}) CHECK(j.contains(key));
  CHECK(j["per_class_f1"].contains("REM"));
  const auto back = eval::report_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.confusion == reports[0].confusion);
  CHECK(back.mf1 == reports[0].mf1);
  CHECK(back.transition.count == reports[0].transition.count);
  CHECK(back.transition.errors == reports[0].transition.errors);
  CHECK(back.non_transition.errors == reports[0].non_transition.errors);
  CHECK_THROWS(eval::report_from_json(nlohmann::json{{"acc", 1}}));
  CHECK_THROWS_AS(eval::pool_reports({}), std::invalid_argument);
}

TEST_CASE("cross-validation structure") {
  model::ModelConfig mc;
  mc.amf.f0 = 2;
  mc.amf.widths = {4, 4, 8};
  mc.amf.heads = 2;
  mc.ce.hidden = 4;
  mc.ce.sequence_length = 5;
  train::TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.patience = 1;
  cfg.batch_size = 4;
  cfg.micro_batch = 2;
  cfg.seed = 11;
  const auto data = synth::synth_dataset(17, 6, 40);
  std::vector<std::string> ids;
  for (const auto& d : data) ids.push_back(d.subject_id);
  const auto plan = eval::kfold_split(ids, 2, 11);

  std::size_t callbacks = 0;
  const auto cv = eval::run_cv(data, mc, cfg, plan, [&](const eval::FoldResult&) { ++callbacks; });
  REQUIRE(cv.folds.size() == 2);
  CHECK(callbacks == 2);
  metrics::Confusion sum{};
  for (const auto& f : cv.folds) {
    CHECK(f.test_subjects.size() == 3);
    CHECK(std::find(f.test_subjects.begin(), f.test_subjects.end(), f.validation_subject) == f.test_subjects.end());
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t k = 0; k < 5; ++k) sum[i][k] += f.report.confusion[i][k];
  }
  CHECK(cv.aggregate.confusion == sum);
  CHECK(cv.aggregate.total() == 240);
  CHECK(cv.mean_mf1 == doctest::Approx((cv.folds[0].report.mf1 + cv.folds[1].report.mf1) / 2));

  SUBCASE("seeded single-threaded runs are reproducible") {
    const auto again = eval::run_cv(data, mc, cfg, plan);
    CHECK(again.aggregate.confusion == cv.aggregate.confusion);
    CHECK(again.folds[1].history.to_csv() == cv.folds[1].history.to_csv());
  }
  SUBCASE("training errors carry the fold") {
    train::TrainConfig bad = cfg;
    bad.patience = 5;
    CHECK_THROWS_WITH(eval::run_cv(data, mc, bad, plan), doctest::Contains("fold 0"));
  }
}
