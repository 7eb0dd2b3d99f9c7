// transsleep: preprocess | train | eval | analyze | selftest

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <regex>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "transsleep/checkpoint.hpp"
#include "transsleep/config.hpp"
#include "transsleep/dataset.hpp"
#include "transsleep/edf.hpp"
#include "transsleep/eval.hpp"
#include "transsleep/preprocess.hpp"
#include "transsleep/selftest.hpp"
#include "transsleep/train.hpp"

namespace fs = std::filesystem;
using namespace transsleep;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> ablation;
  std::size_t fold = 0;
  std::string data_dir, cache_dir, out_dir, checkpoint, reports_dir;
};

void log(const std::string& msg) { std::cerr << "[transsleep] " << msg << '\n'; }

config::RunConfig resolve(const Options& opt) {
  config::RunConfig cfg = opt.config_path.empty() ? config::RunConfig{} : config::load(opt.config_path);
  for (const std::string& kv : opt.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    config::set(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opt.seed) cfg.train.seed = *opt.seed;
  if (opt.threads) cfg.train.threads = *opt.threads;
  if (opt.ablation) cfg.train.ablation = config::ablation_from_name(*opt.ablation);
  if (!opt.data_dir.empty()) cfg.data_dir = opt.data_dir;
  if (!opt.cache_dir.empty()) cfg.cache_dir = opt.cache_dir;
  if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
  config::validate(cfg);
  std::cerr << "[transsleep] resolved configuration:\n" << config::to_toml(cfg);
  return cfg;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out || !(out << text)) throw std::runtime_error("cannot write " + path.string());
}

// Sleep-EDF cassette recordings SC4ssN* belong to subject ss; other ids are
// their own subject.
std::string subject_group(const std::string& id) {
  static const std::regex sleep_edf("^(SC4\\d\\d)\\d.*");
  std::smatch m;
  return std::regex_match(id, m, sleep_edf) ? m[1].str() : id;
}

std::vector<SubjectDataset> load_caches(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("cache directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".tsds") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .tsds cache files in " + dir.string());
  std::vector<SubjectDataset> out;
  for (const auto& f : files) out.push_back(read_cache(f));
  return out;
}

// Folds over subject groups, expanded to recording ids.
eval::FoldPlan plan_folds(const std::vector<SubjectDataset>& data, const config::RunConfig& cfg) {
  std::vector<std::string> groups;
  for (const auto& ds : data) groups.push_back(subject_group(ds.subject_id));
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  if (cfg.folds > groups.size()) {
    throw ConfigError("cv.folds = " + std::to_string(cfg.folds) + " exceeds the " + std::to_string(groups.size()) +
                      " subjects in the cache");
  }
  const eval::FoldPlan by_group = eval::kfold_split(groups, cfg.folds, cfg.fold_seed);
  eval::FoldPlan plan;
  plan.k = by_group.k;
  plan.test_subjects.resize(plan.k);
  for (const auto& ds : data) {
    const std::size_t f = by_group.fold_of.at(subject_group(ds.subject_id));
    plan.fold_of[ds.subject_id] = f;
    plan.test_subjects[f].push_back(ds.subject_id);
  }
  return plan;
}

fs::path fold_dir(const config::RunConfig& cfg, std::size_t fold) {
  std::ostringstream name;
  name << "fold_" << std::setw(2) << std::setfill('0') << fold;
  return fs::path(cfg.out_dir) / name.str();
}

void print_count_table(const std::vector<SubjectDataset>& data) {
  std::array<std::size_t, kNumStages> total{};
  std::printf("%-16s %7s %7s %7s %7s %7s %8s\n", "subject", "W", "N1", "N2", "N3", "REM", "total");
  for (const auto& ds : data) {
    const auto c = ds.class_counts();
    std::printf("%-16s %7zu %7zu %7zu %7zu %7zu %8zu\n", ds.subject_id.c_str(), c[0], c[1], c[2], c[3], c[4],
                ds.epochs.size());
    for (std::size_t i = 0; i < kNumStages; ++i) total[i] += c[i];
  }
  std::size_t all = 0;
  for (std::size_t v : total) all += v;
  std::printf("%-16s %7zu %7zu %7zu %7zu %7zu %8zu\n", "total", total[0], total[1], total[2], total[3], total[4], all);
  if (all > 0) {
    std::printf("%-16s", "share %");
    for (std::size_t v : total) std::printf(" %7.1f", 100.0 * static_cast<double>(v) / static_cast<double>(all));
    std::printf("\n");
  }
}

int cmd_preprocess(const Options& opt) {
  config::RunConfig cfg = resolve(opt);
  config::require(cfg, {"data.data_dir", "data.cache_dir"});
  if (!fs::is_directory(cfg.data_dir)) throw std::runtime_error("data directory " + cfg.data_dir + " does not exist");
  const preprocess::RecordingScan scan = preprocess::find_recordings(cfg.data_dir);
  if (scan.pairs.empty() && scan.unpaired.empty()) {
    log("warning: no EDF recordings found in " + cfg.data_dir);
    std::printf("processed 0 recordings\n");
    return 0;
  }
  for (const auto& path : scan.unpaired) {
    const std::string name = path.filename().string();
    const bool is_psg = name.find("-PSG") != std::string::npos;
    log("warning: " + name + " has no matching " + (is_psg ? "hypnogram" : "PSG recording") + "; skipped");
  }
  fs::create_directories(cfg.cache_dir);
  std::vector<SubjectDataset> done;
  std::size_t failures = 0;
  for (const auto& pair : scan.pairs) {
    const std::string& id = pair.id;
    try {
      const edf::Recording rec = edf::parse(read_bytes(pair.psg));
      const auto annotations = edf::parse_hypnogram(read_bytes(pair.hypnogram));
      SubjectDataset ds = preprocess::preprocess_recording(rec, annotations, id, cfg.pipeline);
      write_cache(fs::path(cfg.cache_dir) / (id + ".tsds"), ds);
      log("cached " + id + ": " + std::to_string(ds.epochs.size()) + " epochs");
      done.push_back(std::move(ds));
    } catch (const std::exception& e) {
      ++failures;
      log("error: " + id + ": " + e.what());
    }
  }
  print_count_table(done);
  std::printf("processed %zu recordings, %zu failed\n", done.size(), failures);
  return failures == 0 ? 0 : kRuntimeFailure;
}

int cmd_train(const Options& opt) {
  config::RunConfig cfg = resolve(opt);
  config::require(cfg, {"data.cache_dir"});
  const auto data = load_caches(cfg.cache_dir);
  const eval::FoldPlan plan = plan_folds(data, cfg);
  if (opt.fold >= plan.k) throw ConfigError("--fold " + std::to_string(opt.fold) + " out of range for cv.folds");
  const eval::FoldSplit split = eval::split_fold(data, plan, opt.fold, cfg.train.seed);
  train::TrainConfig tc = cfg.train;
  tc.seed = eval::fold_seed(cfg.train.seed, opt.fold);
  log("fold " + std::to_string(opt.fold) + ": " + std::to_string(split.train.size()) + " training, validation " +
      split.validation[0].subject_id + ", " + std::to_string(split.test.size()) + " test recordings");
  const auto result = train::train(split.train, split.validation, cfg.model, tc, [](const train::HistoryRow& r) {
    std::fprintf(stderr, "[transsleep] epoch %3zu  L_c %.4f  L_s %.4f  L_t %.4f  val ACC %.4f  val MF1 %.4f\n",
                 r.epoch, r.loss_c, r.loss_s, r.loss_t, r.val_acc, r.val_mf1);
  });
  for (const auto& w : result.warnings) log("warning: " + w);
  const fs::path dir = fold_dir(cfg, opt.fold);
  fs::create_directories(dir);
  checkpoint::save(dir / "model.ckpt", result.model->params());
  result.history.write_csv(dir / "history.csv");
  write_text(dir / "config.toml", config::to_toml(cfg));
  nlohmann::json split_json;
  for (const auto& [key, part] : {std::pair{"train", &split.train}, std::pair{"validation", &split.validation},
                                  std::pair{"test", &split.test}}) {
    split_json[key] = nlohmann::json::array();
    for (const auto& ds : *part) split_json[key].push_back(ds.subject_id);
  }
  write_text(dir / "split.json", split_json.dump(2) + "\n");
  std::printf("best validation MF1 %.4f at epoch %zu; checkpoint %s\n", result.history.best_mf1,
              result.history.best_epoch, (dir / "model.ckpt").string().c_str());
  return 0;
}

void print_report(const std::string& name, const metrics::EvalReport& r) {
  std::printf("%-12s ACC %.4f  MF1 %.4f  F1", name.c_str(), r.acc, r.mf1);
  for (double f : r.f1) std::printf(" %.3f", f);
  std::printf("\n");
}

int cmd_eval(const Options& opt) {
  config::RunConfig cfg = resolve(opt);
  config::require(cfg, {"data.cache_dir"});
  if (opt.checkpoint.empty()) throw ConfigError("eval requires --checkpoint");
  const auto data = load_caches(cfg.cache_dir);
  const eval::FoldPlan plan = plan_folds(data, cfg);
  if (opt.fold >= plan.k) throw ConfigError("--fold " + std::to_string(opt.fold) + " out of range for cv.folds");
  const eval::FoldSplit split = eval::split_fold(data, plan, opt.fold, cfg.train.seed);

  model::ModelConfig mc = cfg.model;
  mc.amf.eta = cfg.train.ablation.eta;
  model::TransSleep net(mc, 0);
  try {
    checkpoint::load(opt.checkpoint, net.params());
  } catch (const checkpoint::FormatError& e) {
    throw ConfigError("checkpoint " + opt.checkpoint + " does not match the configured model: " + e.what());
  }
  const auto weights = train::loss_weights(split.train, cfg.train, mc.ce.sequence_length);
  const auto predictions = train::predict(net, split.test, weights, cfg.train.threads);
  const metrics::EvalReport report = predictions.report();
  for (const auto& w : report.warnings) log("warning: " + w);

  const fs::path dir = fold_dir(cfg, opt.fold);
  fs::create_directories(dir);
  nlohmann::json j = eval::report_to_json(report);
  j["fold"] = opt.fold;
  j["test_subjects"] = nlohmann::json::array();
  for (const auto& s : predictions.subjects) j["test_subjects"].push_back(s.subject_id);
  write_text(dir / "report.json", j.dump(2) + "\n");

  std::ostringstream conf;
  conf << "true\\pred,W,N1,N2,N3,REM\n";
  for (std::size_t i = 0; i < kNumStages; ++i) {
    conf << stage_name(kAllStages[i]);
    for (std::size_t v : report.confusion[i]) conf << ',' << v;
    conf << '\n';
  }
  write_text(dir / "confusion.csv", conf.str());
  for (const auto& s : predictions.subjects) {
    if (s.labels.empty()) {
      log("warning: " + s.subject_id + " has no full window; no hypnogram");
      continue;
    }
    eval::hypnogram_export(s.epoch_index, s.labels, s.preds, dir / ("hypnogram_" + s.subject_id));
  }

  print_report("fold " + std::to_string(opt.fold), report);
  std::printf("confusion (rows true, columns predicted; W N1 N2 N3 REM)\n");
  for (const auto& row : report.confusion) {
    for (std::size_t v : row) std::printf(" %7zu", v);
    std::printf("\n");
  }
  std::printf("%-18s %10s %10s\n", "", "error %", "share %");
  std::printf("%-18s %10.1f %10.1f\n", "transitioning", 100 * report.transition.rate, 100 * report.transition.share);
  std::printf("%-18s %10.1f %10.1f\n", "non-transitioning", 100 * report.non_transition.rate,
              100 * report.non_transition.share);
  std::printf("artifacts written to %s\n", dir.string().c_str());
  return 0;
}

int cmd_analyze(const Options& opt) {
  if (opt.reports_dir.empty()) throw ConfigError("analyze requires --reports-dir");
  if (!fs::is_directory(opt.reports_dir)) throw std::runtime_error("reports directory " + opt.reports_dir + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(opt.reports_dir)) {
    if (e.is_regular_file() && e.path().filename() == "report.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no report.json files under " + opt.reports_dir);

  std::vector<std::pair<std::string, metrics::EvalReport>> rows;
  for (const auto& f : files) {
    std::ifstream in(f);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
      rows.emplace_back(fs::relative(f.parent_path(), opt.reports_dir).string(), eval::report_from_json(j));
    } catch (const std::exception& e) {
      throw std::runtime_error("malformed report " + f.string() + ": " + e.what());
    }
  }
  std::vector<metrics::EvalReport> reports;
  metrics::EvalReport mean;
  for (const auto& [name, r] : rows) {
    reports.push_back(r);
    const double k = static_cast<double>(rows.size());
    mean.acc += r.acc / k;
    mean.mf1 += r.mf1 / k;
    for (std::size_t c = 0; c < kNumStages; ++c) mean.f1[c] += r.f1[c] / k;
    mean.transition.rate += r.transition.rate / k;
    mean.transition.share += r.transition.share / k;
    mean.non_transition.rate += r.non_transition.rate / k;
    mean.non_transition.share += r.non_transition.share / k;
  }
  rows.emplace_back("aggregate", eval::pool_reports(reports));
  rows.emplace_back("mean", mean);

  std::ostringstream csv;
  csv << "name,acc,mf1,f1_w,f1_n1,f1_n2,f1_n3,f1_rem,transition_error,transition_share,non_transition_error,"
         "non_transition_share\n";
  std::printf("%-14s %7s %7s %7s %7s %7s %7s %7s %9s %9s\n", "", "ACC", "MF1", "W", "N1", "N2", "N3", "REM",
              "trans%", "nontrans%");
  for (const auto& [name, r] : rows) {
    std::printf("%-14s %7.4f %7.4f", name.c_str(), r.acc, r.mf1);
    csv << name << ',' << r.acc << ',' << r.mf1;
    for (double f : r.f1) {
      std::printf(" %7.4f", f);
      csv << ',' << f;
    }
    std::printf(" %9.2f %9.2f\n", 100 * r.transition.rate, 100 * r.non_transition.rate);
    csv << ',' << r.transition.rate << ',' << r.transition.share << ',' << r.non_transition.rate << ','
        << r.non_transition.share << '\n';
  }
  write_text(fs::path(opt.reports_dir) / "summary.csv", csv.str());
  return 0;
}

int cmd_selftest(std::uint64_t seed) {
  std::size_t failed = 0;
  auto run = [&](const std::vector<selftest::Check>& checks) {
    for (const auto& c : checks) {
      std::printf("%s %-28s %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
      std::fflush(stdout);
      failed += !c.passed;
    }
  };
  run(selftest::gradient_suite(seed));
  run(selftest::invariant_suite(seed));
  std::printf("%zu check(s) failed\n", failed);
  return failed == 0 ? 0 : kRuntimeFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sleep staging from single-channel EEG"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "Run configuration file");
    sub->add_option("--set", opt.overrides, "Override a config key (section.key=value)");
    sub->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { opt.seed = s; }, "Training seed");
    sub->add_option_function<std::size_t>("--threads", [&](std::size_t t) { opt.threads = t; },
                                          "Prediction worker threads");
    sub->add_option_function<std::string>("--ablation", [&](const std::string& a) { opt.ablation = a; },
                                          "full, case1 (no ETA), case2 (no auxiliary losses), case3 (no L_t)");
  };
  auto* pre = app.add_subcommand("preprocess", "Convert EDF recordings into cached epoch datasets");
  add_common(pre);
  pre->add_option("--data-dir", opt.data_dir, "Directory of *-PSG.edf / *-Hypnogram.edf pairs");
  pre->add_option("--out-dir", opt.cache_dir, "Cache directory");
  auto* tr = app.add_subcommand("train", "Train one cross-validation fold");
  add_common(tr);
  tr->add_option("--fold", opt.fold, "Fold index");
  tr->add_option("--cache-dir", opt.cache_dir, "Cache directory");
  tr->add_option("--out-dir", opt.out_dir, "Output directory");
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on its fold's test subjects");
  add_common(ev);
  ev->add_option("--checkpoint", opt.checkpoint, "Checkpoint written by train")->required();
  ev->add_option("--fold", opt.fold, "Fold index");
  ev->add_option("--cache-dir", opt.cache_dir, "Cache directory");
  ev->add_option("--out-dir", opt.out_dir, "Output directory");
  auto* an = app.add_subcommand("analyze", "Merge per-fold reports");
  an->add_option("--reports-dir", opt.reports_dir, "Directory searched for report.json files")->required();
  auto* st = app.add_subcommand("selftest", "Gradient checks and invariant suites");
  st->add_option("--seed", seed, "Seed for random test inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }
  try {
    if (pre->parsed()) return cmd_preprocess(opt);
    if (tr->parsed()) return cmd_train(opt);
    if (ev->parsed()) return cmd_eval(opt);
    if (an->parsed()) return cmd_analyze(opt);
    return cmd_selftest(seed);
  } catch (const ConfigError& e) {
    log(std::string("configuration error: ") + e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return kRuntimeFailure;
  }
}
