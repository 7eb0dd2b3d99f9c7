#include "transsleep/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace transsleep::eval {

namespace {

// Vertical order of the hypnogram, top to bottom.
std::size_t display_row(Stage s) {
  switch (s) {
    case Stage::W: return 0;
    case Stage::REM: return 1;
    case Stage::N1: return 2;
    case Stage::N2: return 3;
    case Stage::N3: return 4;
  }
  return 0;
}

Stage parse_stage(const std::string& s) {
  const auto st = stage_from_name(s);
  if (!st) throw std::runtime_error("unknown stage '" + s + "' in hypnogram CSV");
  return *st;
}

std::string polyline(const std::vector<Stage>& stages, double x0, double dx, double y0, double dy,
                     const char* colour) {
  std::ostringstream out;
  out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1\" points=\"";
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const double y = y0 + dy * static_cast<double>(display_row(stages[i]));
    out << x0 + dx * static_cast<double>(i) << ',' << y << ' ' << x0 + dx * static_cast<double>(i + 1) << ',' << y;
    if (i + 1 < stages.size()) out << ' ';
  }
  out << "\"/>\n";
  return out.str();
}

}  // namespace

FoldPlan kfold_split(const std::vector<std::string>& subject_ids, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be at least 2 so every fold has training data");
  if (k > subject_ids.size()) {
    throw std::invalid_argument("kfold_split: k = " + std::to_string(k) + " exceeds " +
                                std::to_string(subject_ids.size()) + " subjects");
  }
  std::vector<std::string> ids = subject_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw std::invalid_argument("kfold_split: duplicate subject id");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  FoldPlan plan;
  plan.k = k;
  plan.test_subjects.resize(k);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    plan.fold_of[ids[i]] = i % k;
    plan.test_subjects[i % k].push_back(ids[i]);
  }
  return plan;
}

nlohmann::json report_to_json(const metrics::EvalReport& r) {
  nlohmann::json j;
  j["acc"] = r.acc;
  j["mf1"] = r.mf1;
  nlohmann::json f1 = nlohmann::json::object();
  for (Stage s : kAllStages) f1[std::string(stage_name(s))] = r.f1[stage_index(s)];
  j["per_class_f1"] = f1;
  nlohmann::json conf = nlohmann::json::array();
  for (const auto& row : r.confusion) conf.push_back(row);
  j["confusion"] = conf;
  j["transition"] = {{"rate", r.transition.rate}, {"share", r.transition.share}};
  j["non_transition"] = {{"rate", r.non_transition.rate}, {"share", r.non_transition.share}};
  return j;
}

metrics::EvalReport report_from_json(const nlohmann::json& j) {
  metrics::Confusion conf{};
  const auto& rows = j.at("confusion");
  if (rows.size() != kNumStages) throw std::invalid_argument("report: confusion must be 5x5");
  for (std::size_t i = 0; i < kNumStages; ++i) {
    if (rows[i].size() != kNumStages) throw std::invalid_argument("report: confusion must be 5x5");
    for (std::size_t k = 0; k < kNumStages; ++k) conf[i][k] = rows[i][k].get<std::size_t>();
  }
  metrics::EvalReport r = metrics::report_from_confusion(conf);
  const double total = static_cast<double>(r.total());
  for (auto [key, part] : {std::pair{"transition", &r.transition}, std::pair{"non_transition", &r.non_transition}}) {
    part->rate = j.at(key).at("rate").get<double>();
    part->share = j.at(key).at("share").get<double>();
    part->count = static_cast<std::size_t>(std::llround(part->share * total));
    part->errors = static_cast<std::size_t>(std::llround(part->rate * part->share * total));
  }
  return r;
}

metrics::EvalReport pool_reports(const std::vector<metrics::EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("pool_reports: no reports");
  metrics::Confusion conf{};
  metrics::PartitionStats t, n;
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < kNumStages; ++i)
      for (std::size_t k = 0; k < kNumStages; ++k) conf[i][k] += r.confusion[i][k];
    t.count += r.transition.count;
    t.errors += r.transition.errors;
    n.count += r.non_transition.count;
    n.errors += r.non_transition.errors;
  }
  metrics::EvalReport out = metrics::report_from_confusion(conf);
  const double total = static_cast<double>(t.count + n.count);
  for (metrics::PartitionStats* p : {&t, &n}) {
    p->rate = p->count == 0 ? 0.0 : static_cast<double>(p->errors) / static_cast<double>(p->count);
    p->share = total == 0 ? 0.0 : static_cast<double>(p->count) / total;
  }
  out.transition = t;
  out.non_transition = n;
  return out;
}

std::string hypnogram_svg(const std::vector<Stage>& labels, const std::vector<Stage>& preds) {
  constexpr double kLeft = 40, kTop = 10, kRow = 20, kWidth = 800;
  const double dx = labels.empty() ? 0.0 : kWidth / static_cast<double>(labels.size());
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kLeft + kWidth + 10 << "\" height=\""
      << 2 * kTop + 4 * kRow << "\">\n";
  const char* names[] = {"W", "REM", "N1", "N2", "N3"};
  for (std::size_t i = 0; i < 5; ++i) {
    out << "<text x=\"2\" y=\"" << kTop + kRow * static_cast<double>(i) + 4 << "\" font-size=\"10\">" << names[i]
        << "</text>\n";
  }
  out << polyline(labels, kLeft, dx, kTop, kRow, "black");
  out << polyline(preds, kLeft, dx, kTop, kRow, "red");
  out << "</svg>\n";
  return out.str();
}

void hypnogram_export(const std::vector<std::size_t>& epoch_index, const std::vector<Stage>& labels,
                      const std::vector<Stage>& preds, const std::filesystem::path& stem) {
  if (labels.empty() || labels.size() != preds.size() || epoch_index.size() != labels.size()) {
    throw std::invalid_argument("hypnogram_export: need equally long, non-empty sequences");
  }
  std::filesystem::path csv_path = stem;
  csv_path += ".csv";
  std::filesystem::path svg_path = stem;
  svg_path += ".svg";
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  csv << "epoch_index,true_stage,predicted_stage\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    csv << epoch_index[i] << ',' << stage_name(labels[i]) << ',' << stage_name(preds[i]) << '\n';
  }
  if (!csv) throw std::runtime_error("write failed for " + csv_path.string());
  std::ofstream svg(svg_path);
  if (!svg) throw std::runtime_error("cannot write " + svg_path.string());
  svg << hypnogram_svg(labels, preds);
  if (!svg) throw std::runtime_error("write failed for " + svg_path.string());
}

HypnogramRows read_hypnogram_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch_index,true_stage,predicted_stage") throw std::runtime_error("unexpected hypnogram header");
  HypnogramRows rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string idx, truth, pred;
    if (!std::getline(ss, idx, ',') || !std::getline(ss, truth, ',') || !std::getline(ss, pred)) {
      throw std::runtime_error("malformed hypnogram row '" + line + "'");
    }
    rows.epoch_index.push_back(std::stoul(idx));
    rows.labels.push_back(parse_stage(truth));
    rows.preds.push_back(parse_stage(pred));
  }
  return rows;
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (fold + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

FoldSplit split_fold(const std::vector<SubjectDataset>& subjects, const FoldPlan& plan, std::size_t fold,
                     std::uint64_t seed) {
  if (fold >= plan.k) {
    throw std::invalid_argument("fold " + std::to_string(fold) + " out of range for " + std::to_string(plan.k) + " folds");
  }
  FoldSplit split;
  std::vector<SubjectDataset> rest;
  for (const auto& ds : subjects) {
    const auto it = plan.fold_of.find(ds.subject_id);
    if (it == plan.fold_of.end()) throw std::invalid_argument("subject " + ds.subject_id + " is not in the fold plan");
    (it->second == fold ? split.test : rest).push_back(ds);
  }
  if (split.test.empty()) throw std::invalid_argument("fold " + std::to_string(fold) + " has no test subject");
  if (rest.size() < 2) {
    throw std::invalid_argument("fold " + std::to_string(fold) + " needs at least two non-test subjects");
  }
  std::mt19937_64 pick(fold_seed(seed, fold));
  const std::size_t v = std::uniform_int_distribution<std::size_t>(0, rest.size() - 1)(pick);
  split.validation.push_back(rest[v]);
  rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(v));
  split.train = std::move(rest);
  return split;
}

CvResult run_cv(const std::vector<SubjectDataset>& subjects, const model::ModelConfig& model_cfg,
                const train::TrainConfig& cfg, const FoldPlan& plan, const FoldCallback& on_fold) {
  for (const auto& ds : subjects) {
    if (!plan.fold_of.count(ds.subject_id)) throw std::invalid_argument("run_cv: subject " + ds.subject_id + " is not in the fold plan");
  }
  CvResult result;
  std::vector<metrics::EvalReport> reports;
  for (std::size_t f = 0; f < plan.k; ++f) {
    FoldResult fold;
    fold.fold = f;
    const FoldSplit split = split_fold(subjects, plan, f, cfg.seed);
    train::TrainConfig fold_cfg = cfg;
    fold_cfg.seed = fold_seed(cfg.seed, f);
    for (const auto& ds : split.test) fold.test_subjects.push_back(ds.subject_id);
    fold.validation_subject = split.validation[0].subject_id;
    try {
      train::TrainResult trained = train::train(split.train, split.validation, model_cfg, fold_cfg);
      fold.history = trained.history;
      fold.predictions = train::predict(*trained.model, split.test, trained.weights, cfg.threads);
    } catch (const std::exception& e) {
      throw std::runtime_error("fold " + std::to_string(f) + ": " + e.what());
    }
    fold.report = fold.predictions.report();
    reports.push_back(fold.report);
    result.mean_acc += fold.report.acc / static_cast<double>(plan.k);
    result.mean_mf1 += fold.report.mf1 / static_cast<double>(plan.k);
    if (on_fold) on_fold(fold);
    result.folds.push_back(std::move(fold));
  }
  result.aggregate = pool_reports(reports);
  return result;
}

}  // namespace transsleep::eval
