#pragma once
// Subject-wise cross-validation, report serialization and hypnogram export.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "transsleep/metrics.hpp"
#include "transsleep/train.hpp"

namespace transsleep::eval {

struct FoldPlan {
  std::size_t k = 0;
  std::map<std::string, std::size_t> fold_of;
  std::vector<std::vector<std::string>> test_subjects;  // per fold
};

// Shuffles the subjects with `seed` and deals them round-robin into k test
// folds; k == number of subjects is leave-one-subject-out. Requires
// 2 <= k <= number of subjects.
FoldPlan kfold_split(const std::vector<std::string>& subject_ids, std::size_t k, std::uint64_t seed = 0);

nlohmann::json report_to_json(const metrics::EvalReport& r);
// Inverse of report_to_json; partition counts are rebuilt from rate * share * total.
metrics::EvalReport report_from_json(const nlohmann::json& j);

// Pools several reports: confusion matrices and partition counts are summed
// and the metrics recomputed.
metrics::EvalReport pool_reports(const std::vector<metrics::EvalReport>& reports);

// Writes <stem>.csv (epoch_index,true_stage,predicted_stage) and <stem>.svg
// (step plot, W REM N1 N2 N3 top to bottom, one polyline for the truth and
// one for the prediction). Throws std::runtime_error when unwritable.
void hypnogram_export(const std::vector<std::size_t>& epoch_index, const std::vector<Stage>& labels,
                      const std::vector<Stage>& preds, const std::filesystem::path& stem);
std::string hypnogram_svg(const std::vector<Stage>& labels, const std::vector<Stage>& preds);
struct HypnogramRows {
  std::vector<std::size_t> epoch_index;
  std::vector<Stage> labels;
  std::vector<Stage> preds;
};
HypnogramRows read_hypnogram_csv(const std::filesystem::path& path);

struct FoldSplit {
  std::vector<SubjectDataset> train;
  std::vector<SubjectDataset> validation;  // one subject
  std::vector<SubjectDataset> test;
};

// Fold f of `plan`: its test subjects, one remaining subject for validation
// (chosen from an RNG seeded with fold_seed(seed, f)) and the rest for
// training. Needs at least two non-test subjects.
FoldSplit split_fold(const std::vector<SubjectDataset>& subjects, const FoldPlan& plan, std::size_t fold,
                     std::uint64_t seed);

struct FoldResult {
  std::size_t fold = 0;
  std::vector<std::string> test_subjects;
  std::string validation_subject;
  metrics::EvalReport report;
  train::PredictionSet predictions;
  train::TrainHistory history;
};

struct CvResult {
  std::vector<FoldResult> folds;
  metrics::EvalReport aggregate;  // pooled over all test predictions
  double mean_acc = 0.0;
  double mean_mf1 = 0.0;
};

using FoldCallback = std::function<void(const FoldResult&)>;

// Per fold: the test subjects are held out, one remaining subject (chosen
// from the fold's RNG stream) validates, the rest train. Fold f trains with
// seed derived from (cfg.seed, f).
CvResult run_cv(const std::vector<SubjectDataset>& subjects, const model::ModelConfig& model_cfg,
                const train::TrainConfig& cfg, const FoldPlan& plan, const FoldCallback& on_fold = {});

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold);

}  // namespace transsleep::eval
