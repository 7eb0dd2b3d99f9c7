#pragma once
// Losses, sequence batching, the training loop and batched prediction.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "transsleep/dataset.hpp"
#include "transsleep/metrics.hpp"
#include "transsleep/model.hpp"
#include "transsleep/optim.hpp"

namespace transsleep::train {

// Which parts of the method are active. Case I drops the attention taps,
// Case II both auxiliary losses, Case III only the transition loss.
struct Ablation {
  bool eta = true;
  bool aux_stage = true;
  bool aux_transition = true;

  static Ablation full() { return {}; }
  static Ablation case1() { return {false, true, true}; }
  static Ablation case2() { return {true, false, false}; }
  static Ablation case3() { return {true, true, false}; }
};

struct LossWeights {
  double lambda_c = 2.0;
  double lambda_s = 2.0;
  double lambda_t = 0.2;
  std::vector<double> stage = std::vector<double>(kNumStages, 1.0);
  std::vector<double> transition = std::vector<double>(2, 1.0);
};

// w_c = total / (C * count_c). Throws std::invalid_argument naming an empty class.
std::vector<double> class_weights(const std::vector<std::size_t>& counts,
                                  const std::vector<std::string>& class_names = {});

// Single-example forms: y is the true class index, p a probability vector.
double wce(std::size_t y, const std::vector<double>& p, const std::vector<double>& w);
double wcs(std::size_t y, const std::vector<double>& p, const std::vector<double>& w);

// Batch forms over probability rows [M, C]; both average over the M rows.
Tensor wce_loss(const Tensor& probs, const std::vector<std::size_t>& labels, const std::vector<double>& w);
Tensor wcs_loss(const Tensor& probs, const std::vector<std::size_t>& labels, const std::vector<double>& w);

struct LossTerms {
  Tensor total;
  double loss_c = 0.0;
  double loss_s = 0.0;
  double loss_t = 0.0;
};

// L = L_c + lambda_s * L_s + lambda_t * L_t with L_c = WCE + lambda_c * WCS on
// the stage head, L_s = WCE on the confusion estimate, L_t = WCE on the
// transition head. Disabled auxiliary terms contribute exactly zero.
LossTerms total_loss(const model::ModelOutput& out, const std::vector<std::size_t>& stages,
                     const std::vector<std::size_t>& transitions, const LossWeights& weights,
                     const Ablation& ablation);

// A window of consecutive epochs inside one subject.
struct SequenceRef {
  const SubjectDataset* subject = nullptr;
  std::size_t start = 0;  // position in subject->epochs
};

// Windows of `length` epochs that never cross a discard gap. stride ==
// length gives non-overlapping windows; `cover_tail` adds a final window
// flush with the end of each run so every epoch of a long enough run is
// covered. Runs shorter than `length` are skipped.
std::vector<SequenceRef> make_sequences(const std::vector<SubjectDataset>& subjects, std::size_t length,
                                        std::size_t stride, bool cover_tail = false);

// [B, N, 3000] input, flattened labels and per-window transition flags.
struct Batch {
  Tensor epochs;
  std::vector<std::size_t> stages;
  std::vector<std::size_t> transitions;
};
Batch make_batch(const std::vector<SequenceRef>& refs, std::size_t length);

struct TrainConfig {
  optim::AdamConfig adam;
  std::size_t batch_size = 32;
  // Sequences per forward/backward pass; gradients accumulate up to batch_size.
  std::size_t micro_batch = 4;
  std::size_t max_epochs = 150;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  Ablation ablation;
  double lambda_c = 2.0;
  double lambda_s = 2.0;
  double lambda_t = 0.2;
  bool overlapping = false;  // stride-1 training windows
  std::size_t threads = 1;   // prediction workers
};

struct HistoryRow {
  std::size_t epoch = 0;
  double loss_c = 0.0, loss_s = 0.0, loss_t = 0.0;
  double val_acc = 0.0, val_mf1 = 0.0;
  double val_loss_c = 0.0, val_loss_s = 0.0, val_loss_t = 0.0;
};

struct TrainHistory {
  std::vector<HistoryRow> rows;
  std::size_t best_epoch = 0;
  double best_mf1 = -1.0;

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct SubjectPrediction {
  std::string subject_id;
  std::vector<std::size_t> epoch_index;
  std::vector<Stage> labels;
  std::vector<Stage> preds;
  std::vector<Stage> confusion_argmax;  // SCE auxiliary head
  std::vector<std::uint8_t> transition;  // from labels, per contiguous run
};

struct PredictionSet {
  std::vector<SubjectPrediction> subjects;
  // Mean loss components over all windows (weights as given).
  double loss_c = 0.0, loss_s = 0.0, loss_t = 0.0;

  std::vector<Stage> all_preds() const;
  std::vector<Stage> all_labels() const;
  std::vector<std::uint8_t> all_transitions() const;
  metrics::EvalReport report() const;
};

// Eval-mode inference over every epoch that lies in a run of at least N
// consecutive epochs.
PredictionSet predict(const model::TransSleep& net, const std::vector<SubjectDataset>& subjects,
                      const LossWeights& weights = {}, std::size_t threads = 1);

struct TrainResult {
  std::unique_ptr<model::TransSleep> model;  // best-validation snapshot
  TrainHistory history;
  LossWeights weights;
  std::vector<std::string> warnings;
};

// Stage weights from the epochs of subjects with at least one full window,
// transition weights from the labels of the training windows.
LossWeights loss_weights(const std::vector<SubjectDataset>& subjects, const TrainConfig& cfg,
                         std::size_t sequence_length);

using EpochCallback = std::function<void(const HistoryRow&)>;
// Checked after each pass; returning true ends training early.
using StopCondition = std::function<bool(const HistoryRow&)>;

// Trains a fresh model and returns the snapshot with the best validation
// MF1. Training subjects without a full window are skipped with a warning.
TrainResult train(const std::vector<SubjectDataset>& train_set, const std::vector<SubjectDataset>& val_set,
                  model::ModelConfig model_cfg, const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                  const StopCondition& stop_when = {});

// Parameter names updated by Adam under an ablation.
std::vector<std::string> trainable_names(const model::TransSleep& net, const Ablation& ablation);

}  // namespace transsleep::train
