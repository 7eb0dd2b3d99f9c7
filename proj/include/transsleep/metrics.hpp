#pragma once
// Classification metrics and the transitioning / non-transitioning error split.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "transsleep/dataset.hpp"

namespace transsleep::metrics {

using Confusion = std::array<std::array<std::size_t, kNumStages>, kNumStages>;  // [true][pred]

struct PartitionStats {
  double rate = 0.0;   // misclassified fraction within the partition
  double share = 0.0;  // partition size / total
  std::size_t count = 0;
  std::size_t errors = 0;
};

struct EvalReport {
  double acc = 0.0;
  double mf1 = 0.0;
  std::array<double, kNumStages> f1{};
  Confusion confusion{};
  PartitionStats transition;
  PartitionStats non_transition;
  std::vector<std::string> warnings;

  std::size_t total() const;
};

Confusion confusion_matrix(const std::vector<Stage>& preds, const std::vector<Stage>& labels);
// ACC, per-class one-vs-rest F1 and MF1 from a confusion matrix. A class
// absent from both predictions and labels gets F1 = 0 (with a warning) and
// still counts in the MF1 mean.
EvalReport report_from_confusion(const Confusion& confusion);
EvalReport compute(const std::vector<Stage>& preds, const std::vector<Stage>& labels);

// Split by per-epoch transition flags (1 = transitioning).
void transition_analysis(const std::vector<Stage>& preds, const std::vector<Stage>& labels,
                         const std::vector<std::uint8_t>& transition, EvalReport& report);
// Single contiguous sequence: flags are derived from the labels.
EvalReport transition_analysis(const std::vector<Stage>& preds, const std::vector<Stage>& labels);

}  // namespace transsleep::metrics
