#include "transsleep/metrics.hpp"

#include <stdexcept>

#include "transsleep/model.hpp"

namespace transsleep::metrics {

std::size_t EvalReport::total() const {
  std::size_t n = 0;
  for (const auto& row : confusion) {
    for (std::size_t v : row) n += v;
  }
  return n;
}

Confusion confusion_matrix(const std::vector<Stage>& preds, const std::vector<Stage>& labels) {
  if (preds.size() != labels.size()) {
    throw std::invalid_argument("metrics: " + std::to_string(preds.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  }
  Confusion c{};
  for (std::size_t i = 0; i < preds.size(); ++i) ++c[stage_index(labels[i])][stage_index(preds[i])];
  return c;
}

EvalReport report_from_confusion(const Confusion& confusion) {
  EvalReport r;
  r.confusion = confusion;
  const std::size_t total = r.total();
  if (total == 0) throw std::invalid_argument("metrics: no predictions");
  std::size_t correct = 0;
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < kNumStages; ++c) {
    const std::size_t tp = confusion[c][c];
    std::size_t actual = 0, predicted = 0;
    for (std::size_t k = 0; k < kNumStages; ++k) {
      actual += confusion[c][k];
      predicted += confusion[k][c];
    }
    correct += tp;
    if (actual + predicted == 0) {
      r.warnings.push_back("class " + std::string(stage_name(kAllStages[c])) +
                           " absent from predictions and labels; F1 set to 0");
      r.f1[c] = 0.0;
    } else {
      r.f1[c] = 2.0 * static_cast<double>(tp) / static_cast<double>(actual + predicted);
    }
    f1_sum += r.f1[c];
  }
  r.acc = static_cast<double>(correct) / static_cast<double>(total);
  r.mf1 = f1_sum / static_cast<double>(kNumStages);
  return r;
}

EvalReport compute(const std::vector<Stage>& preds, const std::vector<Stage>& labels) {
  if (preds.empty()) throw std::invalid_argument("metrics: empty prediction sequence");
  return report_from_confusion(confusion_matrix(preds, labels));
}

void transition_analysis(const std::vector<Stage>& preds, const std::vector<Stage>& labels,
                         const std::vector<std::uint8_t>& transition, EvalReport& report) {
  if (preds.size() != labels.size() || transition.size() != labels.size()) {
    throw std::invalid_argument("transition_analysis: length mismatch");
  }
  PartitionStats t, n;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    PartitionStats& p = transition[i] ? t : n;
    ++p.count;
    if (preds[i] != labels[i]) ++p.errors;
  }
  const double total = static_cast<double>(labels.size());
  for (PartitionStats* p : {&t, &n}) {
    p->rate = p->count == 0 ? 0.0 : static_cast<double>(p->errors) / static_cast<double>(p->count);
    p->share = total == 0 ? 0.0 : static_cast<double>(p->count) / total;
  }
  report.transition = t;
  report.non_transition = n;
}

EvalReport transition_analysis(const std::vector<Stage>& preds, const std::vector<Stage>& labels) {
  EvalReport r = compute(preds, labels);
  transition_analysis(preds, labels, model::derive_transition_labels(labels), r);
  return r;
}

}  // namespace transsleep::metrics
