#include "transsleep/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace transsleep::train {

namespace {

Tensor row_weights(const std::vector<std::size_t>& labels, const std::vector<double>& w) {
  std::vector<double> v(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= w.size()) throw std::invalid_argument("loss: label " + std::to_string(labels[i]) + " out of range");
    v[i] = w[labels[i]];
  }
  return Tensor::from_data({labels.size()}, std::move(v));
}

void check_rows(const Tensor& probs, const std::vector<std::size_t>& labels, const char* what) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw ShapeError(std::string(what) + ": expected [" + std::to_string(labels.size()) + ", C] probabilities, got " +
                     shape_str(probs.shape()));
  }
}

std::size_t argmax_row(const double* p, std::size_t n) { return static_cast<std::size_t>(std::max_element(p, p + n) - p); }

}  // namespace

std::vector<double> class_weights(const std::vector<std::size_t>& counts, const std::vector<std::string>& class_names) {
  if (counts.empty()) throw std::invalid_argument("class_weights: no classes");
  double total = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
      throw std::invalid_argument("class_weights: class " + name + " has no training samples");
    }
    total += static_cast<double>(counts[c]);
  }
  std::vector<double> w(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    w[c] = total / (static_cast<double>(counts.size()) * static_cast<double>(counts[c]));
  }
  return w;
}

double wce(std::size_t y, const std::vector<double>& p, const std::vector<double>& w) {
  return -w.at(y) * std::log(std::max(p.at(y), 1e-12));
}

double wcs(std::size_t y, const std::vector<double>& p, const std::vector<double>& w) {
  double norm = 0.0;
  for (double v : p) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) throw std::invalid_argument("wcs: zero-norm probability vector");
  return w.at(y) * (1.0 - p.at(y) / norm);
}

Tensor wce_loss(const Tensor& probs, const std::vector<std::size_t>& labels, const std::vector<double>& w) {
  check_rows(probs, labels, "wce");
  const Tensor picked = ops::log(ops::gather_last(probs, labels));
  const double m = static_cast<double>(labels.size());
  return ops::scale(ops::sum(ops::mul(picked, row_weights(labels, w))), -1.0 / m);
}

Tensor wcs_loss(const Tensor& probs, const std::vector<std::size_t>& labels, const std::vector<double>& w) {
  check_rows(probs, labels, "wcs");
  const Tensor norm = ops::sqrt(ops::sum_axis(ops::mul(probs, probs), 1));
  for (double v : norm.data()) {
    if (v == 0.0) throw std::invalid_argument("wcs: zero-norm probability vector");
  }
  const Tensor cosine = ops::div(ops::gather_last(probs, labels), norm);
  const Tensor dissimilarity = ops::add_scalar(ops::scale(cosine, -1.0), 1.0);
  const double m = static_cast<double>(labels.size());
  return ops::scale(ops::sum(ops::mul(dissimilarity, row_weights(labels, w))), 1.0 / m);
}

LossTerms total_loss(const model::ModelOutput& out, const std::vector<std::size_t>& stages,
                     const std::vector<std::size_t>& transitions, const LossWeights& weights,
                     const Ablation& ablation) {
  const std::size_t m = stages.size();
  const Tensor stage_probs = ops::reshape(out.stage_probs, {m, kNumStages});
  Tensor lc = ops::add(wce_loss(stage_probs, stages, weights.stage),
                       ops::scale(wcs_loss(stage_probs, stages, weights.stage), weights.lambda_c));
  LossTerms terms;
  terms.loss_c = lc.item();
  Tensor total = lc;
  if (ablation.aux_stage) {
    const Tensor ls = wce_loss(ops::reshape(out.confusion, {m, kNumStages}), stages, weights.stage);
    terms.loss_s = ls.item();
    total = ops::add(total, ops::scale(ls, weights.lambda_s));
  }
  if (ablation.aux_transition) {
    const Tensor lt = wce_loss(ops::reshape(out.transition_probs, {m, 2}), transitions, weights.transition);
    terms.loss_t = lt.item();
    total = ops::add(total, ops::scale(lt, weights.lambda_t));
  }
  terms.total = total;
  return terms;
}

std::vector<SequenceRef> make_sequences(const std::vector<SubjectDataset>& subjects, std::size_t length,
                                        std::size_t stride, bool cover_tail) {
  if (length == 0 || stride == 0) throw ConfigError("make_sequences: length and stride must be positive");
  std::vector<SequenceRef> out;
  for (const auto& ds : subjects) {
    const auto& e = ds.epochs;
    std::size_t run_start = 0;
    for (std::size_t i = 1; i <= e.size(); ++i) {
      if (i < e.size() && e[i].epoch_index == e[i - 1].epoch_index + 1) continue;
      const std::size_t run = i - run_start;
      if (run >= length) {
        std::size_t s = 0;
        for (; s + length <= run; s += stride) out.push_back({&ds, run_start + s});
        const std::size_t last = s - stride;
        if (cover_tail && last + length < run) out.push_back({&ds, run_start + run - length});
      }
      run_start = i;
    }
  }
  return out;
}

Batch make_batch(const std::vector<SequenceRef>& refs, std::size_t length) {
  Batch b;
  std::vector<double> data;
  data.reserve(refs.size() * length * kEpochSamples);
  for (const auto& r : refs) {
    std::vector<Stage> window;
    for (std::size_t k = 0; k < length; ++k) {
      const EpochRecord& e = r.subject->epochs.at(r.start + k);
      data.insert(data.end(), e.samples.begin(), e.samples.end());
      window.push_back(e.label);
      b.stages.push_back(stage_index(e.label));
    }
    for (std::uint8_t t : model::derive_transition_labels(window)) b.transitions.push_back(t);
  }
  b.epochs = Tensor::from_data({refs.size(), length, kEpochSamples}, std::move(data));
  return b;
}

std::string TrainHistory::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "epoch,loss_c,loss_s,loss_t,val_acc,val_mf1,val_loss_c,val_loss_s,val_loss_t\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.loss_c << ',' << r.loss_s << ',' << r.loss_t << ',' << r.val_acc << ',' << r.val_mf1
        << ',' << r.val_loss_c << ',' << r.val_loss_s << ',' << r.val_loss_t << '\n';
  }
  return out.str();
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_csv();
}

std::vector<Stage> PredictionSet::all_preds() const {
  std::vector<Stage> out;
  for (const auto& s : subjects) out.insert(out.end(), s.preds.begin(), s.preds.end());
  return out;
}

std::vector<Stage> PredictionSet::all_labels() const {
  std::vector<Stage> out;
  for (const auto& s : subjects) out.insert(out.end(), s.labels.begin(), s.labels.end());
  return out;
}

std::vector<std::uint8_t> PredictionSet::all_transitions() const {
  std::vector<std::uint8_t> out;
  for (const auto& s : subjects) out.insert(out.end(), s.transition.begin(), s.transition.end());
  return out;
}

metrics::EvalReport PredictionSet::report() const {
  const auto preds = all_preds();
  const auto labels = all_labels();
  metrics::EvalReport r = metrics::compute(preds, labels);
  metrics::transition_analysis(preds, labels, all_transitions(), r);
  return r;
}

PredictionSet predict(const model::TransSleep& net, const std::vector<SubjectDataset>& subjects,
                      const LossWeights& weights, std::size_t threads) {
  const std::size_t n = net.config().ce.sequence_length;
  const std::vector<SequenceRef> windows = make_sequences(subjects, n, n, true);
  constexpr std::size_t kChunk = 8;
  const std::size_t chunks = (windows.size() + kChunk - 1) / kChunk;

  struct ChunkResult {
    std::vector<std::size_t> stage, confusion;
    double loss_c = 0, loss_s = 0, loss_t = 0;
  };
  std::vector<ChunkResult> results(chunks);
  auto run = [&](std::size_t worker, std::size_t workers) {
    NoGradGuard guard;
    std::mt19937_64 rng(worker);
    for (std::size_t c = worker; c < chunks; c += workers) {
      const std::vector<SequenceRef> refs(windows.begin() + static_cast<std::ptrdiff_t>(c * kChunk),
                                          windows.begin() + static_cast<std::ptrdiff_t>(std::min(windows.size(), (c + 1) * kChunk)));
      const Batch batch = make_batch(refs, n);
      const model::ModelOutput out = net.forward(batch.epochs, ops::Mode::kEval, rng);
      const LossTerms terms = total_loss(out, batch.stages, batch.transitions, weights, Ablation::full());
      ChunkResult& r = results[c];
      const double w = static_cast<double>(refs.size());
      r.loss_c = terms.loss_c * w;
      r.loss_s = terms.loss_s * w;
      r.loss_t = terms.loss_t * w;
      for (std::size_t i = 0; i < batch.stages.size(); ++i) {
        r.stage.push_back(argmax_row(out.stage_probs.data().data() + i * kNumStages, kNumStages));
        r.confusion.push_back(argmax_row(out.confusion.data().data() + i * kNumStages, kNumStages));
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, chunks));
  if (workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w, workers);
    for (auto& t : pool) t.join();
  }

  // Later windows overwrite the overlap of tail windows, in window order.
  std::map<const SubjectDataset*, std::pair<std::vector<int>, std::vector<int>>> assigned;
  PredictionSet set;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto& r = results[w / kChunk];
    const std::size_t base = (w % kChunk) * n;
    auto& [stage, conf] = assigned[windows[w].subject];
    if (stage.empty()) {
      stage.assign(windows[w].subject->epochs.size(), -1);
      conf.assign(windows[w].subject->epochs.size(), -1);
    }
    for (std::size_t k = 0; k < n; ++k) {
      stage[windows[w].start + k] = static_cast<int>(r.stage[base + k]);
      conf[windows[w].start + k] = static_cast<int>(r.confusion[base + k]);
    }
  }
  double windows_total = 0.0;
  for (const auto& r : results) {
    set.loss_c += r.loss_c;
    set.loss_s += r.loss_s;
    set.loss_t += r.loss_t;
  }
  windows_total = static_cast<double>(windows.size());
  if (windows_total > 0) {
    set.loss_c /= windows_total;
    set.loss_s /= windows_total;
    set.loss_t /= windows_total;
  }

  for (const auto& ds : subjects) {
    auto it = assigned.find(&ds);
    if (it == assigned.end()) continue;
    const auto& [stage, conf] = it->second;
    SubjectPrediction p;
    p.subject_id = ds.subject_id;
    std::vector<Stage> run_labels;
    auto flush = [&] {
      if (run_labels.empty()) return;
      for (std::uint8_t t : model::derive_transition_labels(run_labels)) p.transition.push_back(t);
      run_labels.clear();
    };
    for (std::size_t i = 0; i < ds.epochs.size(); ++i) {
      if (stage[i] < 0) {
        flush();
        continue;
      }
      if (!p.epoch_index.empty() && ds.epochs[i].epoch_index != p.epoch_index.back() + 1) flush();
      p.epoch_index.push_back(ds.epochs[i].epoch_index);
      p.labels.push_back(ds.epochs[i].label);
      p.preds.push_back(kAllStages[static_cast<std::size_t>(stage[i])]);
      p.confusion_argmax.push_back(kAllStages[static_cast<std::size_t>(conf[i])]);
      run_labels.push_back(ds.epochs[i].label);
    }
    flush();
    set.subjects.push_back(std::move(p));
  }
  return set;
}

std::vector<std::string> trainable_names(const model::TransSleep& net, const Ablation& ablation) {
  const auto excluded = net.transition_head_names();
  std::vector<std::string> names;
  for (const auto& [name, t] : net.params().params()) {
    if (!ablation.aux_transition && std::find(excluded.begin(), excluded.end(), name) != excluded.end()) continue;
    names.push_back(name);
  }
  return names;
}

LossWeights loss_weights(const std::vector<SubjectDataset>& subjects, const TrainConfig& cfg,
                         std::size_t sequence_length) {
  const std::size_t n = sequence_length;
  std::vector<std::size_t> stage_counts(kNumStages, 0), transition_counts(2, 0);
  for (const auto& ds : subjects) {
    if (make_sequences({ds}, n, n).empty()) continue;
    for (const auto& e : ds.epochs) ++stage_counts[stage_index(e.label)];
  }
  for (const auto& ref : make_sequences(subjects, n, cfg.overlapping ? 1 : n)) {
    std::vector<Stage> window;
    for (std::size_t k = 0; k < n; ++k) window.push_back(ref.subject->epochs[ref.start + k].label);
    for (std::uint8_t t : model::derive_transition_labels(window)) ++transition_counts[t];
  }
  std::vector<std::string> names;
  for (Stage s : kAllStages) names.emplace_back(stage_name(s));
  LossWeights weights;
  weights.lambda_c = cfg.lambda_c;
  weights.lambda_s = cfg.lambda_s;
  weights.lambda_t = cfg.lambda_t;
  weights.stage = class_weights(stage_counts, names);
  weights.transition = class_weights(transition_counts, {"non-transition", "transition"});
  return weights;
}

TrainResult train(const std::vector<SubjectDataset>& train_set, const std::vector<SubjectDataset>& val_set,
                  model::ModelConfig model_cfg, const TrainConfig& cfg, const EpochCallback& on_epoch,
                  const StopCondition& stop_when) {
  if (train_set.empty()) throw std::invalid_argument("train: no training subjects");
  if (val_set.empty()) throw std::invalid_argument("train: no validation subjects");
  if (cfg.patience >= cfg.max_epochs) throw ConfigError("train: patience must be smaller than max_epochs");
  if (cfg.batch_size == 0 || cfg.micro_batch == 0) throw ConfigError("train: batch sizes must be positive");
  model_cfg.amf.eta = cfg.ablation.eta;
  const std::size_t n = model_cfg.ce.sequence_length;

  TrainResult result;
  std::vector<SubjectDataset> usable;
  for (const auto& ds : train_set) {
    if (make_sequences({ds}, n, n).empty()) {
      result.warnings.push_back("skipping training subject " + ds.subject_id + ": fewer than " + std::to_string(n) +
                                " consecutive epochs");
    } else {
      usable.push_back(ds);
    }
  }
  const std::vector<SequenceRef> sequences = make_sequences(usable, n, cfg.overlapping ? 1 : n);
  if (sequences.empty()) throw std::invalid_argument("train: no training sequences");

  result.weights = loss_weights(usable, cfg, n);
  const LossWeights& weights = result.weights;

  result.model = std::make_unique<model::TransSleep>(model_cfg, cfg.seed);
  model::TransSleep& net = *result.model;
  const std::vector<std::string> trainable = trainable_names(net, cfg.ablation);
  optim::AdamState adam;
  adam.config = cfg.adam;
  std::mt19937_64 rng(cfg.seed ^ 0x5eed5eed5eedULL);

  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), 0);
  nn::ModelParams::Snapshot best;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    HistoryRow row;
    row.epoch = epoch;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      const double batch_len = static_cast<double>(b1 - b0);
      net.params().zero_grad();
      for (std::size_t m0 = b0; m0 < b1; m0 += cfg.micro_batch) {
        const std::size_t m1 = std::min(b1, m0 + cfg.micro_batch);
        std::vector<SequenceRef> refs;
        for (std::size_t i = m0; i < m1; ++i) refs.push_back(sequences[order[i]]);
        const Batch batch = make_batch(refs, n);
        const model::ModelOutput out = net.forward(batch.epochs, ops::Mode::kTrain, rng);
        const LossTerms terms = total_loss(out, batch.stages, batch.transitions, weights, cfg.ablation);
        const double share = static_cast<double>(m1 - m0) / batch_len;
        ops::scale(terms.total, share).backward();
        const double frac = static_cast<double>(m1 - m0) / static_cast<double>(order.size());
        row.loss_c += terms.loss_c * frac;
        row.loss_s += terms.loss_s * frac;
        row.loss_t += terms.loss_t * frac;
      }
      optim::adam_step(net.params(), adam, trainable);
    }

    const PredictionSet val = predict(net, val_set, weights, cfg.threads);
    if (val.subjects.empty()) throw std::invalid_argument("train: validation subjects have no full window");
    const metrics::EvalReport report = val.report();
    row.val_acc = report.acc;
    row.val_mf1 = report.mf1;
    row.val_loss_c = val.loss_c;
    row.val_loss_s = val.loss_s;
    row.val_loss_t = val.loss_t;
    result.history.rows.push_back(row);
    if (on_epoch) on_epoch(row);

    if (report.mf1 > result.history.best_mf1) {
      result.history.best_mf1 = report.mf1;
      result.history.best_epoch = epoch;
      best = net.params().snapshot();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
    if (stop_when && stop_when(row)) break;
  }
  net.params().restore(best);
  return result;
}

}  // namespace transsleep::train
