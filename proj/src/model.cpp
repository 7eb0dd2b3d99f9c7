#include "transsleep/model.hpp"

#include <stdexcept>

namespace transsleep::model {

Tensor eta_block(const Tensor& features, const nn::MultiHeadSelfAttention& attention, std::size_t pooled,
                 bool positional, nn::AttentionTrace* trace) {
  if (features.rank() != 3) throw ShapeError("eta_block: expected [B, F, L], got " + shape_str(features.shape()));
  if (features.dim(2) < pooled) {
    throw ShapeError("eta_block: length " + std::to_string(features.dim(2)) + " is shorter than pooled length " +
                     std::to_string(pooled));
  }
  Tensor seq = ops::permute(ops::adaptive_avg_pool(features, pooled), {0, 2, 1});  // [B, P, F]
  if (positional) seq = ops::add_broadcast(seq, nn::positional_encoding(pooled, features.dim(1)));
  return ops::mean_axis(attention.forward(seq, trace), 1);
}

AmfPath::AmfPath(nn::ModelParams& params, const std::string& name, const AmfConfig& cfg, std::size_t spectral_kernel,
                 const std::array<std::size_t, 3>& temporal_kernels, std::mt19937_64& rng)
    : cfg_(cfg),
      spectral_(params, name + ".spec", 1, cfg.f0, spectral_kernel, cfg.stride, rng),
      spectral_bn_(params, name + ".spec_bn", cfg.f0) {
  std::size_t in = cfg.f0;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string idx = std::to_string(i + 1);
    temporal_[i] = nn::SeparableConv1d(params, name + ".sep" + idx, in, cfg.widths[i], temporal_kernels[i],
                                       cfg.stride, rng);
    temporal_bn_[i] = nn::BatchNorm1d(params, name + ".bn" + idx, cfg.widths[i]);
    if (cfg.eta) eta_[i] = nn::MultiHeadSelfAttention(params, name + ".eta" + idx, cfg.widths[i], cfg.heads, rng);
    in = cfg.widths[i];
  }
  const std::size_t width = cfg.path_features();
  fc1_ = nn::Linear(params, name + ".fc1", cfg.eta ? width : cfg.widths[2], width, rng);
  fc2_ = nn::Linear(params, name + ".fc2", width, width, rng);
}

Tensor AmfPath::forward(const Tensor& x, Mode mode, AmfTrace* trace, Tensor* pre_fc) const {
  Tensor h = ops::gelu(spectral_bn_.forward(spectral_.forward(x), mode));
  std::vector<Tensor> taps;
  for (std::size_t i = 0; i < 3; ++i) {
    h = ops::gelu(temporal_bn_[i].forward(temporal_[i].forward(h), mode));
    if (cfg_.eta) {
      nn::AttentionTrace at;
      taps.push_back(eta_block(h, eta_[i], cfg_.pooled_length, cfg_.positional_encoding, trace ? &at : nullptr));
      if (trace) trace->attention.push_back(at.weights);
    }
  }
  const Tensor pooled = cfg_.eta ? ops::concat(taps, 1) : ops::global_avg_pool(h);
  if (pre_fc) *pre_fc = pooled;
  return fc2_.forward(ops::gelu(fc1_.forward(pooled)));
}

Amf::Amf(nn::ModelParams& params, const AmfConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg),
      paths_{AmfPath(params, "amf.pathA", cfg, cfg.spectral_kernels[0], cfg.temporal_kernels_a, rng),
             AmfPath(params, "amf.pathB", cfg, cfg.spectral_kernels[1], cfg.temporal_kernels_b, rng)} {}

Tensor Amf::forward(const Tensor& epochs, Mode mode, AmfTrace* trace) const {
  const auto expected = static_cast<std::size_t>(cfg_.fs * 30.0);
  if (epochs.rank() != 2 || epochs.dim(1) != expected) {
    throw ShapeError("amf: expected [B, " + std::to_string(expected) + "] epochs, got " + shape_str(epochs.shape()));
  }
  const Tensor x = ops::reshape(epochs, {epochs.dim(0), 1, expected});
  return ops::concat({paths_[0].forward(x, mode, trace), paths_[1].forward(x, mode, trace)}, 1);
}

Sce::Sce(nn::ModelParams& params, std::size_t features, std::mt19937_64& rng)
    : g_(params, "sce.g", features, kNumStages, rng), q_(params, "sce.q", kNumStages, features, rng) {}

Tensor Sce::estimate_confusion(const Tensor& f) const { return ops::softmax(g_.forward(f)); }

Tensor Sce::excite(const Tensor& c) const { return ops::sigmoid(q_.forward(c)); }

SceOutput Sce::forward(const Tensor& f) const {
  SceOutput out;
  out.confusion = estimate_confusion(f);
  out.attention = excite(out.confusion);
  out.gated = gate(f, out.attention);
  return out;
}

Tensor gate(const Tensor& f, const Tensor& a) {
  if (f.shape() != a.shape()) {
    throw ShapeError("gate: feature " + shape_str(f.shape()) + " and attention " + shape_str(a.shape()) +
                     " differ");
  }
  return ops::mul(a, f);
}

Ce::Ce(nn::ModelParams& params, std::size_t features, const CeConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  const std::size_t two_h = 2 * cfg.hidden;
  input_ = nn::Linear(params, "ce.input", cfg.concat_inputs ? 2 * features : features, two_h, rng);
  lstm_ = nn::BiLstm(params, "ce.lstm", two_h, cfg.hidden, rng);
  transition_ = nn::Linear(params, "ce.transition", two_h, 2, rng);
  stage_ = nn::Linear(params, "ce.stage", two_h, kNumStages, rng);
}

CeOutput Ce::forward(const Tensor& f, const Tensor& gated, Mode mode, std::mt19937_64& rng) const {
  if (f.rank() != 3 || f.shape() != gated.shape()) {
    throw ShapeError("ce: features " + shape_str(f.shape()) + " and gated features " + shape_str(gated.shape()) +
                     " must share a [B, N, F] shape");
  }
  if (f.dim(1) != cfg_.sequence_length) {
    throw ShapeError("ce: sequence length " + std::to_string(f.dim(1)) + ", expected " +
                     std::to_string(cfg_.sequence_length));
  }
  const Tensor joined = cfg_.concat_inputs ? ops::concat({f, gated}, 2) : ops::add(f, gated);
  const Tensor projected = input_.forward(joined);
  CeOutput out;
  out.hidden = ops::dropout(lstm_.forward(projected), cfg_.dropout, mode, rng);
  out.transition_probs = ops::softmax(transition_.forward(out.hidden));
  const Tensor residual = ops::dropout(ops::add(projected, out.hidden), cfg_.dropout, mode, rng);
  out.stage_probs = ops::softmax(stage_.forward(residual));
  return out;
}

std::vector<std::uint8_t> derive_transition_labels(const std::vector<Stage>& labels) {
  if (labels.empty()) throw std::invalid_argument("derive_transition_labels: empty sequence");
  std::vector<std::uint8_t> out(labels.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool left = i > 0 && labels[i - 1] != labels[i];
    const bool right = i + 1 < labels.size() && labels[i + 1] != labels[i];
    out[i] = (left || right) ? 1 : 0;
  }
  return out;
}

TransSleep::TransSleep(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  std::mt19937_64 rng(seed);
  amf_ = Amf(params_, cfg.amf, rng);
  sce_ = Sce(params_, cfg.amf.features(), rng);
  ce_ = Ce(params_, cfg.amf.features(), cfg.ce, rng);
}

ModelOutput TransSleep::forward(const Tensor& epochs, Mode mode, std::mt19937_64& rng, AmfTrace* trace) const {
  if (epochs.rank() != 3) throw ShapeError("model: expected [B, N, T] epochs, got " + shape_str(epochs.shape()));
  const std::size_t b = epochs.dim(0), n = epochs.dim(1), t = epochs.dim(2);
  const std::size_t feat = cfg_.amf.features();
  const Tensor f = amf_.forward(ops::reshape(epochs, {b * n, t}), mode, trace);
  const SceOutput s = sce_.forward(f);
  ModelOutput out;
  out.features = ops::reshape(f, {b, n, feat});
  out.gated = ops::reshape(s.gated, {b, n, feat});
  out.confusion = ops::reshape(s.confusion, {b, n, kNumStages});
  const CeOutput c = ce_.forward(out.features, out.gated, mode, rng);
  out.stage_probs = c.stage_probs;
  out.transition_probs = c.transition_probs;
  return out;
}

std::vector<std::string> TransSleep::transition_head_names() const { return {"ce.transition.weight", "ce.transition.bias"}; }

}  // namespace transsleep::model
