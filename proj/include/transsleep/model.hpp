#pragma once
// The sleep-staging network: multi-scale feature extractor (AMF), stage
// confusion estimator (SCE) and context encoder (CE).

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "transsleep/dataset.hpp"
#include "transsleep/nn.hpp"

namespace transsleep::model {

using ops::Mode;

struct AmfConfig {
  double fs = 100.0;
  std::size_t stride = 2;
  // Path A uses the long spectral kernel (2 s), path B the short one (0.5 s).
  std::array<std::size_t, 2> spectral_kernels{200, 50};
  std::array<std::size_t, 3> temporal_kernels_a{11, 7, 3};
  std::array<std::size_t, 3> temporal_kernels_b{15, 9, 5};
  std::size_t f0 = 4;
  std::array<std::size_t, 3> widths{16, 32, 64};
  std::size_t heads = 4;
  std::size_t pooled_length = 16;
  bool positional_encoding = true;
  // false: global average pooling of the last layer instead of the
  // attention taps (ablation Case I).
  bool eta = true;

  std::size_t path_features() const { return widths[0] + widths[1] + widths[2]; }
  std::size_t features() const { return 2 * path_features(); }
};

struct CeConfig {
  std::size_t hidden = 128;  // per direction
  std::size_t sequence_length = 25;
  double dropout = 0.5;
  // Concatenate f and the gated feature per step (448 wide), or add them.
  bool concat_inputs = true;
};

struct ModelConfig {
  AmfConfig amf;
  CeConfig ce;
};

struct AmfTrace {
  // Attention weights of each tap, path A taps first: [B * heads, P, P].
  std::vector<Tensor> attention;
};

// features [B, F_k, L] -> [B, F_k]: adaptive pooling to `pooled` steps,
// positional encoding, self-attention, mean over the pooled steps.
Tensor eta_block(const Tensor& features, const nn::MultiHeadSelfAttention& attention, std::size_t pooled,
                 bool positional, nn::AttentionTrace* trace = nullptr);

class AmfPath {
 public:
  AmfPath() = default;
  AmfPath(nn::ModelParams& params, const std::string& name, const AmfConfig& cfg, std::size_t spectral_kernel,
          const std::array<std::size_t, 3>& temporal_kernels, std::mt19937_64& rng);
  // x [B, 1, 3000] -> [B, path_features]. `pre_fc`, when given, receives the
  // concatenated multi-scale vector before the two dense layers.
  Tensor forward(const Tensor& x, Mode mode, AmfTrace* trace = nullptr, Tensor* pre_fc = nullptr) const;

 private:
  AmfConfig cfg_;
  nn::Conv1d spectral_;
  nn::BatchNorm1d spectral_bn_;
  std::array<nn::SeparableConv1d, 3> temporal_;
  std::array<nn::BatchNorm1d, 3> temporal_bn_;
  std::array<nn::MultiHeadSelfAttention, 3> eta_;
  nn::Linear fc1_, fc2_;
};

class Amf {
 public:
  Amf() = default;
  Amf(nn::ModelParams& params, const AmfConfig& cfg, std::mt19937_64& rng);
  // epochs [B, 3000] -> f [B, 224]
  Tensor forward(const Tensor& epochs, Mode mode, AmfTrace* trace = nullptr) const;
  const AmfPath& path(std::size_t i) const { return paths_.at(i); }

 private:
  AmfConfig cfg_;
  std::array<AmfPath, 2> paths_;
};

struct SceOutput {
  Tensor confusion;  // c = softmax(g(f)), [..., 5]
  Tensor attention;  // a = sigmoid(q(c)), [..., F]
  Tensor gated;      // a * f
};

class Sce {
 public:
  Sce() = default;
  Sce(nn::ModelParams& params, std::size_t features, std::mt19937_64& rng);
  Tensor estimate_confusion(const Tensor& f) const;
  Tensor excite(const Tensor& c) const;
  SceOutput forward(const Tensor& f) const;
  const nn::Linear& squeeze() const { return g_; }
  const nn::Linear& expand() const { return q_; }

 private:
  nn::Linear g_, q_;
};

// Elementwise a * f with a shape check.
Tensor gate(const Tensor& f, const Tensor& a);

struct CeOutput {
  Tensor stage_probs;       // [B, N, 5]
  Tensor transition_probs;  // [B, N, 2]
  Tensor hidden;            // [B, N, 2H]
};

class Ce {
 public:
  Ce() = default;
  Ce(nn::ModelParams& params, std::size_t features, const CeConfig& cfg, std::mt19937_64& rng);
  // f, gated: [B, N, F]
  CeOutput forward(const Tensor& f, const Tensor& gated, Mode mode, std::mt19937_64& rng) const;
  const nn::BiLstm& lstm() const { return lstm_; }

 private:
  CeConfig cfg_;
  nn::Linear input_, transition_, stage_;
  nn::BiLstm lstm_;
};

// 1 marks an epoch whose stage differs from an existing neighbour.
std::vector<std::uint8_t> derive_transition_labels(const std::vector<Stage>& labels);

struct ModelOutput {
  Tensor stage_probs;       // [B, N, 5]
  Tensor transition_probs;  // [B, N, 2]
  Tensor confusion;         // [B, N, 5]
  Tensor features;          // [B, N, F]
  Tensor gated;             // [B, N, F]
};

class TransSleep {
 public:
  TransSleep(const ModelConfig& cfg, std::uint64_t seed);
  TransSleep(const TransSleep&) = delete;
  TransSleep& operator=(const TransSleep&) = delete;

  // epochs [B, N, 3000] -> per-step probabilities. `rng` drives dropout.
  ModelOutput forward(const Tensor& epochs, Mode mode, std::mt19937_64& rng, AmfTrace* trace = nullptr) const;

  const ModelConfig& config() const { return cfg_; }
  nn::ModelParams& params() { return params_; }
  const nn::ModelParams& params() const { return params_; }
  const Amf& amf() const { return amf_; }
  const Sce& sce() const { return sce_; }
  const Ce& ce() const { return ce_; }
  // Names of the transition head parameters.
  std::vector<std::string> transition_head_names() const;

 private:
  ModelConfig cfg_;
  nn::ModelParams params_;
  Amf amf_;
  Sce sce_;
  Ce ce_;
};

}  // namespace transsleep::model
