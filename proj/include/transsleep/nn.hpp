#pragma once
// Layers built from ops, plus the named parameter store they register into.

#include <cstddef>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "transsleep/ops.hpp"
#include "transsleep/tensor.hpp"

namespace transsleep::nn {

using ops::Mode;

// Every trainable tensor of a model, addressable by hierarchical name
// ("amf.pathA.spec.weight"), plus batch-norm running statistics.
class ModelParams {
 public:
  // Registers a new trainable leaf; names must be unique.
  Tensor add(const std::string& name, Tensor value);
  ops::BatchNormStats& add_stats(const std::string& name);

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  std::map<std::string, ops::BatchNormStats>& stats() { return stats_; }
  const std::map<std::string, ops::BatchNormStats>& stats() const { return stats_; }

  std::size_t parameter_count() const;
  void zero_grad();
  // Deep copy of every value (for best-snapshot bookkeeping).
  struct Snapshot {
    std::map<std::string, std::vector<double>> values;
    std::map<std::string, ops::BatchNormStats> stats;
  };
  Snapshot snapshot() const;
  void restore(const Snapshot& snap);

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, ops::BatchNormStats> stats_;
};

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ModelParams& params, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
         bool with_bias = true);
  Tensor forward(const Tensor& x) const;
  const Tensor& weight() const { return weight_; }
  const std::optional<Tensor>& bias() const { return bias_; }

 private:
  Tensor weight_;
  std::optional<Tensor> bias_;
};

class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ModelParams& params, const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t kernel,
         std::size_t stride, std::mt19937_64& rng);
  // "Same"-style padding (kernel-1)/2, so output length is ceil-ish L/stride.
  Tensor forward(const Tensor& x) const;

 private:
  Tensor weight_, bias_;
  std::size_t stride_ = 1, padding_ = 0;
};

class SeparableConv1d {
 public:
  SeparableConv1d() = default;
  SeparableConv1d(ModelParams& params, const std::string& name, std::size_t c_in, std::size_t c_out,
                  std::size_t kernel, std::size_t stride, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;

 private:
  Tensor depthwise_, pointwise_;
  std::size_t stride_ = 1, padding_ = 0;
};

class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  BatchNorm1d(ModelParams& params, const std::string& name, std::size_t channels, double epsilon = 1e-5);
  Tensor forward(const Tensor& x, Mode mode) const;

 private:
  Tensor gamma_, beta_;
  ops::BatchNormStats* stats_ = nullptr;
  double epsilon_ = 1e-5;
};

// Sinusoidal table [length, d]: sin on even columns, cos on odd columns,
// wavelength 10000^(2i/d).
Tensor positional_encoding(std::size_t length, std::size_t d);

struct AttentionTrace {
  // [batch * heads, L, L] row-stochastic weights of the last forward call.
  Tensor weights;
};

class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ModelParams& params, const std::string& name, std::size_t d, std::size_t heads,
                         std::mt19937_64& rng);
  // x [L, d] or [B, L, d] -> same shape.
  Tensor forward(const Tensor& x, AttentionTrace* trace = nullptr) const;
  std::size_t heads() const { return heads_; }
  const Linear& query() const { return q_; }
  const Linear& key() const { return k_; }
  const Linear& value() const { return v_; }
  const Linear& output() const { return o_; }

 private:
  Linear q_, k_, v_, o_;
  std::size_t d_ = 0, heads_ = 1;
};

// Single-direction LSTM with zero initial state. Gate order in the stacked
// weights is (input, forget, candidate, output).
class Lstm {
 public:
  Lstm() = default;
  Lstm(ModelParams& params, const std::string& name, std::size_t input, std::size_t hidden, std::mt19937_64& rng);
  // x [B, N, input] -> [B, N, hidden]; reverse runs from step N-1 down to 0
  // and writes outputs back at their original positions.
  Tensor forward(const Tensor& x, bool reverse) const;
  std::size_t hidden() const { return hidden_; }
  const Tensor& input_weight() const { return w_ih_; }
  const Tensor& hidden_weight() const { return w_hh_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor w_ih_, w_hh_, bias_;
  std::size_t input_ = 0, hidden_ = 0;
};

class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(ModelParams& params, const std::string& name, std::size_t input, std::size_t hidden, std::mt19937_64& rng);
  // x [B, N, input] or [N, input] -> [..., N, 2*hidden] (forward half first).
  Tensor forward(const Tensor& x) const;
  const Lstm& forward_cell() const { return fwd_; }
  const Lstm& backward_cell() const { return bwd_; }

 private:
  Lstm fwd_, bwd_;
};

}  // namespace transsleep::nn
