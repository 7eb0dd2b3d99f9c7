#include "transsleep/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace transsleep::nn {

Tensor ModelParams::add(const std::string& name, Tensor value) {
  if (params_.count(name) != 0) throw ConfigError("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  params_.emplace(name, value);
  return value;
}

ops::BatchNormStats& ModelParams::add_stats(const std::string& name) {
  if (stats_.count(name) != 0) throw ConfigError("duplicate statistics name: " + name);
  return stats_[name];
}

const Tensor& ModelParams::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : params_) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

ModelParams::Snapshot ModelParams::snapshot() const {
  Snapshot snap;
  for (const auto& [name, t] : params_) snap.values[name].assign(t.data().begin(), t.data().end());
  snap.stats = stats_;
  return snap;
}

void ModelParams::restore(const Snapshot& snap) {
  for (auto& [name, t] : params_) {
    const auto& v = snap.values.at(name);
    Tensor handle = t;
    std::copy(v.begin(), v.end(), handle.mutable_data().begin());
  }
  for (auto& [name, s] : stats_) s = snap.stats.at(name);
}

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(data));
}

Linear::Linear(ModelParams& params, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
               bool with_bias)
    : weight_(params.add(name + ".weight", fan_in_uniform({out, in}, in, rng))) {
  if (with_bias) bias_ = params.add(name + ".bias", Tensor::zeros({out}));
}

Tensor Linear::forward(const Tensor& x) const { return ops::linear(x, weight_, bias_); }

Conv1d::Conv1d(ModelParams& params, const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t kernel,
               std::size_t stride, std::mt19937_64& rng)
    : weight_(params.add(name + ".weight", fan_in_uniform({c_out, c_in, kernel}, c_in * kernel, rng))),
      bias_(params.add(name + ".bias", Tensor::zeros({c_out}))),
      stride_(stride),
      padding_((kernel - 1) / 2) {}

Tensor Conv1d::forward(const Tensor& x) const { return ops::conv1d(x, weight_, bias_, stride_, padding_); }

SeparableConv1d::SeparableConv1d(ModelParams& params, const std::string& name, std::size_t c_in, std::size_t c_out,
                                 std::size_t kernel, std::size_t stride, std::mt19937_64& rng)
    : depthwise_(params.add(name + ".depthwise", fan_in_uniform({c_in, 1, kernel}, kernel, rng))),
      pointwise_(params.add(name + ".pointwise", fan_in_uniform({c_out, c_in, 1}, c_in, rng))),
      stride_(stride),
      padding_((kernel - 1) / 2) {}

Tensor SeparableConv1d::forward(const Tensor& x) const {
  return ops::separable_conv1d(x, depthwise_, pointwise_, stride_, padding_);
}

BatchNorm1d::BatchNorm1d(ModelParams& params, const std::string& name, std::size_t channels, double epsilon)
    : gamma_(params.add(name + ".gamma", Tensor::full({channels}, 1.0))),
      beta_(params.add(name + ".beta", Tensor::zeros({channels}))),
      stats_(&params.add_stats(name)),
      epsilon_(epsilon) {}

Tensor BatchNorm1d::forward(const Tensor& x, Mode mode) const {
  return ops::batch_norm1d(x, gamma_, beta_, mode, *stats_, 0.1, epsilon_);
}

Tensor positional_encoding(std::size_t length, std::size_t d) {
  if (d % 2 != 0) throw ConfigError("positional_encoding: model dimension must be even, got " + std::to_string(d));
  std::vector<double> table(length * d);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      table[pos * d + i] = std::sin(angle);
      table[pos * d + i + 1] = std::cos(angle);
    }
  }
  return Tensor::from_data({length, d}, std::move(table));
}

MultiHeadSelfAttention::MultiHeadSelfAttention(ModelParams& params, const std::string& name, std::size_t d,
                                               std::size_t heads, std::mt19937_64& rng)
    : d_(d), heads_(heads) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: model dimension " + std::to_string(d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  q_ = Linear(params, name + ".query", d, d, rng);
  k_ = Linear(params, name + ".key", d, d, rng);
  v_ = Linear(params, name + ".value", d, d, rng);
  o_ = Linear(params, name + ".out", d, d, rng);
}

Tensor MultiHeadSelfAttention::forward(const Tensor& x, AttentionTrace* trace) const {
  if (x.rank() == 2) {
    const Tensor out = forward(ops::reshape(x, {1, x.dim(0), x.dim(1)}), trace);
    return ops::reshape(out, x.shape());
  }
  if (x.rank() != 3 || x.dim(2) != d_) {
    throw ShapeError("attention: expected [B, L, " + std::to_string(d_) + "], got " + shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t len = x.dim(1);
  const std::size_t dh = d_ / heads_;
  auto split_heads = [&](const Tensor& t) {
    const Tensor r = ops::reshape(t, {batch, len, heads_, dh});
    return ops::reshape(ops::permute(r, {0, 2, 1, 3}), {batch * heads_, len, dh});
  };
  const Tensor q = split_heads(q_.forward(x));
  const Tensor k = split_heads(k_.forward(x));
  const Tensor v = split_heads(v_.forward(x));
  const Tensor scores = ops::scale(ops::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor weights = ops::softmax(scores);
  if (trace) trace->weights = weights;
  const Tensor context = ops::bmm(weights, v, false);
  const Tensor merged =
      ops::reshape(ops::permute(ops::reshape(context, {batch, heads_, len, dh}), {0, 2, 1, 3}), {batch, len, d_});
  return o_.forward(merged);
}

Lstm::Lstm(ModelParams& params, const std::string& name, std::size_t input, std::size_t hidden, std::mt19937_64& rng)
    : input_(input), hidden_(hidden) {
  w_ih_ = params.add(name + ".w_ih", fan_in_uniform({4 * hidden, input}, input, rng));
  w_hh_ = params.add(name + ".w_hh", fan_in_uniform({4 * hidden, hidden}, hidden, rng));
  std::vector<double> b(4 * hidden, 0.0);
  for (std::size_t i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;  // forget gate
  bias_ = params.add(name + ".bias", Tensor::from_data({4 * hidden}, std::move(b)));
}

Tensor Lstm::forward(const Tensor& x, bool reverse) const {
  if (x.rank() != 3 || x.dim(2) != input_) {
    throw ShapeError("lstm: expected [B, N, " + std::to_string(input_) + "], got " + shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t steps = x.dim(1);
  const std::size_t h = hidden_;
  // Input projections for every step at once: [B, N, 4H].
  const Tensor projected = ops::linear(x, w_ih_, bias_);
  Tensor hidden = Tensor::zeros({batch, h});
  Tensor cell = Tensor::zeros({batch, h});
  std::vector<Tensor> outputs(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const std::size_t t = reverse ? steps - 1 - i : i;
    const Tensor xt = ops::reshape(ops::slice(projected, 1, t, t + 1), {batch, 4 * h});
    const Tensor gates = ops::add(xt, ops::linear(hidden, w_hh_, std::nullopt));
    const Tensor in_gate = ops::sigmoid(ops::slice(gates, 1, 0, h));
    const Tensor forget_gate = ops::sigmoid(ops::slice(gates, 1, h, 2 * h));
    const Tensor candidate = ops::tanh(ops::slice(gates, 1, 2 * h, 3 * h));
    const Tensor out_gate = ops::sigmoid(ops::slice(gates, 1, 3 * h, 4 * h));
    cell = ops::add(ops::mul(forget_gate, cell), ops::mul(in_gate, candidate));
    hidden = ops::mul(out_gate, ops::tanh(cell));
    outputs[t] = ops::reshape(hidden, {batch, 1, h});
  }
  return ops::concat(outputs, 1);
}

BiLstm::BiLstm(ModelParams& params, const std::string& name, std::size_t input, std::size_t hidden,
               std::mt19937_64& rng)
    : fwd_(params, name + ".forward", input, hidden, rng), bwd_(params, name + ".backward", input, hidden, rng) {}

Tensor BiLstm::forward(const Tensor& x) const {
  if (x.rank() == 2) {
    const Tensor out = forward(ops::reshape(x, {1, x.dim(0), x.dim(1)}));
    return ops::reshape(out, {x.dim(0), out.dim(2)});
  }
  return ops::concat({fwd_.forward(x, false), bwd_.forward(x, true)}, 2);
}

}  // namespace transsleep::nn
