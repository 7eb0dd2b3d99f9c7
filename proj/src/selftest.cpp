#include "transsleep/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "transsleep/checkpoint.hpp"
#include "transsleep/gradcheck.hpp"
#include "transsleep/kernels.hpp"
#include "transsleep/metrics.hpp"
#include "transsleep/model.hpp"
#include "transsleep/train.hpp"

namespace transsleep::selftest {

namespace {

constexpr double kLayerTolerance = 1e-4;
constexpr double kLossTolerance = 1e-3;

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v), grad);
}

// Random fixed projection to a scalar so every output element matters.
Tensor project(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ops::sum(ops::mul(y, uniform(y.shape(), rng, -1.0, 1.0, false)));
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

Check grad_case(const std::string& name, const std::function<Tensor()>& fn, const std::vector<Tensor>& inputs,
                double tol = kLayerTolerance) {
  const auto r = grad_check([&] { return project(fn(), 17); }, inputs);
  return {name, r.max_relative_error < tol, "max rel err " + fmt(r.max_relative_error) + " over " +
                                                std::to_string(r.checked) + " coords"};
}

model::ModelConfig toy_config() {
  model::ModelConfig cfg;
  cfg.amf.f0 = 2;
  cfg.amf.widths = {4, 4, 8};
  cfg.amf.heads = 2;
  cfg.ce.hidden = 4;
  cfg.ce.sequence_length = 4;
  cfg.ce.dropout = 0.0;
  return cfg;
}

std::vector<Stage> random_stages(std::mt19937_64& rng, std::size_t n, unsigned classes = 5) {
  std::vector<Stage> out(n);
  for (auto& s : out) s = static_cast<Stage>(rng() % classes);
  return out;
}

}  // namespace

std::vector<Check> layer_gradient_checks(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Check> out;
  auto r = [&](Shape s, double lo = -1.0, double hi = 1.0) { return uniform(std::move(s), rng, lo, hi); };

  {
    Tensor a = r({3, 4}), b = r({3, 4}), pos = r({3, 4}, 0.5, 2.0), v = r({4});
    out.push_back(grad_case("add", [&] { return ops::add(a, b); }, {a, b}));
    out.push_back(grad_case("sub", [&] { return ops::sub(a, b); }, {a, b}));
    out.push_back(grad_case("mul", [&] { return ops::mul(a, b); }, {a, b}));
    out.push_back(grad_case("div", [&] { return ops::div(a, pos); }, {a, pos}));
    out.push_back(grad_case("add_broadcast", [&] { return ops::add_broadcast(a, v); }, {a, v}));
    out.push_back(grad_case("scale", [&] { return ops::scale(a, -1.7); }, {a}));
    out.push_back(grad_case("add_scalar", [&] { return ops::add_scalar(a, 0.3); }, {a}));
    out.push_back(grad_case("log", [&] { return ops::log(pos); }, {pos}));
    out.push_back(grad_case("sqrt", [&] { return ops::sqrt(pos); }, {pos}));
    out.push_back(grad_case("sigmoid", [&] { return ops::sigmoid(a); }, {a}));
    out.push_back(grad_case("tanh", [&] { return ops::tanh(a); }, {a}));
    out.push_back(grad_case("relu", [&] { return ops::relu(a); }, {a}));
    out.push_back(grad_case("gelu", [&] { return ops::gelu(a); }, {a}));
    out.push_back(grad_case("softmax", [&] { return ops::softmax(a); }, {a}));
    out.push_back(grad_case("sum", [&] { return ops::scale(ops::sum(a), 1.0); }, {a}));
    out.push_back(grad_case("mean", [&] { return ops::mean(a); }, {a}));
    out.push_back(grad_case("sum_axis", [&] { return ops::sum_axis(a, 0); }, {a}));
    out.push_back(grad_case("mean_axis", [&] { return ops::mean_axis(a, 1); }, {a}));
    out.push_back(grad_case("reshape", [&] { return ops::reshape(a, {2, 6}); }, {a}));
    out.push_back(grad_case("transpose", [&] { return ops::transpose(a); }, {a}));
    out.push_back(grad_case("concat", [&] { return ops::concat({a, b}, 1); }, {a, b}));
    out.push_back(grad_case("slice", [&] { return ops::slice(a, 1, 1, 3); }, {a}));
    out.push_back(grad_case("gather_last", [&] { return ops::gather_last(a, {3, 0, 2}); }, {a}));
  }
  {
    Tensor x = r({2, 3, 4});
    out.push_back(grad_case("permute", [&] { return ops::permute(x, {2, 0, 1}); }, {x}));
    Tensor w = r({5, 4}), bias = r({5});
    out.push_back(grad_case("linear", [&] { return ops::linear(x, w, bias); }, {x, w, bias}));
    Tensor m1 = r({3, 4}), m2 = r({4, 2});
    out.push_back(grad_case("matmul", [&] { return ops::matmul(m1, m2); }, {m1, m2}));
    Tensor b1 = r({2, 3, 4}), b2 = r({2, 4, 5}), b3 = r({2, 5, 4});
    out.push_back(grad_case("bmm", [&] { return ops::bmm(b1, b2, false); }, {b1, b2}));
    out.push_back(grad_case("bmm_transposed", [&] { return ops::bmm(b1, b3, true); }, {b1, b3}));
  }
  {
    Tensor x = r({2, 4, 11}), w = r({6, 2, 3}), bias = r({6});
    out.push_back(grad_case("conv1d", [&] { return ops::conv1d(x, w, bias, 2, 1, 2); }, {x, w, bias}));
    Tensor dw = r({4, 1, 5}), pw = r({3, 4, 1});
    out.push_back(grad_case("separable_conv1d", [&] { return ops::separable_conv1d(x, dw, pw, 2, 2); }, {x, dw, pw}));
    Tensor gamma = r({4}, 0.5, 1.5), beta = r({4});
    out.push_back(grad_case(
        "batch_norm1d",
        [&] {
          ops::BatchNormStats stats;
          return ops::batch_norm1d(x, gamma, beta, ops::Mode::kTrain, stats);
        },
        {x, gamma, beta}));
    out.push_back(grad_case("global_avg_pool", [&] { return ops::global_avg_pool(x); }, {x}));
    out.push_back(grad_case("adaptive_avg_pool", [&] { return ops::adaptive_avg_pool(x, 4); }, {x}));
    out.push_back(grad_case(
        "dropout",
        [&] {
          std::mt19937_64 mask(3);
          return ops::dropout(x, 0.4, ops::Mode::kTrain, mask);
        },
        {x}));
  }
  {
    nn::ModelParams params;
    nn::MultiHeadSelfAttention mha(params, "mha", 4, 2, rng);
    Tensor x = r({2, 5, 4});
    std::vector<Tensor> inputs{x};
    for (const auto& [name, t] : params.params()) {
      // Adding a constant to every key shifts all scores of a query equally,
      // so the key bias has an identically zero gradient.
      if (name != "mha.key.bias") inputs.push_back(t);
    }
    out.push_back(grad_case("multi_head_self_attention", [&] { return mha.forward(x); }, inputs));
  }
  {
    nn::ModelParams params;
    nn::BiLstm lstm(params, "lstm", 3, 3, rng);
    Tensor x = r({2, 4, 3});
    std::vector<Tensor> inputs{x};
    for (const auto& [name, t] : params.params()) inputs.push_back(t);
    out.push_back(grad_case("bidirectional_lstm", [&] { return lstm.forward(x); }, inputs));
  }
  return out;
}

Check full_loss_gradient_check(std::uint64_t seed) {
  model::TransSleep net(toy_config(), seed);
  std::mt19937_64 rng(seed + 1);
  const Tensor x = uniform({2, 4, 3000}, rng, -1.0, 1.0, false);
  const std::vector<std::size_t> y{0, 0, 1, 1, 4, 4, 4, 2};
  const std::vector<std::size_t> yt{0, 1, 1, 0, 0, 0, 1, 1};
  train::LossWeights w;
  w.stage = {1.2, 0.8, 1.5, 1.0, 0.7};
  w.transition = {0.6, 1.4};
  auto loss = [&] {
    std::mt19937_64 drop(0);
    return train::total_loss(net.forward(x, ops::Mode::kTrain, drop), y, yt, w, train::Ablation::full()).total;
  };
  // Conv biases feeding batch norm and attention key biases cancel exactly;
  // their gradients are checked for vanishing instead.
  std::vector<Tensor> inputs, structural_zero;
  for (const auto& [name, t] : net.params().params()) {
    (name.ends_with(".spec.bias") || name.ends_with(".key.bias") ? structural_zero : inputs).push_back(t);
  }
  const auto r = grad_check(loss, inputs, 1e-4, 3, seed);
  double zero_max = 0.0;
  for (const Tensor& t : structural_zero) {
    for (double g : t.grad()) zero_max = std::max(zero_max, std::abs(g));
  }
  return {"full_loss", r.max_relative_error < kLossTolerance && zero_max < 1e-12,
          "max rel err " + fmt(r.max_relative_error) + " over " + std::to_string(r.checked) +
              " coords; cancelled biases max |g| " + fmt(zero_max)};
}

std::vector<Check> gradient_suite(std::uint64_t seed) {
  std::vector<Check> out = layer_gradient_checks(seed);
  out.push_back(full_loss_gradient_check(seed));
  return out;
}

Check shape_check() {
  model::TransSleep net({}, 0);
  std::mt19937_64 rng(0);
  const Tensor x = uniform({1, 25, 3000}, rng, -1.0, 1.0, false);
  NoGradGuard guard;
  const auto out = net.forward(x, ops::Mode::kTrain, rng);
  const auto sce = net.sce().forward(ops::reshape(out.features, {25, 224}));
  const bool ok = out.features.shape() == Shape{1, 25, 224} && sce.confusion.shape() == Shape{25, 5} &&
                  sce.attention.shape() == Shape{25, 224} && out.stage_probs.shape() == Shape{1, 25, 5} &&
                  out.transition_probs.shape() == Shape{1, 25, 2};
  return {"shapes", ok,
          "f " + shape_str(out.features.shape()) + ", c " + shape_str(sce.confusion.shape()) + ", a " +
              shape_str(sce.attention.shape()) + ", stage " + shape_str(out.stage_probs.shape()) + ", transition " +
              shape_str(out.transition_probs.shape())};
}

Check transition_label_check(std::uint64_t seed, std::size_t trials) {
  std::mt19937_64 rng(seed);
  std::size_t mismatches = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto labels = random_stages(rng, 1 + rng() % 40, 1 + static_cast<unsigned>(rng() % 5));
    const auto got = model::derive_transition_labels(labels);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      bool differs = false;
      for (std::size_t j = 0; j < labels.size(); ++j) {
        const bool adjacent = j + 1 == i || i + 1 == j;
        if (adjacent && labels[j] != labels[i]) differs = true;
      }
      if (got.size() != labels.size() || got[i] != (differs ? 1 : 0)) {
        ++mismatches;
        break;
      }
    }
  }
  return {"transition_labels", mismatches == 0,
          std::to_string(mismatches) + " mismatching sequences of " + std::to_string(trials)};
}

Check metric_oracle_check(std::uint64_t seed, std::size_t trials) {
  std::mt19937_64 rng(seed);
  std::size_t mismatches = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = 1 + rng() % 60;
    const unsigned classes = 1 + static_cast<unsigned>(rng() % 5);
    const auto labels = random_stages(rng, n, classes);
    const auto preds = random_stages(rng, n, classes);
    const auto r = metrics::compute(preds, labels);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += preds[i] == labels[i];
    bool same = r.acc == static_cast<double>(correct) / static_cast<double>(n);
    double sum = 0.0;
    for (std::size_t c = 0; c < kNumStages; ++c) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool p = stage_index(preds[i]) == c, l = stage_index(labels[i]) == c;
        tp += p && l;
        fp += p && !l;
        fn += !p && l;
      }
      const std::size_t denom = 2 * tp + fp + fn;
      const double f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
      same = same && r.f1[c] == f1;
      sum += f1;
    }
    same = same && r.mf1 == sum / static_cast<double>(kNumStages);
    mismatches += !same;
  }
  return {"metric_oracle", mismatches == 0,
          std::to_string(mismatches) + " mismatching pairs of " + std::to_string(trials)};
}

std::vector<Check> invariant_suite(std::uint64_t seed) {
  std::vector<Check> out;
  out.push_back(shape_check());
  out.push_back(transition_label_check(seed, 10000));
  out.push_back(metric_oracle_check(seed, 10000));
  {
    model::TransSleep net(toy_config(), seed);
    const auto arrays = checkpoint::collect(net.params());
    const auto decoded = checkpoint::decode(checkpoint::encode(arrays));
    bool same = decoded.size() == arrays.size();
    for (std::size_t i = 0; same && i < arrays.size(); ++i) {
      same = decoded[i].name == arrays[i].name && decoded[i].dims == arrays[i].dims &&
             decoded[i].values == arrays[i].values;
    }
    out.push_back({"checkpoint_round_trip", same, std::to_string(arrays.size()) + " arrays"});
  }
  {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> a(1001), b(1001);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = d(rng);
      b[i] = d(rng);
    }
    const auto& ref = kernels::scalar_table();
    double worst = 0.0;
    std::string variants = std::string(ref.name);
    for (const kernels::KernelTable* k : {kernels::avx2_table(), kernels::neon_table()}) {
      if (!k) continue;
      variants += ", " + std::string(k->name);
      worst = std::max(worst, std::abs(k->dot(a.data(), b.data(), a.size()) - ref.dot(a.data(), b.data(), a.size())));
      worst = std::max(worst, std::abs(k->sum(a.data(), a.size()) - ref.sum(a.data(), a.size())));
    }
    out.push_back({"kernel_equivalence", worst < 1e-10, variants + "; max diff " + fmt(worst)});
  }
  return out;
}

}  // namespace transsleep::selftest
