#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "transsleep/checkpoint.hpp"
#include "transsleep/gradcheck.hpp"
#include "transsleep/nn.hpp"
#include "transsleep/optim.hpp"

using namespace transsleep;
using testutil::random_tensor;
using testutil::weighted_sum;

namespace {

void fill(Tensor t, double value) {
  for (double& v : t.mutable_data()) v = value;
}

void set_identity(const nn::Linear& l) {
  Tensor w = l.weight();
  const std::size_t n = w.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) w.mutable_data()[i * n + j] = i == j ? 1.0 : 0.0;
}

// Rows of x reordered by perm: out[i] = x[perm[i]].
Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t cols = x.dim(1);
  std::vector<double> out;
  for (std::size_t r : perm) out.insert(out.end(), x.data().begin() + r * cols, x.data().begin() + (r + 1) * cols);
  return Tensor::from_data(x.shape(), out);
}

}  // namespace

TEST_CASE("positional encoding table") {
  const Tensor pe = nn::positional_encoding(16, 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(pe.at({0, i}) == (i % 2 == 0 ? 0.0 : 1.0));
  for (double v : pe.data()) CHECK(std::abs(v) <= 1.0);
  CHECK(testutil::max_abs_diff(pe.data(), nn::positional_encoding(16, 8).data()) == 0.0);
  CHECK(pe.at({3, 0}) == doctest::Approx(std::sin(3.0)));
  CHECK(pe.at({3, 3}) == doctest::Approx(std::cos(3.0 / std::pow(10000.0, 2.0 / 8.0))));
  CHECK_THROWS_AS(nn::positional_encoding(4, 5), ConfigError);
}

TEST_CASE("multi-head self-attention") {
  std::mt19937_64 rng(31);
  nn::ModelParams params;
  nn::MultiHeadSelfAttention mha(params, "mha", 8, 4, rng);

  SUBCASE("head count must divide the model dimension") {
    nn::ModelParams p2;
    CHECK_THROWS_AS(nn::MultiHeadSelfAttention(p2, "bad", 10, 4, rng), ConfigError);
  }
  SUBCASE("single position attends to itself with weight one") {
    const Tensor x = random_tensor({1, 8}, rng, false);
    nn::AttentionTrace trace;
    const Tensor y = mha.forward(x, &trace);
    for (double w : trace.weights.data()) CHECK(w == 1.0);
    const Tensor expect = mha.output().forward(mha.value().forward(x));
    CHECK(testutil::max_abs_diff(y.data(), expect.data()) < 1e-12);
  }
  SUBCASE("attention rows sum to one") {
    nn::AttentionTrace trace;
    mha.forward(random_tensor({3, 6, 8}, rng, false), &trace);
    CHECK(trace.weights.shape() == Shape{12, 6, 6});
    const std::size_t rows = trace.weights.numel() / 6;
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 6; ++c) s += trace.weights.data()[r * 6 + c];
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
  SUBCASE("permuting positions permutes outputs identically") {
    const Tensor x = random_tensor({7, 8}, rng, false);
    const std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
    const Tensor y = mha.forward(x);
    const Tensor yp = mha.forward(permute_rows(x, perm));
    CHECK(testutil::max_abs_diff(yp.data(), permute_rows(y, perm).data()) < 1e-12);
  }
  SUBCASE("gradients reach input and all projections") {
    Tensor x = random_tensor({2, 5, 8}, rng);
    std::vector<Tensor> inputs{x};
    for (const auto& [name, t] : params.params()) inputs.push_back(t);
    CHECK(grad_check([&] { return weighted_sum(mha.forward(x)); }, inputs).max_relative_error < 1e-4);
  }
}

TEST_CASE("bidirectional LSTM") {
  std::mt19937_64 rng(41);
  SUBCASE("all-zero input and parameters give all-zero output") {
    nn::ModelParams params;
    nn::BiLstm lstm(params, "lstm", 4, 3, rng);
    for (const auto& [name, t] : params.params()) fill(t, 0.0);
    const Tensor y = lstm.forward(Tensor::zeros({5, 4}));
    CHECK(y.shape() == Shape{5, 6});
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("25 steps give 25 outputs of width 2H") {
    nn::ModelParams params;
    nn::BiLstm lstm(params, "lstm", 6, 5, rng);
    CHECK(lstm.forward(random_tensor({25, 6}, rng, false)).shape() == Shape{25, 10});
    CHECK(lstm.forward(random_tensor({3, 25, 6}, rng, false)).shape() == Shape{3, 25, 10});
  }
  SUBCASE("reverse direction equals forward direction on the reversed sequence") {
    nn::ModelParams params;
    nn::Lstm cell(params, "cell", 4, 3, rng);
    const Tensor x = random_tensor({2, 9, 4}, rng, false);
    std::vector<double> rev;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 9; t-- > 0;)
        rev.insert(rev.end(), x.data().begin() + (b * 9 + t) * 4, x.data().begin() + (b * 9 + t + 1) * 4);
    const Tensor backward_out = cell.forward(x, true);
    const Tensor forward_rev = cell.forward(Tensor::from_data(x.shape(), rev), false);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 0; t < 9; ++t)
        for (std::size_t h = 0; h < 3; ++h)
          CHECK(backward_out.at({b, t, h}) == doctest::Approx(forward_rev.at({b, 8 - t, h})).epsilon(1e-14));
  }
  SUBCASE("gradient check through time") {
    nn::ModelParams params;
    nn::BiLstm lstm(params, "lstm", 3, 2, rng);
    Tensor x = random_tensor({2, 4, 3}, rng);
    std::vector<Tensor> inputs{x};
    for (const auto& [name, t] : params.params()) inputs.push_back(t);
    CHECK(grad_check([&] { return weighted_sum(lstm.forward(x)); }, inputs).max_relative_error < 1e-4);
  }
}

TEST_CASE("layers register hierarchical names") {
  std::mt19937_64 rng(1);
  nn::ModelParams params;
  nn::Conv1d conv(params, "amf.pathA.spec", 1, 4, 200, 2, rng);
  nn::BatchNorm1d bn(params, "amf.pathA.spec_bn", 4);
  CHECK(params.contains("amf.pathA.spec.weight"));
  CHECK(params.contains("amf.pathA.spec_bn.gamma"));
  CHECK(params.stats().count("amf.pathA.spec_bn") == 1);
  CHECK_THROWS_AS(nn::Conv1d(params, "amf.pathA.spec", 1, 4, 200, 2, rng), ConfigError);
  const Tensor y = conv.forward(random_tensor({2, 1, 3000}, rng, false));
  CHECK(y.shape() == Shape{2, 4, 1500});
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient and zero decay leave parameters unchanged") {
    nn::ModelParams params;
    Tensor p = params.add("p", Tensor::from_data({3}, {1, -2, 3}));
    std::fill(p.mutable_grad().begin(), p.mutable_grad().end(), 0.0);
    optim::AdamState state;
    state.config.weight_decay = 0.0;
    CHECK(state.step == 0);
    optim::adam_step(params, state);
    CHECK(state.step == 1);
    CHECK(std::vector<double>(p.data().begin(), p.data().end()) == std::vector<double>{1, -2, 3});
  }
  SUBCASE("first step moves each coordinate by lr against the gradient sign") {
    nn::ModelParams params;
    Tensor p = params.add("p", Tensor::from_data({3}, {0.5, 0.5, 0.5}));
    auto g = p.mutable_grad();
    g[0] = 3.0;
    g[1] = -0.02;
    g[2] = 1e-3;
    optim::AdamState state;
    state.config.weight_decay = 0.0;
    optim::adam_step(params, state);
    // m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
    CHECK(p.data()[0] == doctest::Approx(0.5 - 1e-3 * 3.0 / (3.0 + 1e-8)).epsilon(1e-14));
    CHECK(p.data()[1] == doctest::Approx(0.5 + 1e-3 * 0.02 / (0.02 + 1e-8)).epsilon(1e-14));
    CHECK(p.data()[2] == doctest::Approx(0.5 - 1e-3 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("weight decay enters the gradient") {
    nn::ModelParams params;
    Tensor p = params.add("p", Tensor::from_data({1}, {2.0}));
    p.mutable_grad()[0] = 0.0;
    optim::AdamState state;
    optim::adam_step(params, state);
    // g = 0 + 1e-3 * 2
    CHECK(p.data()[0] == doctest::Approx(2.0 - 1e-3 * 2e-3 / (2e-3 + 1e-8)).epsilon(1e-14));
  }
  SUBCASE("missing gradient names the parameter") {
    nn::ModelParams params;
    params.add("amf.fc1.weight", Tensor::zeros({2}));
    optim::AdamState state;
    CHECK_THROWS_WITH(optim::adam_step(params, state), doctest::Contains("amf.fc1.weight"));
    CHECK(state.step == 0);
  }
  SUBCASE("converges on a quadratic") {
    nn::ModelParams params;
    Tensor p = params.add("p", Tensor::from_data({2}, {3.0, -4.0}));
    optim::AdamState state;
    state.config.lr = 0.05;
    state.config.weight_decay = 0.0;
    for (int i = 0; i < 500; ++i) {
      params.zero_grad();
      ops::sum(ops::mul(p, p)).backward();
      optim::adam_step(params, state);
    }
    CHECK(std::abs(p.data()[0]) < 0.05);
    CHECK(std::abs(p.data()[1]) < 0.05);
  }
}

TEST_CASE("checkpoint container") {
  std::mt19937_64 rng(17);
  nn::ModelParams params;
  nn::Linear fc(params, "ce.stage_head", 6, 5, rng);
  nn::BatchNorm1d bn(params, "amf.bn", 3);
  bn.forward(random_tensor({2, 3, 4}, rng, false), ops::Mode::kTrain);

  const auto bytes = checkpoint::encode(checkpoint::collect(params));
  SUBCASE("header layout") {
    REQUIRE(bytes.size() > 12);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "TSLP");
    CHECK(bytes[4] == 1);
    CHECK(bytes[8] == 6);  // weight, bias, gamma, beta, running mean, running var
  }
  SUBCASE("bit-exact round trip") {
    const auto decoded = checkpoint::decode(bytes);
    CHECK(checkpoint::encode(decoded) == bytes);

    nn::ModelParams other;
    std::mt19937_64 rng2(99);
    nn::Linear fc2(other, "ce.stage_head", 6, 5, rng2);
    nn::BatchNorm1d bn2(other, "amf.bn", 3);
    checkpoint::apply(decoded, other);
    CHECK(checkpoint::encode(checkpoint::collect(other)) == bytes);
    for (std::size_t i = 0; i < 30; ++i) {
      CHECK(other.get("ce.stage_head.weight").data()[i] ==
            static_cast<double>(static_cast<float>(params.get("ce.stage_head.weight").data()[i])));
    }
  }
  SUBCASE("file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "transsleep_ckpt_test.tslp";
    checkpoint::save(path, params);
    nn::ModelParams other;
    std::mt19937_64 rng2(5);
    nn::Linear fc2(other, "ce.stage_head", 6, 5, rng2);
    nn::BatchNorm1d bn2(other, "amf.bn", 3);
    checkpoint::load(path, other);
    CHECK(checkpoint::encode(checkpoint::collect(other)) == bytes);
    std::filesystem::remove(path);
  }
  SUBCASE("corrupt inputs are rejected") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(checkpoint::decode(bad), checkpoint::FormatError);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_THROWS_AS(checkpoint::decode(truncated), checkpoint::FormatError);
    nn::ModelParams wrong;
    nn::Linear fc3(wrong, "ce.stage_head", 7, 5, rng);
    nn::BatchNorm1d bn3(wrong, "amf.bn", 3);
    CHECK_THROWS_AS(checkpoint::apply(checkpoint::decode(bytes), wrong), checkpoint::FormatError);
  }
}
