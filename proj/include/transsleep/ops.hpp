#pragma once
// Differentiable primitives. Every function returns a new tensor; inputs are
// never modified (batch_norm additionally updates the running statistics it
// is handed in training mode).

#include <cstddef>
#include <optional>
#include <random>
#include <vector>

#include "transsleep/tensor.hpp"

namespace transsleep::ops {

enum class Mode { kTrain, kEval };

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// y's shape must equal the trailing dimensions of x; y is repeated over the
// leading ones.
Tensor add_broadcast(const Tensor& x, const Tensor& y);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

// log(max(x, floor)); the gradient is zero where the floor is active.
Tensor log(const Tensor& x, double floor = 1e-12);
Tensor sqrt(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
// Exact form x * Phi(x).
Tensor gelu(const Tensor& x);

// Softmax over the last axis, max-subtracted.
Tensor softmax(const Tensor& x);

Tensor sum(const Tensor& x);   // -> [1]
Tensor mean(const Tensor& x);  // -> [1]
// Reduces one axis; the axis is removed from the shape (a rank-1 input
// yields [1]).
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor transpose(const Tensor& x);  // rank 2
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
// out[i] = x[i, index[i]] over the flattened leading dimensions.
Tensor gather_last(const Tensor& x, const std::vector<std::size_t>& index);

// x[..., in] * weight[out, in]^T + bias[out] -> [..., out]
Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias);
// Batched matrix product over rank-3 operands: a[G, M, K] times b[G, K, N]
// (or b[G, N, K] when transpose_b).
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b);
Tensor matmul(const Tensor& a, const Tensor& b);  // rank 2

// Cross-correlation. input [B, C_in, L] or [C_in, L]; weight
// [C_out, C_in / groups, K]; optional bias [C_out].
Tensor conv1d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              std::size_t stride, std::size_t padding, std::size_t groups = 1);
std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 std::size_t padding);
// Depthwise [C_in, 1, K] then pointwise [C_out, C_in, 1]; stride and padding
// apply to the depthwise stage.
Tensor separable_conv1d(const Tensor& input, const Tensor& depthwise, const Tensor& pointwise,
                        std::size_t stride, std::size_t padding);

struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;
  bool initialized() const { return !mean.empty(); }
};

// input [B, C, L] or [C, L]. Train mode normalizes each channel over (B, L)
// with the biased variance and folds the batch statistics into `running`
// (unbiased variance, exponential average). Eval mode uses `running`.
Tensor batch_norm1d(const Tensor& input, const Tensor& gamma, const Tensor& beta, Mode mode,
                    BatchNormStats& running, double momentum = 0.1, double epsilon = 1e-5);

// Mean over the last axis: [..., L] -> [...].
Tensor global_avg_pool(const Tensor& input);
// [..., L] -> [..., target]; bin i covers floor(i*L/target) .. floor((i+1)*L/target).
Tensor adaptive_avg_pool(const Tensor& input, std::size_t target);

// Train mode zeroes each element with probability `rate` and scales survivors
// by 1/(1-rate). Eval mode, or rate == 0, returns the input handle itself.
Tensor dropout(const Tensor& input, double rate, Mode mode, std::mt19937_64& rng);

}  // namespace transsleep::ops
