#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "wsf/nn/graph.hpp"

namespace wsf::nn {

// x[N,in] * W[in,out] + b[out].
Var dense(Graph& g, Var x, Var weight, Var bias, std::string_view layer = "dense");

// Valid-padding, stride-1 convolution. x[N,C,H,W], weight[O,C,K,K], bias[O].
Var conv2d(Graph& g, Var x, Var weight, Var bias, std::string_view layer = "conv2d");

Var relu(Graph& g, Var x);

// 2x2 max pooling with stride 2 over x[N,C,H,W]; odd trailing rows/columns are dropped.
Var max_pool2(Graph& g, Var x, std::string_view layer = "maxpool2");

// [N, ...] -> [N, prod(...)].
Var flatten(Graph& g, Var x);

// Row-wise softmax over x[N,M].
Var softmax(Graph& g, Var x, std::string_view layer = "softmax");

// Mean over the batch of -log softmax(logits)[label]; labels index columns of logits[N,M].
Var cross_entropy(Graph& g, Var logits, std::span<const int> labels);

Var add(Graph& g, Var a, Var b);

// Multiplies row n of x[N,M] by weights[n, column] (weights is [N,D]).
Var scale_rows(Graph& g, Var x, Var weights, std::size_t column);

// Concatenates [N,M_i] tensors along columns.
Var concat_cols(Graph& g, std::span<const Var> parts);

// out[n,j] = max over positions p in groups[j] of z[n,p]; ties resolve to the first position.
Var max_over_groups(Graph& g, Var z, const std::vector<std::vector<std::size_t>>& groups);

// Scalar sum(x .* r); used to project tensors onto a scalar loss.
Var weighted_sum(Graph& g, Var x, const Tensor& r);

}  // namespace wsf::nn
