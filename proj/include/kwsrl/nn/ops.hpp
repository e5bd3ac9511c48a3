#pragma once

#include <cstddef>
#include <span>

#include "kwsrl/nn/graph.hpp"
#include "kwsrl/rng.hpp"

namespace kwsrl::nn {

// Differentiable operations recorded on the operands' graph. All operands
// of one call must belong to the same graph. Instantiated for float and
// double.

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
template <typename T> Var<T> sum(Var<T> a);

template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> tanh(Var<T> a);
template <typename T> Var<T> relu(Var<T> a);

// x: [in] -> [out], or rows [n, in] -> [n, out]. weight: [out, in]; bias: [out].
template <typename T> Var<T> dense(Var<T> x, Var<T> weight, Var<T> bias);

// weight: [out, in] times x: [in].
template <typename T> Var<T> matvec(Var<T> weight, Var<T> x);

// Same-padded stride-1 convolution along the length axis.
// x: [len, c_in] or a batch [b, len, c_in] (the batch axis is the
// time-distributed axis); kernels: [k, c_in, c_out] with k odd; bias: [c_out].
template <typename T> Var<T> conv1d(Var<T> x, Var<T> kernels, Var<T> bias);

// Non-overlapping max over `window` positions of the length axis; trailing
// positions that do not fill a window are dropped. Ties go to the lowest
// index. x: [len, c] or [b, len, c].
template <typename T> Var<T> maxpool1d(Var<T> x, std::size_t window);

template <typename T> Var<T> reshape(Var<T> x, Shape shape);

// Row i of a [n, m] matrix.
template <typename T> Var<T> row(Var<T> x, std::size_t i);

// Elements [offset, offset + length) of a vector.
template <typename T> Var<T> slice(Var<T> x, std::size_t offset, std::size_t length);

// Inverted dropout: in training each element is zeroed with probability
// `rate` and survivors scaled by 1/(1-rate); otherwise identity.
template <typename T> Var<T> dropout(Var<T> x, double rate, bool training, Rng* rng);

// Softmax of a logit vector, or of each row of [rows, classes];
// max-subtracted.
template <typename T> Var<T> softmax(Var<T> logits);

// -log(probs[target] + 1e-12).
template <typename T> Var<T> cross_entropy(Var<T> probs, std::size_t target);
// Mean over rows of [rows, classes] probabilities, one target per row.
template <typename T> Var<T> cross_entropy(Var<T> probs, std::span<const std::size_t> targets);

// Mean over elements of the Huber ("clipped error") loss between pred and a
// fixed target.
template <typename T> Var<T> huber(Var<T> pred, const Tensor<T>& target, double delta);

// Single-layer LSTM over the rows of x_seq [steps, in] (returns h [h]) or
// over each sequence of a batch [batch, steps, in] (returns [batch, h]).
// Gate order (input, forget, candidate, output) stacked along the 4*hidden
// axis. input_weights: [4h, in]; recurrent_weights: [4h, h]; bias: [4h].
// h_0 = c_0 = 0; h at the last step is returned.
template <typename T>
Var<T> lstm(Var<T> x_seq, Var<T> input_weights, Var<T> recurrent_weights, Var<T> bias);

// Plain value helpers shared by the ops and callers that do not need a graph.
template <typename T> Tensor<T> softmax_values(const Tensor<T>& logits);

}  // namespace kwsrl::nn
