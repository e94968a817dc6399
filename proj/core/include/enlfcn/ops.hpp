#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "enlfcn/tape.hpp"
#include "enlfcn/tensor.hpp"

namespace enlfcn {

enum class Activation { none, sigmoid };

// Tensor-level primitives. Each has a differentiable counterpart in ops::.

/// Same-padded, stride-1 convolution of a [Cin,H,W] input with odd kernels.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvWeights<T>& w, Activation activation);

/// Softmax along `axis` with max subtraction.
template <typename T>
Tensor<T> softmax_axis(const Tensor<T>& t, std::size_t axis);

/// Stacks [Ci,H,W] tensors along the channel axis in argument order.
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts);

namespace ops {

template <typename T>
NodeId conv2d(Tape<T>& tape, NodeId input, NodeId kernels, NodeId bias, Activation activation);

template <typename T>
NodeId conv2d(Tape<T>& tape, NodeId input, const ConvWeights<T>& w, Activation activation) {
  return conv2d(tape, input, tape.parameter(w.kernels), tape.parameter(w.bias), activation);
}

template <typename T>
NodeId sigmoid(Tape<T>& tape, NodeId input);

template <typename T>
NodeId softmax_axis(Tape<T>& tape, NodeId input, std::size_t axis);

template <typename T>
NodeId concat_channels(Tape<T>& tape, std::span<const NodeId> parts);

/// Elementwise a + b (identical shapes).
template <typename T>
NodeId add(Tape<T>& tape, NodeId a, NodeId b);

}  // namespace ops
}  // namespace enlfcn
