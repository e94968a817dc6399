#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "enlfcn/cost.hpp"
#include "enlfcn/labels.hpp"
#include "enlfcn/nonlocal.hpp"
#include "enlfcn/tape.hpp"
#include "enlfcn/tensor.hpp"

namespace enlfcn {

enum class Arrangement { parallel, series };

const char* to_string(Arrangement a) noexcept;
Arrangement parse_arrangement(const std::string& s);

struct NetworkConfig {
  std::size_t bands = 0;
  std::size_t classes = 0;
  std::size_t backbone_channels = 150;  // N
  std::size_t enl_channels = 150;       // L
  std::size_t kernel_size = 5;
  std::size_t enl_module_count = 2;
  Arrangement enl_arrangement = Arrangement::parallel;
  std::size_t enl_position = 2;  // modules follow Conv.p
  std::size_t recurrence = 2;
  AttentionKind attention_kind = AttentionKind::efficient;
  std::size_t attention_byte_limit = kDefaultAttentionByteLimit;

  void validate() const;

  /// Input channel extent of Conv.{layer}, layer in 1..5.
  std::size_t conv_input_channels(std::size_t layer) const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
struct ConstNamedParameter {
  std::string name;
  const Tensor<T>* tensor;
};

/// Five-layer FCN backbone with attention modules after Conv.p.
template <typename T>
struct EnlFcnModel {
  NetworkConfig config;
  std::array<ConvWeights<T>, 5> conv;
  std::vector<EnlWeights<T>> enl;            // attention_kind == efficient
  std::vector<NonLocalWeights<T>> nonlocal;  // attention_kind == original

  static EnlFcnModel init(const NetworkConfig& config, std::uint64_t seed);

  /// Every learnable tensor under its canonical checkpoint name, in a fixed order.
  std::vector<NamedParameter<T>> parameters();
  std::vector<ConstNamedParameter<T>> parameters() const;
  std::size_t parameter_count() const;
};

struct ForwardNodes {
  NodeId probabilities;
  NodeId logits;
  std::vector<std::vector<NodeId>> attention;  // [module][pass], efficient kind only
};

template <typename T>
ForwardNodes forward(Tape<T>& tape, const EnlFcnModel<T>& model, NodeId input);

template <typename T>
struct ForwardResult {
  Tensor<T> probabilities;  // [C,H,W]
  std::vector<std::vector<AttentionState<T>>> attention;
};

template <typename T>
ForwardResult<T> forward(const EnlFcnModel<T>& model, const Tensor<T>& input);

/// label = 1 + argmax_c P[c,i,j], ties to the smallest class.
template <typename T>
LabelMap predict(const Tensor<T>& probabilities);

}  // namespace enlfcn
