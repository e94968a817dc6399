#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "enlfcn/labels.hpp"
#include "enlfcn/network.hpp"
#include "enlfcn/tape.hpp"
#include "enlfcn/tensor.hpp"

namespace enlfcn {

enum class Subset : std::uint8_t { none = 0, train = 1, val = 2, test = 3 };

const char* to_string(Subset s) noexcept;
Subset parse_subset(const std::string& s);

struct SubsetCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  friend bool operator==(const SubsetCounts&, const SubsetCounts&) = default;
};

/// n = max(1, round_half_up(f * class_size)) for train and val; test takes the rest.
struct FractionSplit {
  double train = 0.1;
  double val = 0.01;
};

/// Per-class (train, val, test) counts used verbatim; surplus pixels stay unassigned.
struct CountSplit {
  std::map<std::int32_t, SubsetCounts> table;
};

using SplitMode = std::variant<FractionSplit, CountSplit>;

struct Split {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Subset> assignment;
  std::uint64_t seed = 0;
  std::map<std::int32_t, SubsetCounts> per_class_counts;

  /// 1 where assignment == subset.
  std::vector<std::uint8_t> mask(Subset subset) const;
  std::size_t count(Subset subset) const;
  friend bool operator==(const Split&, const Split&) = default;
};

std::size_t round_half_up(double x);

Split make_split(const LabelMap& labels, const SplitMode& mode, std::uint64_t seed);

template <typename T>
struct HsiDataset {
  Tensor<T> cube;  // [B,H,W]
  LabelMap labels;

  std::size_t bands() const { return cube.dim(0); }
  std::size_t height() const { return cube.dim(1); }
  std::size_t width() const { return cube.dim(2); }
};

/// Log clamp applied to probabilities inside the loss.
inline constexpr double kLossLogClamp = 1e-12;

/// -(1/|mask|) * sum over masked pixels of log P[label-1, i, j].
template <typename T>
double masked_cross_entropy(const Tensor<T>& probabilities, const LabelMap& labels, std::span<const std::uint8_t> mask);

namespace ops {
template <typename T>
NodeId masked_cross_entropy(Tape<T>& tape, NodeId probabilities, const LabelMap& labels,
                            std::span<const std::uint8_t> mask);
}

struct TrainConfig {
  double learning_rate = 5e-4;
  double weight_decay = 2e-4;
  std::size_t iterations = 800;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::size_t validate_every = 10;
  /// false: L2 term added to the gradient; true: decoupled decay on the weights.
  bool decoupled_weight_decay = false;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::uint64_t step = 0;

  static AdamState zeros_like(std::span<const ConstNamedParameter<T>> params);
};

/// One bias-corrected Adam update of every parameter in place.
template <typename T>
void adam_step(std::span<const NamedParameter<T>> params, const Gradients<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg);

struct TrainLogEntry {
  std::size_t iteration = 0;
  double loss = 0.0;
  std::optional<double> val_oa;
};

std::string train_log_csv(std::span<const TrainLogEntry> log);

/// Everything needed to continue training bit-exactly.
template <typename T>
struct TrainState {
  EnlFcnModel<T> model;
  AdamState<T> adam;
  std::size_t iteration = 0;
  std::optional<double> best_val_oa;
  std::size_t best_iteration = 0;
  std::optional<EnlFcnModel<T>> best_model;
  std::vector<TrainLogEntry> log;

  static TrainState fresh(EnlFcnModel<T> model);
  /// Best-validation weights, or the current ones before any validation ran.
  const EnlFcnModel<T>& selected_model() const { return best_model ? *best_model : model; }
};

/// Full-image training with batch size 1.
template <typename T>
class Trainer {
 public:
  Trainer(TrainState<T> state, const HsiDataset<T>& data, const Split& split, TrainConfig cfg);

  /// One forward/backward/Adam iteration; validates when the global
  /// iteration count is a multiple of validate_every. Returns the loss.
  double step();
  void run(std::size_t iterations);

  const TrainState<T>& state() const noexcept { return state_; }
  TrainState<T> release() && { return std::move(state_); }

 private:
  TrainState<T> state_;
  const HsiDataset<T>& data_;
  TrainConfig cfg_;
  std::vector<std::uint8_t> train_mask_;
  std::vector<std::uint8_t> val_mask_;
};

/// Runs cfg.iterations steps from a fresh state.
template <typename T>
TrainState<T> train(EnlFcnModel<T> model, const HsiDataset<T>& data, const Split& split, const TrainConfig& cfg);

/// Overall accuracy of `model` on the pixels selected by `mask`.
template <typename T>
double evaluate_oa(const EnlFcnModel<T>& model, const HsiDataset<T>& data, std::span<const std::uint8_t> mask);

}  // namespace enlfcn
