#include "enlfcn/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "enlfcn/metrics.hpp"
#include "enlfcn/random.hpp"

namespace enlfcn {

const char* to_string(Subset s) noexcept {
  switch (s) {
    case Subset::none: return "none";
    case Subset::train: return "train";
    case Subset::val: return "val";
    case Subset::test: return "test";
  }
  return "none";
}

Subset parse_subset(const std::string& s) {
  if (s == "train") return Subset::train;
  if (s == "val") return Subset::val;
  if (s == "test") return Subset::test;
  throw ConfigError("unknown subset '" + s + "' (expected train|val|test)");
}

std::vector<std::uint8_t> Split::mask(Subset subset) const {
  std::vector<std::uint8_t> out(assignment.size(), 0);
  for (std::size_t p = 0; p < assignment.size(); ++p) out[p] = assignment[p] == subset ? 1 : 0;
  return out;
}

std::size_t Split::count(Subset subset) const {
  return static_cast<std::size_t>(std::count(assignment.begin(), assignment.end(), subset));
}

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

Split make_split(const LabelMap& labels, const SplitMode& mode, std::uint64_t seed) {
  if (const auto* f = std::get_if<FractionSplit>(&mode)) {
    if (!(f->train > 0.0 && f->train < 1.0 && f->val > 0.0 && f->val < 1.0 && f->train + f->val < 1.0)) {
      throw ConfigError("split fractions must lie in (0,1) with train + val < 1");
    }
  }
  const std::int32_t max_class = labels.max_label();
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(max_class) + 1);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels.labels[p] < 0) throw ConfigError("negative label in label map");
    if (labels.labels[p] > 0) members[static_cast<std::size_t>(labels.labels[p])].push_back(p);
  }
  if (const auto* c = std::get_if<CountSplit>(&mode)) {
    for (std::int32_t k = 1; k <= max_class; ++k) {
      if (!members[static_cast<std::size_t>(k)].empty() && c->table.count(k) == 0) {
        throw SplitError("class " + std::to_string(k) + " is labeled but missing from the count table");
      }
    }
  }

  Split split;
  split.height = labels.height;
  split.width = labels.width;
  split.seed = seed;
  split.assignment.assign(labels.size(), Subset::none);
  Rng rng(seed);
  for (std::int32_t k = 1; k <= max_class; ++k) {
    auto& pixels = members[static_cast<std::size_t>(k)];
    const std::size_t size = pixels.size();
    SubsetCounts n;
    if (const auto* f = std::get_if<FractionSplit>(&mode)) {
      if (size == 0) continue;
      n.train = std::max<std::size_t>(1, round_half_up(f->train * static_cast<double>(size)));
      n.val = std::max<std::size_t>(1, round_half_up(f->val * static_cast<double>(size)));
      if (n.train + n.val > size) {
        throw SplitError("class " + std::to_string(k) + " has " + std::to_string(size) +
                         " labeled pixels, fewer than the " + std::to_string(n.train) + " train + " +
                         std::to_string(n.val) + " val requested");
      }
      n.test = size - n.train - n.val;
    } else {
      const auto& table = std::get<CountSplit>(mode).table;
      auto it = table.find(k);
      if (it == table.end()) continue;
      n = it->second;
      if (n.train + n.val + n.test > size) {
        throw SplitError("class " + std::to_string(k) + " has " + std::to_string(size) +
                         " labeled pixels, fewer than the " + std::to_string(n.train + n.val + n.test) +
                         " requested by the count table");
      }
    }
    for (std::size_t i = size; i > 1; --i) std::swap(pixels[i - 1], pixels[rng.below(i)]);
    std::size_t at = 0;
    for (std::size_t i = 0; i < n.train; ++i) split.assignment[pixels[at++]] = Subset::train;
    for (std::size_t i = 0; i < n.val; ++i) split.assignment[pixels[at++]] = Subset::val;
    for (std::size_t i = 0; i < n.test; ++i) split.assignment[pixels[at++]] = Subset::test;
    split.per_class_counts[k] = n;
  }
  if (const auto* c = std::get_if<CountSplit>(&mode)) {
    for (const auto& [k, counts] : c->table) {
      const bool present = k >= 1 && k <= max_class && !members[static_cast<std::size_t>(k)].empty();
      if (!present && counts.train + counts.val + counts.test > 0) {
        throw SplitError("class " + std::to_string(k) + " has 0 labeled pixels but the count table requests " +
                         std::to_string(counts.train + counts.val + counts.test));
      }
    }
  }
  return split;
}

namespace {

template <typename T>
std::size_t check_loss_inputs(const Tensor<T>& p, const LabelMap& labels, std::span<const std::uint8_t> mask) {
  if (p.rank() != 3 || p.dim(1) != labels.height || p.dim(2) != labels.width || mask.size() != labels.size()) {
    throw ConfigError("loss inputs have mismatched extents");
  }
  std::size_t count = 0;
  for (std::size_t q = 0; q < mask.size(); ++q) {
    if (mask[q] == 0) continue;
    const auto y = labels.labels[q];
    if (y <= 0 || static_cast<std::size_t>(y) > p.dim(0)) {
      throw ConfigError("masked pixel " + std::to_string(q) + " has label " + std::to_string(y) +
                        " outside 1.." + std::to_string(p.dim(0)));
    }
    ++count;
  }
  if (count == 0) throw UsageError("loss mask selects zero training pixels");
  return count;
}

}  // namespace

template <typename T>
double masked_cross_entropy(const Tensor<T>& p, const LabelMap& labels, std::span<const std::uint8_t> mask) {
  const std::size_t count = check_loss_inputs(p, labels, mask);
  const std::size_t plane = labels.size();
  double sum = 0.0;
  for (std::size_t q = 0; q < plane; ++q) {
    if (mask[q] == 0) continue;
    const double prob = static_cast<double>(p[static_cast<std::size_t>(labels.labels[q] - 1) * plane + q]);
    sum += std::log(std::max(prob, kLossLogClamp));
  }
  return -sum / static_cast<double>(count);
}

namespace ops {

template <typename T>
NodeId masked_cross_entropy(Tape<T>& tape, NodeId probabilities, const LabelMap& labels,
                            std::span<const std::uint8_t> mask) {
  const Tensor<T>& p = tape.value(probabilities);
  const double loss = enlfcn::masked_cross_entropy(p, labels, mask);
  const std::size_t count = check_loss_inputs(p, labels, mask);
  std::vector<std::uint8_t> mask_copy(mask.begin(), mask.end());
  return tape.record(Tensor<T>::scalar(static_cast<T>(loss)),
                     [probabilities, labels, mask_copy, count](Tape<T>& t, NodeId self) {
                       const T seed = (*t.grad(self))[0];
                       const Tensor<T>& pv = t.value(probabilities);
                       Tensor<T>& gp = t.grad_buffer(probabilities);
                       const std::size_t plane = labels.size();
                       const T scale = seed / static_cast<T>(count);
                       for (std::size_t q = 0; q < plane; ++q) {
                         if (mask_copy[q] == 0) continue;
                         const std::size_t at = static_cast<std::size_t>(labels.labels[q] - 1) * plane + q;
                         if (static_cast<double>(pv[at]) > kLossLogClamp) gp[at] -= scale / pv[at];
                       }
                     });
}

}  // namespace ops

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0)) {
    throw ConfigError("learning_rate and weight_decay must be non-negative");
  }
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0 && epsilon > 0.0)) {
    throw ConfigError("adam betas must lie in (0,1) and epsilon must be positive");
  }
}

template <typename T>
AdamState<T> AdamState<T>::zeros_like(std::span<const ConstNamedParameter<T>> params) {
  AdamState<T> s;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.tensor->shape());
    s.second_moment.emplace_back(p.tensor->shape());
  }
  return s;
}

template <typename T>
void adam_step(std::span<const NamedParameter<T>> params, const Gradients<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ConfigError("adam state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].shape() != params[i].tensor->shape()) {
      throw ConfigError("adam moment shape mismatch for " + params[i].name);
    }
  }
  std::vector<Tensor<T>> gradients;
  gradients.reserve(params.size());
  for (const auto& p : params) {
    gradients.push_back(grads.of(*p.tensor));
    if (!gradients.back().all_finite()) throw NumericError("non-finite gradient for parameter " + p.name);
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.learning_rate), wd = static_cast<T>(cfg.weight_decay);
  const T eps = static_cast<T>(cfg.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& w = *params[i].tensor;
    Tensor<T>& m = state.first_moment[i];
    Tensor<T>& v = state.second_moment[i];
    const Tensor<T>& g = gradients[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const T gk = cfg.decoupled_weight_decay ? g[k] : g[k] + wd * w[k];
      m[k] = b1 * m[k] + (T{1} - b1) * gk;
      v[k] = b2 * v[k] + (T{1} - b2) * gk * gk;
      const T update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps);
      w[k] -= lr * (cfg.decoupled_weight_decay ? update + wd * w[k] : update);
    }
  }
}

std::string train_log_csv(std::span<const TrainLogEntry> log) {
  std::ostringstream os;
  os << std::setprecision(9) << "iteration,loss,val_OA\n";
  for (const auto& e : log) {
    os << e.iteration << ',' << e.loss << ',';
    if (e.val_oa) os << *e.val_oa;
    os << '\n';
  }
  return os.str();
}

template <typename T>
TrainState<T> TrainState<T>::fresh(EnlFcnModel<T> model) {
  TrainState<T> s;
  const auto& view = std::as_const(model);
  const auto params = view.parameters();
  s.adam = AdamState<T>::zeros_like(params);
  s.model = std::move(model);
  return s;
}

template <typename T>
Trainer<T>::Trainer(TrainState<T> state, const HsiDataset<T>& data, const Split& split, TrainConfig cfg)
    : state_(std::move(state)), data_(data), cfg_(cfg) {
  cfg_.validate();
  if (data.cube.rank() != 3 || data.height() != data.labels.height || data.width() != data.labels.width) {
    throw ConfigError("cube " + shape_to_string(data.cube.shape()) + " and label map extents disagree");
  }
  if (split.height != data.labels.height || split.width != data.labels.width) {
    throw ConfigError("split extents do not match the label map");
  }
  data.labels.validate(state_.model.config.classes);
  train_mask_ = split.mask(Subset::train);
  val_mask_ = split.mask(Subset::val);
}

template <typename T>
double Trainer<T>::step() {
  Tape<T> tape;
  const NodeId input = tape.constant(data_.cube);
  const ForwardNodes nodes = forward(tape, state_.model, input);
  const NodeId loss = ops::masked_cross_entropy(tape, nodes.probabilities, data_.labels, train_mask_);
  const double loss_value = static_cast<double>(tape.value(loss)[0]);
  const Gradients<T> grads = tape.backward(loss, Tensor<T>::scalar(T{1}));
  const auto params = state_.model.parameters();
  adam_step<T>(params, grads, state_.adam, cfg_);
  state_.iteration += 1;

  TrainLogEntry entry{state_.iteration, loss_value, std::nullopt};
  const bool has_val = std::any_of(val_mask_.begin(), val_mask_.end(), [](std::uint8_t m) { return m != 0; });
  if (cfg_.validate_every > 0 && has_val && state_.iteration % cfg_.validate_every == 0) {
    const double oa = evaluate_oa(state_.model, data_, val_mask_);
    entry.val_oa = oa;
    if (!state_.best_val_oa || oa > *state_.best_val_oa) {
      state_.best_val_oa = oa;
      state_.best_iteration = state_.iteration;
      state_.best_model = state_.model;
    }
  }
  state_.log.push_back(entry);
  return loss_value;
}

template <typename T>
void Trainer<T>::run(std::size_t iterations) {
  for (std::size_t i = 0; i < iterations; ++i) step();
}

template <typename T>
TrainState<T> train(EnlFcnModel<T> model, const HsiDataset<T>& data, const Split& split, const TrainConfig& cfg) {
  Trainer<T> trainer(TrainState<T>::fresh(std::move(model)), data, split, cfg);
  trainer.run(cfg.iterations);
  return std::move(trainer).release();
}

template <typename T>
double evaluate_oa(const EnlFcnModel<T>& model, const HsiDataset<T>& data, std::span<const std::uint8_t> mask) {
  const ForwardResult<T> out = forward(model, data.cube);
  const LabelMap pred = predict(out.probabilities);
  return overall_accuracy(confusion(pred, data.labels, mask, model.config.classes));
}

#define ENLFCN_INSTANTIATE_TRAINING(T)                                                                         \
  template double masked_cross_entropy<T>(const Tensor<T>&, const LabelMap&, std::span<const std::uint8_t>);   \
  template NodeId ops::masked_cross_entropy<T>(Tape<T>&, NodeId, const LabelMap&, std::span<const std::uint8_t>); \
  template struct AdamState<T>;                                                                                \
  template void adam_step<T>(std::span<const NamedParameter<T>>, const Gradients<T>&, AdamState<T>&,           \
                             const TrainConfig&);                                                              \
  template struct TrainState<T>;                                                                               \
  template class Trainer<T>;                                                                                   \
  template TrainState<T> train<T>(EnlFcnModel<T>, const HsiDataset<T>&, const Split&, const TrainConfig&);     \
  template double evaluate_oa<T>(const EnlFcnModel<T>&, const HsiDataset<T>&, std::span<const std::uint8_t>);

ENLFCN_INSTANTIATE_TRAINING(float)
ENLFCN_INSTANTIATE_TRAINING(double)

}  // namespace enlfcn
