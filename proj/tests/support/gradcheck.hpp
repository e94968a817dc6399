#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "enlfcn/random.hpp"
#include "enlfcn/tape.hpp"

namespace gradcheck {

using enlfcn::NodeId;
using enlfcn::Tape;
using enlfcn::Tensor;

inline constexpr double kStep = 1e-4;
inline constexpr double kRelTol = 1e-4;

struct Result {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool ok() const { return max_rel_error <= kRelTol; }
};

/// Entries whose magnitude is below the floor are exact zeros in theory (key
/// biases under softmax shift invariance, for instance) and only carry
/// rounding noise, so they are held to kRelTol * kFloor absolutely.
inline constexpr double kFloor = 1e-6;

inline double rel_error(double a, double n) {
  const double scale = std::max({std::abs(a), std::abs(n), kFloor});
  return std::abs(a - n) / scale;
}

/// Records a graph that reads the checked tensors (via tape.parameter) and
/// returns the output node.
using Graph = std::function<NodeId(Tape<double>&)>;

/// Compares tape gradients of sum(W * f) with central differences for every
/// element of every tensor in `params`, W a fixed random projection. The
/// tensors are perturbed in place and restored.
inline Result check(const Graph& graph, const std::vector<Tensor<double>*>& params, std::uint64_t seed = 7) {
  auto forward = [&] {
    Tape<double> tape(false);
    return tape.value(graph(tape));
  };
  const Tensor<double> probe = forward();
  enlfcn::Rng rng(seed);
  Tensor<double> weights(probe.shape());
  for (auto& v : weights.data()) v = rng.uniform(-1.0, 1.0);

  auto loss = [&] {
    const Tensor<double> out = forward();
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
    return s;
  };

  Tape<double> tape;
  const auto grads = tape.backward(graph(tape), weights);

  Result r;
  for (Tensor<double>* p : params) {
    const Tensor<double> analytic = grads.of(*p);
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = (*p)[i];
      (*p)[i] = saved + kStep;
      const double up = loss();
      (*p)[i] = saved - kStep;
      const double down = loss();
      (*p)[i] = saved;
      r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[i], (up - down) / (2 * kStep)));
      ++r.checked;
    }
  }
  return r;
}

/// Same check for a primitive applied to standalone input tensors.
using Builder = std::function<NodeId(Tape<double>&, const std::vector<NodeId>&)>;

inline Result check(const Builder& build, std::vector<Tensor<double>> inputs, std::uint64_t seed = 7) {
  std::vector<Tensor<double>*> params;
  for (auto& t : inputs) params.push_back(&t);
  return check(
      [&](Tape<double>& tape) {
        std::vector<NodeId> ids;
        for (const auto& t : inputs) ids.push_back(tape.parameter(t));
        return build(tape, ids);
      },
      params, seed);
}

inline Tensor<double> random_tensor(enlfcn::Shape shape, enlfcn::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace gradcheck
