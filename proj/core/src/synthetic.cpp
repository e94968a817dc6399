#include "enlfcn/synthetic.hpp"

#include <algorithm>

#include "enlfcn/random.hpp"

namespace enlfcn {

template <typename T>
void normalize_bands(Tensor<T>& cube) {
  const std::size_t plane = cube.dim(1) * cube.dim(2);
  for (std::size_t b = 0; b < cube.dim(0); ++b) {
    const auto band = cube.data().subspan(b * plane, plane);
    const auto [lo, hi] = std::minmax_element(band.begin(), band.end());
    const T min = *lo, range = *hi - *lo;
    for (T& v : band) v = range > 0 ? (v - min) / range : T{0};
  }
}

template <typename T>
HsiDataset<T> make_synthetic(const SyntheticSpec& spec) {
  if (spec.bands == 0 || spec.height == 0 || spec.width == 0 || spec.block == 0) {
    throw ConfigError("synthetic scene extents must be positive");
  }
  if (spec.classes < 2) throw ConfigError("synthetic scene needs at least two classes");
  Rng rng(spec.seed);

  const std::size_t rows = (spec.height + spec.block - 1) / spec.block;
  const std::size_t cols = (spec.width + spec.block - 1) / spec.block;
  std::vector<std::int32_t> owner(rows * cols);
  for (std::size_t b = 0; b < owner.size(); ++b) owner[b] = static_cast<std::int32_t>(b % spec.classes) + 1;
  for (std::size_t i = owner.size(); i > 1; --i) std::swap(owner[i - 1], owner[rng.below(i)]);

  LabelMap labels(spec.height, spec.width);
  for (std::size_t i = 0; i < spec.height; ++i) {
    for (std::size_t j = 0; j < spec.width; ++j) labels(i, j) = owner[(i / spec.block) * cols + j / spec.block];
  }

  const double c_span = static_cast<double>(spec.classes - 1);
  const double sigma = spec.noise_fraction * spec.signature_gap;
  Tensor<T> cube({spec.bands, spec.height, spec.width});
  for (std::size_t b = 0; b < spec.bands; ++b) {
    for (std::size_t i = 0; i < spec.height; ++i) {
      for (std::size_t j = 0; j < spec.width; ++j) {
        const auto c = static_cast<std::size_t>(labels(i, j) - 1);
        const double level = static_cast<double>((c + b) % spec.classes) / c_span - 0.5;
        cube(b, i, j) = static_cast<T>(0.5 + spec.signature_gap * level + sigma * rng.normal());
      }
    }
  }
  normalize_bands(cube);
  return {std::move(cube), std::move(labels)};
}

CountSplit uniform_counts(const LabelMap& labels, std::size_t train, std::size_t val) {
  std::map<std::int32_t, std::size_t> sizes;
  for (auto v : labels.labels) {
    if (v > 0) ++sizes[v];
  }
  CountSplit out;
  for (const auto& [k, n] : sizes) {
    if (n < train + val) {
      throw SplitError("class " + std::to_string(k) + " has " + std::to_string(n) + " pixels, fewer than " +
                       std::to_string(train + val));
    }
    out.table[k] = {train, val, n - train - val};
  }
  return out;
}

template void normalize_bands<float>(Tensor<float>&);
template void normalize_bands<double>(Tensor<double>&);
template HsiDataset<float> make_synthetic<float>(const SyntheticSpec&);
template HsiDataset<double> make_synthetic<double>(const SyntheticSpec&);

}  // namespace enlfcn
