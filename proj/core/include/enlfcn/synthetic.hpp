#pragma once

#include <cstdint>
#include <map>

#include "enlfcn/training.hpp"

namespace enlfcn {

/// Block-structured scene with one spectral signature per class.
///
/// The image is tiled by block x block squares; every class owns the same
/// number of squares (up to rounding) in a seeded random arrangement. The
/// defaults give one 16x16 quadrant per class. Band b
/// of class c sits at 0.5 + gap * (((c + b) mod C) / (C - 1) - 0.5) plus
/// Gaussian noise with sigma = noise_fraction * gap; every band is then
/// min-max scaled to [0, 1] like converted real scenes.
struct SyntheticSpec {
  std::size_t bands = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t classes = 4;
  std::size_t block = 16;
  double signature_gap = 0.2;
  double noise_fraction = 0.1;
  std::uint64_t seed = 0;
};

/// Per-band min-max scaling of a [B,H,W] cube to [0, 1]; constant bands become 0.
template <typename T>
void normalize_bands(Tensor<T>& cube);

template <typename T>
HsiDataset<T> make_synthetic(const SyntheticSpec& spec);

/// Same (train, val) count for every labeled class; the rest goes to test.
CountSplit uniform_counts(const LabelMap& labels, std::size_t train, std::size_t val);

}  // namespace enlfcn
