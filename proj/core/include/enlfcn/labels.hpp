#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "enlfcn/error.hpp"

namespace enlfcn {

/// Per-pixel class labels; 0 marks an unlabeled pixel, classes are 1..C.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::int32_t fill = 0) : height(h), width(w), labels(h * w, fill) {}
  LabelMap(std::size_t h, std::size_t w, std::vector<std::int32_t> values) : height(h), width(w), labels(std::move(values)) {
    if (labels.size() != h * w) throw ConfigError("label map size does not match its extents");
  }

  std::int32_t& operator()(std::size_t i, std::size_t j) { return labels[i * width + j]; }
  std::int32_t operator()(std::size_t i, std::size_t j) const { return labels[i * width + j]; }
  std::size_t size() const noexcept { return labels.size(); }

  std::int32_t max_label() const {
    std::int32_t m = 0;
    for (auto v : labels) m = v > m ? v : m;
    return m;
  }

  /// Rejects negative labels and labels above `classes`.
  void validate(std::size_t classes) const {
    for (auto v : labels) {
      if (v < 0 || static_cast<std::size_t>(v) > classes) {
        throw ConfigError("label " + std::to_string(v) + " outside 0.." + std::to_string(classes));
      }
    }
  }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

}  // namespace enlfcn
