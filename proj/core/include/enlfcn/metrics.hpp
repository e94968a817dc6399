#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "enlfcn/labels.hpp"

namespace enlfcn {

/// counts[t][p]: pixels of true class t+1 predicted as p+1.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}
  ConfusionMatrix(std::size_t classes, std::vector<std::uint64_t> counts);

  std::size_t classes() const noexcept { return classes_; }
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * classes_ + pred]; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }

  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t col_sum(std::size_t pred) const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

/// Tallies pixels where region[pixel] != 0 and truth is labeled.
ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& truth, std::span<const std::uint8_t> region,
                          std::size_t classes);

double overall_accuracy(const ConfusionMatrix& cm);
/// Mean recall over classes that have at least one true sample.
double average_accuracy(const ConfusionMatrix& cm);
/// Cohen's kappa; throws UndefinedValueError when chance agreement is 1.
double kappa(const ConfusionMatrix& cm);
/// Recall per class; NaN for classes without true samples.
std::vector<double> per_class_accuracy(const ConfusionMatrix& cm);

struct MetricsReport {
  std::vector<double> per_class;
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
};

MetricsReport summarize(const ConfusionMatrix& cm);

/// class,accuracy rows followed by OA, AA and Kappa rows.
std::string metrics_csv(const MetricsReport& report);
std::string metrics_text(const MetricsReport& report);

}  // namespace enlfcn
