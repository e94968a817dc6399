#include "enlfcn/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "enlfcn/error.hpp"

namespace enlfcn {

ConfusionMatrix::ConfusionMatrix(std::size_t classes, std::vector<std::uint64_t> counts)
    : classes_(classes), counts_(std::move(counts)) {
  if (counts_.size() != classes_ * classes_) throw ConfigError("confusion matrix needs classes^2 counts");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t k = 0; k < classes_; ++k) t += at(k, k);
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t t = 0;
  for (std::size_t p = 0; p < classes_; ++p) t += at(truth, p);
  return t;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::uint64_t t = 0;
  for (std::size_t k = 0; k < classes_; ++k) t += at(k, pred);
  return t;
}

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& truth, std::span<const std::uint8_t> region,
                          std::size_t classes) {
  if (pred.height != truth.height || pred.width != truth.width || region.size() != truth.size()) {
    throw ConfigError("confusion inputs have mismatched extents");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t p = 0; p < truth.size(); ++p) {
    if (region[p] == 0 || truth.labels[p] == 0) continue;
    const std::int32_t t = truth.labels[p];
    const std::int32_t y = pred.labels[p];
    if (y == 0) throw std::logic_error("prediction 0 on an evaluated pixel");
    if (t < 0 || y < 0 || static_cast<std::size_t>(t) > classes || static_cast<std::size_t>(y) > classes) {
      throw ConfigError("label outside 1.." + std::to_string(classes) + " in confusion input");
    }
    ++cm.at(static_cast<std::size_t>(t - 1), static_cast<std::size_t>(y - 1));
  }
  return cm;
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw UndefinedValueError("overall accuracy of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

std::vector<double> per_class_accuracy(const ConfusionMatrix& cm) {
  std::vector<double> out(cm.classes(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < cm.classes(); ++k) {
    const auto row = cm.row_sum(k);
    if (row > 0) out[k] = static_cast<double>(cm.at(k, k)) / static_cast<double>(row);
  }
  return out;
}

double average_accuracy(const ConfusionMatrix& cm) {
  double sum = 0.0;
  std::size_t present = 0;
  for (double r : per_class_accuracy(cm)) {
    if (std::isnan(r)) continue;
    sum += r;
    ++present;
  }
  if (present == 0) throw UndefinedValueError("average accuracy of an empty confusion matrix");
  return sum / static_cast<double>(present);
}

double kappa(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw UndefinedValueError("kappa of an empty confusion matrix");
  const double n = static_cast<double>(total);
  const double observed = static_cast<double>(cm.trace()) / n;
  double chance = 0.0;
  for (std::size_t k = 0; k < cm.classes(); ++k) {
    chance += static_cast<double>(cm.row_sum(k)) * static_cast<double>(cm.col_sum(k));
  }
  chance /= n * n;
  if (chance == 1.0) throw UndefinedValueError("kappa undefined: chance agreement is 1 (single-class input)");
  return (observed - chance) / (1.0 - chance);
}

MetricsReport summarize(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.per_class = per_class_accuracy(cm);
  r.oa = overall_accuracy(cm);
  r.aa = average_accuracy(cm);
  r.kappa = kappa(cm);
  return r;
}

std::string metrics_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "class,accuracy\n";
  for (std::size_t k = 0; k < report.per_class.size(); ++k) {
    os << (k + 1) << ',';
    if (!std::isnan(report.per_class[k])) os << report.per_class[k];
    os << '\n';
  }
  os << "OA," << report.oa << "\nAA," << report.aa << "\nKappa," << report.kappa << '\n';
  return os.str();
}

std::string metrics_text(const MetricsReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "class   accuracy(%)\n";
  for (std::size_t k = 0; k < report.per_class.size(); ++k) {
    os << std::setw(5) << (k + 1) << "   ";
    if (std::isnan(report.per_class[k])) {
      os << "     -";
    } else {
      os << std::setw(6) << 100.0 * report.per_class[k];
    }
    os << '\n';
  }
  os << "   OA   " << std::setw(6) << 100.0 * report.oa << '\n';
  os << "   AA   " << std::setw(6) << 100.0 * report.aa << '\n';
  os << "Kappa   " << std::setw(6) << 100.0 * report.kappa << '\n';
  return os.str();
}

}  // namespace enlfcn
