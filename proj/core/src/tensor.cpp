#include "enlfcn/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "enlfcn/random.hpp"

namespace enlfcn {
namespace {
std::atomic<bool> g_finite_check{true};
}

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::format: return "format";
    case ErrorKind::resource: return "resource";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::usage: return "usage";
    case ErrorKind::split: return "split";
    case ErrorKind::undefined: return "undefined";
  }
  return "unknown";
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void set_finite_check(bool enabled) noexcept { g_finite_check.store(enabled); }
bool finite_check_enabled() noexcept { return g_finite_check.load(std::memory_order_relaxed); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  constexpr double two_pi = 6.283185307179586476925286766559;
  spare_ = r * std::sin(two_pi * u2);
  has_spare_ = true;
  return r * std::cos(two_pi * u2);
}

template <typename T>
ConvWeights<T> glorot_conv(std::size_t out_channels, std::size_t in_channels, std::size_t kernel, Rng& rng) {
  if (kernel % 2 == 0) throw ConfigError("kernel size must be odd, got " + std::to_string(kernel));
  const double fan_in = static_cast<double>(in_channels * kernel * kernel);
  const double fan_out = static_cast<double>(out_channels * kernel * kernel);
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  ConvWeights<T> w{Tensor<T>({out_channels, in_channels, kernel, kernel}), Tensor<T>({out_channels})};
  for (T& v : w.kernels.data()) v = static_cast<T>(rng.uniform(-a, a));
  return w;
}

template ConvWeights<float> glorot_conv<float>(std::size_t, std::size_t, std::size_t, Rng&);
template ConvWeights<double> glorot_conv<double>(std::size_t, std::size_t, std::size_t, Rng&);

}  // namespace enlfcn
