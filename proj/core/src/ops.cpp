#include "enlfcn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "enlfcn/parallel.hpp"

namespace enlfcn {
namespace {

struct ConvGeometry {
  std::size_t cin, cout, height, width, kernel;
  std::ptrdiff_t pad() const { return static_cast<std::ptrdiff_t>(kernel / 2); }
};

// Valid [lo, hi) range of an output coordinate whose shifted input index
// (coordinate + offset) stays inside [0, extent).
inline void shifted_range(std::ptrdiff_t offset, std::size_t extent, std::size_t& lo, std::size_t& hi) {
  const auto n = static_cast<std::ptrdiff_t>(extent);
  lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -offset));
  hi = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(n - offset, 0, n));
}

template <typename T>
ConvGeometry check_conv(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias) {
  if (input.rank() != 3) throw ConfigError("conv2d expects a [C,H,W] input, got " + shape_to_string(input.shape()));
  if (kernels.rank() != 4 || kernels.dim(2) != kernels.dim(3)) {
    throw ConfigError("conv2d expects square [out,in,k,k] kernels, got " + shape_to_string(kernels.shape()));
  }
  if (kernels.dim(2) % 2 == 0) throw ConfigError("conv2d kernel size must be odd");
  if (kernels.dim(1) != input.dim(0)) {
    throw ConfigError("conv2d kernel expects " + std::to_string(kernels.dim(1)) + " input channels, input has " +
                      std::to_string(input.dim(0)));
  }
  if (bias.rank() != 1 || bias.dim(0) != kernels.dim(0)) throw ConfigError("conv2d bias extent mismatch");
  return {input.dim(0), kernels.dim(0), input.dim(1), input.dim(2), kernels.dim(2)};
}

template <typename T>
inline T sigmoid_scalar(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, Activation act) {
  const ConvGeometry g = check_conv(input, kernels, bias);
  const std::size_t plane = g.height * g.width;
  Tensor<T> out({g.cout, g.height, g.width});
  const T* in = input.ptr();
  const T* ker = kernels.ptr();
  T* dst_all = out.ptr();
  parallel_for(0, g.cout, [&](std::size_t o) {
    T* dst = dst_all + o * plane;
    std::fill(dst, dst + plane, bias[o]);
    for (std::size_t c = 0; c < g.cin; ++c) {
      for (std::size_t u = 0; u < g.kernel; ++u) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(u) - g.pad();
        std::size_t i_lo, i_hi;
        shifted_range(dy, g.height, i_lo, i_hi);
        for (std::size_t v = 0; v < g.kernel; ++v) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(v) - g.pad();
          std::size_t j_lo, j_hi;
          shifted_range(dx, g.width, j_lo, j_hi);
          const T w = ker[((o * g.cin + c) * g.kernel + u) * g.kernel + v];
          for (std::size_t i = i_lo; i < i_hi; ++i) {
            const T* src = in + (c * g.height + (i + dy)) * g.width + dx;
            T* row = dst + i * g.width;
            for (std::size_t j = j_lo; j < j_hi; ++j) row[j] += w * src[j];
          }
        }
      }
    }
    if (act == Activation::sigmoid) {
      for (std::size_t p = 0; p < plane; ++p) dst[p] = sigmoid_scalar(dst[p]);
    }
  });
  check_finite(out, "conv2d");
  return out;
}

// Accumulates conv gradients given the gradient w.r.t. the pre-activation.
template <typename T>
void conv_backward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& grad_pre, Tensor<T>* grad_input,
                   Tensor<T>* grad_kernels, Tensor<T>* grad_bias) {
  const std::size_t cin = input.dim(0), height = input.dim(1), width = input.dim(2);
  const std::size_t cout = kernels.dim(0), k = kernels.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t plane = height * width;
  const T* in = input.ptr();
  const T* gp = grad_pre.ptr();
  const T* ker = kernels.ptr();

  if (grad_bias != nullptr) {
    for (std::size_t o = 0; o < cout; ++o) {
      T acc{0};
      for (std::size_t p = 0; p < plane; ++p) acc += gp[o * plane + p];
      (*grad_bias)[o] += acc;
    }
  }
  if (grad_kernels != nullptr) {
    T* gk = grad_kernels->ptr();
    parallel_for(0, cout, [&](std::size_t o) {
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t u = 0; u < k; ++u) {
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(u) - pad;
          std::size_t i_lo, i_hi;
          shifted_range(dy, height, i_lo, i_hi);
          for (std::size_t v = 0; v < k; ++v) {
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(v) - pad;
            std::size_t j_lo, j_hi;
            shifted_range(dx, width, j_lo, j_hi);
            T acc{0};
            for (std::size_t i = i_lo; i < i_hi; ++i) {
              const T* src = in + (c * height + (i + dy)) * width + dx;
              const T* g = gp + o * plane + i * width;
              for (std::size_t j = j_lo; j < j_hi; ++j) acc += g[j] * src[j];
            }
            gk[((o * cin + c) * k + u) * k + v] += acc;
          }
        }
      }
    });
  }
  if (grad_input != nullptr) {
    T* gi = grad_input->ptr();
    parallel_for(0, cin, [&](std::size_t c) {
      for (std::size_t o = 0; o < cout; ++o) {
        for (std::size_t u = 0; u < k; ++u) {
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(u) - pad;
          std::size_t i_lo, i_hi;
          shifted_range(dy, height, i_lo, i_hi);
          for (std::size_t v = 0; v < k; ++v) {
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(v) - pad;
            std::size_t j_lo, j_hi;
            shifted_range(dx, width, j_lo, j_hi);
            const T w = ker[((o * cin + c) * k + u) * k + v];
            for (std::size_t i = i_lo; i < i_hi; ++i) {
              T* dst = gi + (c * height + (i + dy)) * width + dx;
              const T* g = gp + o * plane + i * width;
              for (std::size_t j = j_lo; j < j_hi; ++j) dst[j] += w * g[j];
            }
          }
        }
      }
    });
  }
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ConfigError("softmax axis " + std::to_string(axis) + " invalid for shape " + shape_to_string(shape));
  }
  AxisSplit s;
  for (std::size_t a = 0; a < axis; ++a) s.outer *= shape[a];
  s.extent = shape[axis];
  for (std::size_t a = axis + 1; a < shape.size(); ++a) s.inner *= shape[a];
  return s;
}

void check_same_spatial(const Shape& a, const Shape& b) {
  if (a.size() != 3 || b.size() != 3 || a[1] != b[1] || a[2] != b[2]) {
    throw ConfigError("concat_channels spatial mismatch: " + shape_to_string(a) + " vs " + shape_to_string(b));
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvWeights<T>& w, Activation activation) {
  return conv_forward(input, w.kernels, w.bias, activation);
}

template <typename T>
Tensor<T> softmax_axis(const Tensor<T>& t, std::size_t axis) {
  const AxisSplit s = split_axis(t.shape(), axis);
  Tensor<T> out(t.shape());
  std::vector<T> scratch(s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const T* x = t.ptr() + o * s.extent * s.inner;
    T* y = out.ptr() + o * s.extent * s.inner;
    std::copy(x, x + s.inner, scratch.begin());
    for (std::size_t a = 1; a < s.extent; ++a) {
      for (std::size_t n = 0; n < s.inner; ++n) scratch[n] = std::max(scratch[n], x[a * s.inner + n]);
    }
    for (std::size_t a = 0; a < s.extent; ++a) {
      for (std::size_t n = 0; n < s.inner; ++n) y[a * s.inner + n] = std::exp(x[a * s.inner + n] - scratch[n]);
    }
    std::fill(scratch.begin(), scratch.end(), T{0});
    for (std::size_t a = 0; a < s.extent; ++a) {
      for (std::size_t n = 0; n < s.inner; ++n) scratch[n] += y[a * s.inner + n];
    }
    for (std::size_t a = 0; a < s.extent; ++a) {
      for (std::size_t n = 0; n < s.inner; ++n) y[a * s.inner + n] /= scratch[n];
    }
  }
  check_finite(out, "softmax_axis");
  return out;
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ConfigError("concat_channels needs at least one input");
  std::size_t channels = 0;
  for (const auto& p : parts) {
    check_same_spatial(parts.front().shape(), p.shape());
    channels += p.dim(0);
  }
  Tensor<T> out({channels, parts.front().dim(1), parts.front().dim(2)});
  T* dst = out.ptr();
  for (const auto& p : parts) dst = std::copy(p.data().begin(), p.data().end(), dst);
  return out;
}

namespace ops {

template <typename T>
NodeId conv2d(Tape<T>& tape, NodeId input, NodeId kernels, NodeId bias, Activation activation) {
  Tensor<T> out = conv_forward(tape.value(input), tape.value(kernels), tape.value(bias), activation);
  return tape.record(std::move(out), [input, kernels, bias, activation](Tape<T>& t, NodeId self) {
    const Tensor<T>& y = t.value(self);
    Tensor<T> grad_pre = *t.grad(self);
    if (activation == Activation::sigmoid) {
      for (std::size_t p = 0; p < grad_pre.size(); ++p) grad_pre[p] *= y[p] * (T{1} - y[p]);
    }
    conv_backward(t.value(input), t.value(kernels), grad_pre, &t.grad_buffer(input), &t.grad_buffer(kernels),
                  &t.grad_buffer(bias));
  });
}

template <typename T>
NodeId sigmoid(Tape<T>& tape, NodeId input) {
  const Tensor<T>& x = tape.value(input);
  Tensor<T> y(x.shape());
  for (std::size_t p = 0; p < x.size(); ++p) y[p] = sigmoid_scalar(x[p]);
  check_finite(y, "sigmoid");
  return tape.record(std::move(y), [input](Tape<T>& t, NodeId self) {
    const Tensor<T>& out = t.value(self);
    const Tensor<T>& g = *t.grad(self);
    Tensor<T>& gi = t.grad_buffer(input);
    for (std::size_t p = 0; p < out.size(); ++p) gi[p] += g[p] * out[p] * (T{1} - out[p]);
  });
}

template <typename T>
NodeId softmax_axis(Tape<T>& tape, NodeId input, std::size_t axis) {
  Tensor<T> y = enlfcn::softmax_axis(tape.value(input), axis);
  return tape.record(std::move(y), [input, axis](Tape<T>& t, NodeId self) {
    const Tensor<T>& out = t.value(self);
    const Tensor<T>& g = *t.grad(self);
    Tensor<T>& gi = t.grad_buffer(input);
    const AxisSplit s = split_axis(out.shape(), axis);
    std::vector<T> dot(s.inner);
    for (std::size_t o = 0; o < s.outer; ++o) {
      const std::size_t base = o * s.extent * s.inner;
      std::fill(dot.begin(), dot.end(), T{0});
      for (std::size_t a = 0; a < s.extent; ++a) {
        for (std::size_t n = 0; n < s.inner; ++n) dot[n] += out[base + a * s.inner + n] * g[base + a * s.inner + n];
      }
      for (std::size_t a = 0; a < s.extent; ++a) {
        for (std::size_t n = 0; n < s.inner; ++n) {
          const std::size_t p = base + a * s.inner + n;
          gi[p] += out[p] * (g[p] - dot[n]);
        }
      }
    }
  });
}

template <typename T>
NodeId concat_channels(Tape<T>& tape, std::span<const NodeId> parts) {
  std::vector<Tensor<T>> values;
  values.reserve(parts.size());
  for (NodeId id : parts) values.push_back(tape.value(id));
  Tensor<T> out = enlfcn::concat_channels<T>(values);
  std::vector<NodeId> inputs(parts.begin(), parts.end());
  return tape.record(std::move(out), [inputs](Tape<T>& t, NodeId self) {
    const T* g = t.grad(self)->ptr();
    for (NodeId id : inputs) {
      Tensor<T>& gi = t.grad_buffer(id);
      for (std::size_t p = 0; p < gi.size(); ++p) gi[p] += g[p];
      g += gi.size();
    }
  });
}

template <typename T>
NodeId add(Tape<T>& tape, NodeId a, NodeId b) {
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  if (x.shape() != y.shape()) {
    throw ConfigError("add shape mismatch: " + shape_to_string(x.shape()) + " vs " + shape_to_string(y.shape()));
  }
  Tensor<T> out(x.shape());
  for (std::size_t p = 0; p < x.size(); ++p) out[p] = x[p] + y[p];
  check_finite(out, "add");
  return tape.record(std::move(out), [a, b](Tape<T>& t, NodeId self) {
    const Tensor<T>& g = *t.grad(self);
    for (NodeId id : {a, b}) {
      Tensor<T>& gi = t.grad_buffer(id);
      for (std::size_t p = 0; p < g.size(); ++p) gi[p] += g[p];
    }
  });
}

}  // namespace ops

#define ENLFCN_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvWeights<T>&, Activation);              \
  template Tensor<T> softmax_axis<T>(const Tensor<T>&, std::size_t);                              \
  template Tensor<T> concat_channels<T>(std::span<const Tensor<T>>);                              \
  template NodeId ops::conv2d<T>(Tape<T>&, NodeId, NodeId, NodeId, Activation);                   \
  template NodeId ops::sigmoid<T>(Tape<T>&, NodeId);                                              \
  template NodeId ops::softmax_axis<T>(Tape<T>&, NodeId, std::size_t);                            \
  template NodeId ops::concat_channels<T>(Tape<T>&, std::span<const NodeId>);                     \
  template NodeId ops::add<T>(Tape<T>&, NodeId, NodeId);

ENLFCN_INSTANTIATE_OPS(float)
ENLFCN_INSTANTIATE_OPS(double)

}  // namespace enlfcn
