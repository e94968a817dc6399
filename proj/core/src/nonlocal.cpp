#include "enlfcn/nonlocal.hpp"

#include <string>

#include "enlfcn/cost.hpp"
#include "enlfcn/parallel.hpp"

namespace enlfcn {
namespace {

void require_rank3(const Shape& s, const char* what) {
  if (s.size() != 3) throw ConfigError(std::string(what) + " expects a [C,H,W] tensor, got " + shape_to_string(s));
}

void require_spatial(const Shape& a, const Shape& b, const char* what) {
  if (a[1] != b[1] || a[2] != b[2]) {
    throw ConfigError(std::string(what) + " spatial mismatch: " + shape_to_string(a) + " vs " + shape_to_string(b));
  }
}

// Criss-cross kernels. Tensors are channel-major [C,H,W]; the row part of
// the path maps path slot H+q to column q for j > q and q+1 for j <= q,
// which keeps every inner loop contiguous in j.

// out[c,i,j] += sum_p w[p,i,j] * src[c, path_p(i,j)] for a single channel c.
template <typename T>
std::uint64_t cc_gather_channel(const T* w, const T* src, T* out, std::size_t h, std::size_t wd, std::size_t i) {
  const std::size_t plane = h * wd;
  std::uint64_t muls = 0;
  T* out_row = out + i * wd;
  for (std::size_t y = 0; y < h; ++y) {
    const T* wr = w + y * plane + i * wd;
    const T* sr = src + y * wd;
    for (std::size_t j = 0; j < wd; ++j) out_row[j] += wr[j] * sr[j];
    muls += wd;
  }
  const T* srow = src + i * wd;
  for (std::size_t q = 0; q + 1 < wd; ++q) {
    const T* wr = w + (h + q) * plane + i * wd;
    const T right = srow[q + 1];
    const T left = srow[q];
    for (std::size_t j = 0; j <= q; ++j) out_row[j] += wr[j] * right;
    for (std::size_t j = q + 1; j < wd; ++j) out_row[j] += wr[j] * left;
    muls += wd;
  }
  return muls;
}

// dst[p,i,j] += a[c,i,j] * b[c, path_p(i,j)] for a single channel c and row i.
template <typename T>
std::uint64_t cc_dot_channel(const T* a, const T* b, T* dst, std::size_t h, std::size_t wd, std::size_t i) {
  const std::size_t plane = h * wd;
  std::uint64_t muls = 0;
  const T* arow = a + i * wd;
  for (std::size_t y = 0; y < h; ++y) {
    T* dr = dst + y * plane + i * wd;
    const T* br = b + y * wd;
    for (std::size_t j = 0; j < wd; ++j) dr[j] += arow[j] * br[j];
    muls += wd;
  }
  const T* brow = b + i * wd;
  for (std::size_t q = 0; q + 1 < wd; ++q) {
    T* dr = dst + (h + q) * plane + i * wd;
    const T right = brow[q + 1];
    const T left = brow[q];
    for (std::size_t j = 0; j <= q; ++j) dr[j] += arow[j] * right;
    for (std::size_t j = q + 1; j < wd; ++j) dr[j] += arow[j] * left;
    muls += wd;
  }
  return muls;
}

// dst[c, path_p(i,j)] += w[p,i,j] * src[c,i,j] over all pixels, one channel.
template <typename T>
void cc_scatter_channel(const T* w, const T* src, T* dst, std::size_t h, std::size_t wd) {
  const std::size_t plane = h * wd;
  for (std::size_t i = 0; i < h; ++i) {
    const T* srow = src + i * wd;
    for (std::size_t y = 0; y < h; ++y) {
      const T* wr = w + y * plane + i * wd;
      T* dr = dst + y * wd;
      for (std::size_t j = 0; j < wd; ++j) dr[j] += wr[j] * srow[j];
    }
    T* drow = dst + i * wd;
    for (std::size_t q = 0; q + 1 < wd; ++q) {
      const T* wr = w + (h + q) * plane + i * wd;
      T right{0}, left{0};
      for (std::size_t j = 0; j <= q; ++j) right += wr[j] * srow[j];
      for (std::size_t j = q + 1; j < wd; ++j) left += wr[j] * srow[j];
      drow[q + 1] += right;
      drow[q] += left;
    }
  }
}

template <typename T>
void check_pair(const Tensor<T>& q, const Tensor<T>& k, const char* what) {
  require_rank3(q.shape(), what);
  if (q.shape() != k.shape()) {
    throw ConfigError(std::string(what) + " query/key shape mismatch: " + shape_to_string(q.shape()) + " vs " +
                      shape_to_string(k.shape()));
  }
}

template <typename T>
void check_aggregate(const Tensor<T>& a, const Tensor<T>& v, const Tensor<T>& e, std::size_t path, const char* what) {
  require_rank3(a.shape(), what);
  require_rank3(v.shape(), what);
  if (v.shape() != e.shape()) throw ConfigError(std::string(what) + " value/residual shape mismatch");
  require_spatial(a.shape(), v.shape(), what);
  if (a.dim(0) != path) {
    throw ConfigError(std::string(what) + " attention has " + std::to_string(a.dim(0)) + " path slots, expected " +
                      std::to_string(path));
  }
}

}  // namespace

template <typename T>
Tensor<T> cc_affinity(const Tensor<T>& q, const Tensor<T>& k) {
  check_pair(q, k, "cc_affinity");
  const std::size_t channels = q.dim(0), h = q.dim(1), w = q.dim(2), plane = h * w;
  Tensor<T> d({h + w - 1, h, w});
  std::vector<std::uint64_t> muls(h, 0);
  parallel_for(0, h, [&](std::size_t i) {
    for (std::size_t l = 0; l < channels; ++l) {
      muls[i] += cc_dot_channel(q.ptr() + l * plane, k.ptr() + l * plane, d.ptr(), h, w, i);
    }
  });
  for (auto m : muls) add_multiplications(m);
  check_finite(d, "cc_affinity");
  return d;
}

template <typename T>
Tensor<T> cc_aggregate(const Tensor<T>& a, const Tensor<T>& v, const Tensor<T>& e) {
  require_rank3(v.shape(), "cc_aggregate");
  check_aggregate(a, v, e, v.dim(1) + v.dim(2) - 1, "cc_aggregate");
  const std::size_t channels = v.dim(0), h = v.dim(1), w = v.dim(2), plane = h * w;
  Tensor<T> out = e;
  std::vector<std::uint64_t> muls(h, 0);
  parallel_for(0, h, [&](std::size_t i) {
    for (std::size_t n = 0; n < channels; ++n) {
      muls[i] += cc_gather_channel(a.ptr(), v.ptr() + n * plane, out.ptr() + n * plane, h, w, i);
    }
  });
  for (auto m : muls) add_multiplications(m);
  check_finite(out, "cc_aggregate");
  return out;
}

template <typename T>
Tensor<T> full_affinity(const Tensor<T>& q, const Tensor<T>& k, std::size_t byte_limit) {
  check_pair(q, k, "full_affinity");
  const std::size_t channels = q.dim(0), h = q.dim(1), w = q.dim(2), plane = h * w;
  const double bytes = static_cast<double>(plane) * static_cast<double>(plane) * sizeof(T);
  if (bytes > static_cast<double>(byte_limit)) {
    throw ResourceError("full attention map for " + std::to_string(h) + "x" + std::to_string(w) + " needs " +
                        std::to_string(static_cast<std::uint64_t>(bytes)) + " bytes, above the limit of " +
                        std::to_string(byte_limit) + "; tile the input into smaller regions");
  }
  Tensor<T> d({plane, h, w});
  parallel_for(0, h, [&](std::size_t i) {
    for (std::size_t l = 0; l < channels; ++l) {
      const T* qrow = q.ptr() + l * plane + i * w;
      const T* kc = k.ptr() + l * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const T kv = kc[p];
        T* dr = d.ptr() + p * plane + i * w;
        for (std::size_t j = 0; j < w; ++j) dr[j] += qrow[j] * kv;
      }
    }
  });
  add_multiplications(static_cast<std::uint64_t>(plane) * plane * channels);
  check_finite(d, "full_affinity");
  return d;
}

template <typename T>
Tensor<T> full_aggregate(const Tensor<T>& a, const Tensor<T>& v, const Tensor<T>& e) {
  require_rank3(v.shape(), "full_aggregate");
  check_aggregate(a, v, e, v.dim(1) * v.dim(2), "full_aggregate");
  const std::size_t channels = v.dim(0), h = v.dim(1), w = v.dim(2), plane = h * w;
  Tensor<T> out = e;
  parallel_for(0, h, [&](std::size_t i) {
    for (std::size_t n = 0; n < channels; ++n) {
      T* orow = out.ptr() + n * plane + i * w;
      const T* vc = v.ptr() + n * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const T vv = vc[p];
        const T* ar = a.ptr() + p * plane + i * w;
        for (std::size_t j = 0; j < w; ++j) orow[j] += ar[j] * vv;
      }
    }
  });
  add_multiplications(static_cast<std::uint64_t>(plane) * plane * channels);
  check_finite(out, "full_aggregate");
  return out;
}

namespace ops {

template <typename T>
NodeId cc_affinity(Tape<T>& tape, NodeId q, NodeId k) {
  Tensor<T> d = enlfcn::cc_affinity(tape.value(q), tape.value(k));
  return tape.record(std::move(d), [q, k](Tape<T>& t, NodeId self) {
    const Tensor<T>& qv = t.value(q);
    const Tensor<T>& kv = t.value(k);
    const Tensor<T>& g = *t.grad(self);
    Tensor<T>& gq = t.grad_buffer(q);
    Tensor<T>& gk = t.grad_buffer(k);
    const std::size_t h = qv.dim(1), w = qv.dim(2), plane = h * w;
    parallel_for(0, qv.dim(0), [&](std::size_t l) {
      for (std::size_t i = 0; i < h; ++i) cc_gather_channel(g.ptr(), kv.ptr() + l * plane, gq.ptr() + l * plane, h, w, i);
      cc_scatter_channel(g.ptr(), qv.ptr() + l * plane, gk.ptr() + l * plane, h, w);
    });
  });
}

template <typename T>
NodeId cc_aggregate(Tape<T>& tape, NodeId a, NodeId v, NodeId e) {
  Tensor<T> out = enlfcn::cc_aggregate(tape.value(a), tape.value(v), tape.value(e));
  return tape.record(std::move(out), [a, v, e](Tape<T>& t, NodeId self) {
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& vv = t.value(v);
    const Tensor<T>& g = *t.grad(self);
    Tensor<T>& ga = t.grad_buffer(a);
    Tensor<T>& gv = t.grad_buffer(v);
    Tensor<T>& ge = t.grad_buffer(e);
    const std::size_t channels = vv.dim(0), h = vv.dim(1), w = vv.dim(2), plane = h * w;
    for (std::size_t p = 0; p < g.size(); ++p) ge[p] += g[p];
    parallel_for(0, h, [&](std::size_t i) {
      for (std::size_t n = 0; n < channels; ++n) {
        cc_dot_channel(g.ptr() + n * plane, vv.ptr() + n * plane, ga.ptr(), h, w, i);
      }
    });
    parallel_for(0, channels, [&](std::size_t n) {
      cc_scatter_channel(av.ptr(), g.ptr() + n * plane, gv.ptr() + n * plane, h, w);
    });
  });
}

template <typename T>
NodeId full_affinity(Tape<T>& tape, NodeId q, NodeId k, std::size_t byte_limit) {
  Tensor<T> d = enlfcn::full_affinity(tape.value(q), tape.value(k), byte_limit);
  return tape.record(std::move(d), [q, k](Tape<T>& t, NodeId self) {
    const Tensor<T>& qv = t.value(q);
    const Tensor<T>& kv = t.value(k);
    const Tensor<T>& g = *t.grad(self);
    Tensor<T>& gq = t.grad_buffer(q);
    Tensor<T>& gk = t.grad_buffer(k);
    const std::size_t plane = qv.dim(1) * qv.dim(2);
    parallel_for(0, qv.dim(0), [&](std::size_t l) {
      const T* qc = qv.ptr() + l * plane;
      const T* kc = kv.ptr() + l * plane;
      T* gqc = gq.ptr() + l * plane;
      T* gkc = gk.ptr() + l * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const T* gr = g.ptr() + p * plane;
        T acc{0};
        for (std::size_t x = 0; x < plane; ++x) {
          gqc[x] += gr[x] * kc[p];
          acc += gr[x] * qc[x];
        }
        gkc[p] += acc;
      }
    });
  });
}

template <typename T>
NodeId full_aggregate(Tape<T>& tape, NodeId a, NodeId v, NodeId e) {
  Tensor<T> out = enlfcn::full_aggregate(tape.value(a), tape.value(v), tape.value(e));
  return tape.record(std::move(out), [a, v, e](Tape<T>& t, NodeId self) {
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& vv = t.value(v);
    const Tensor<T>& g = *t.grad(self);
    Tensor<T>& ga = t.grad_buffer(a);
    Tensor<T>& gv = t.grad_buffer(v);
    Tensor<T>& ge = t.grad_buffer(e);
    const std::size_t channels = vv.dim(0), plane = vv.dim(1) * vv.dim(2);
    for (std::size_t p = 0; p < g.size(); ++p) ge[p] += g[p];
    parallel_for(0, plane, [&](std::size_t p) {
      T* gar = ga.ptr() + p * plane;
      for (std::size_t n = 0; n < channels; ++n) {
        const T vp = vv[n * plane + p];
        const T* gc = g.ptr() + n * plane;
        for (std::size_t x = 0; x < plane; ++x) gar[x] += gc[x] * vp;
      }
    });
    parallel_for(0, channels, [&](std::size_t n) {
      const T* gc = g.ptr() + n * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const T* ar = av.ptr() + p * plane;
        T acc{0};
        for (std::size_t x = 0; x < plane; ++x) acc += ar[x] * gc[x];
        gv[n * plane + p] += acc;
      }
    });
  });
}

}  // namespace ops

template <typename T>
NonLocalWeights<T> NonLocalWeights<T>::init(std::size_t channels, std::size_t query_channels, Rng& rng) {
  NonLocalWeights<T> w;
  w.theta = glorot_conv<T>(query_channels, channels, 1, rng);
  w.phi = glorot_conv<T>(query_channels, channels, 1, rng);
  w.g = glorot_conv<T>(channels, channels, 1, rng);
  return w;
}

template <typename T>
EnlWeights<T> EnlWeights<T>::init(std::size_t channels, std::size_t query_channels, Rng& rng) {
  if (query_channels > channels) {
    throw ConfigError("query channels L=" + std::to_string(query_channels) + " exceed feature channels N=" +
                      std::to_string(channels));
  }
  EnlWeights<T> w;
  w.wq = glorot_conv<T>(query_channels, channels, 1, rng);
  w.wk = glorot_conv<T>(query_channels, channels, 1, rng);
  w.wv = glorot_conv<T>(channels, channels, 1, rng);
  return w;
}

template <typename T>
EnlNodes enl_forward(Tape<T>& tape, NodeId input, const EnlWeights<T>& w, std::size_t recurrence) {
  if (recurrence == 0) throw ConfigError("recurrence depth must be at least 1");
  EnlNodes nodes{input, {}};
  for (std::size_t r = 0; r < recurrence; ++r) {
    const NodeId q = ops::conv2d(tape, nodes.output, w.wq, Activation::none);
    const NodeId k = ops::conv2d(tape, nodes.output, w.wk, Activation::none);
    const NodeId v = ops::conv2d(tape, nodes.output, w.wv, Activation::none);
    const NodeId attention = ops::softmax_axis(tape, ops::cc_affinity(tape, q, k), 0);
    nodes.attention.push_back(attention);
    nodes.output = ops::cc_aggregate(tape, attention, v, nodes.output);
  }
  return nodes;
}

template <typename T>
NodeId original_nonlocal(Tape<T>& tape, NodeId input, const NonLocalWeights<T>& w, std::size_t byte_limit) {
  const NodeId theta = ops::conv2d(tape, input, w.theta, Activation::none);
  const NodeId phi = ops::conv2d(tape, input, w.phi, Activation::none);
  const NodeId g = ops::conv2d(tape, input, w.g, Activation::none);
  const NodeId attention = ops::softmax_axis(tape, ops::full_affinity(tape, theta, phi, byte_limit), 0);
  return ops::full_aggregate(tape, attention, g, input);
}

template <typename T>
EnlResult<T> enl_forward(const Tensor<T>& input, const EnlWeights<T>& w, std::size_t recurrence) {
  Tape<T> tape(false);
  const EnlNodes nodes = enl_forward(tape, tape.constant(input), w, recurrence);
  EnlResult<T> result{tape.value(nodes.output), {}};
  for (NodeId id : nodes.attention) result.states.push_back({tape.value(id)});
  return result;
}

template <typename T>
Tensor<T> original_nonlocal(const Tensor<T>& input, const NonLocalWeights<T>& w, std::size_t byte_limit) {
  Tape<T> tape(false);
  return tape.value(original_nonlocal(tape, tape.constant(input), w, byte_limit));
}

template <typename T>
Tensor<T> correlation_map(std::span<const AttentionState<T>> states, Pixel source) {
  if (states.size() != 2) {
    throw UsageError("correlation map needs the attention of exactly two passes, got " + std::to_string(states.size()));
  }
  const Tensor<T>& first = states[0].attention;
  const Tensor<T>& second = states[1].attention;
  if (first.rank() != 3 || first.shape() != second.shape()) throw UsageError("attention states have mismatched shapes");
  const std::size_t h = first.dim(1), w = first.dim(2);
  if (first.dim(0) != h + w - 1) throw UsageError("attention state is not a criss-cross map");
  if (source.row >= h || source.col >= w) {
    throw UsageError("pixel (" + std::to_string(source.row) + "," + std::to_string(source.col) +
                     ") outside the " + std::to_string(h) + "x" + std::to_string(w) + " image");
  }
  const CrissCross cross(h, w);
  Tensor<T> map({h, w});
  for (std::size_t m = 0; m < h; ++m) {
    for (std::size_t n = 0; n < w; ++n) {
      const Pixel target{m, n};
      T acc{0};
      for (std::size_t p = 0; p < cross.length(); ++p) {
        const Pixel mid = cross.position(p, target);
        const auto from_source = cross.index_of(mid, source);
        if (!from_source) continue;
        acc += first(*from_source, mid.row, mid.col) * second(p, m, n);
      }
      if (const auto direct = cross.index_of(target, source)) acc += second(*direct, m, n);
      map[m * w + n] = acc;
    }
  }
  return map;
}

#define ENLFCN_INSTANTIATE_NONLOCAL(T)                                                                          \
  template struct NonLocalWeights<T>;                                                                          \
  template struct EnlWeights<T>;                                                                               \
  template Tensor<T> cc_affinity<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> cc_aggregate<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> full_affinity<T>(const Tensor<T>&, const Tensor<T>&, std::size_t);                        \
  template Tensor<T> full_aggregate<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template NodeId ops::cc_affinity<T>(Tape<T>&, NodeId, NodeId);                                               \
  template NodeId ops::cc_aggregate<T>(Tape<T>&, NodeId, NodeId, NodeId);                                      \
  template NodeId ops::full_affinity<T>(Tape<T>&, NodeId, NodeId, std::size_t);                                \
  template NodeId ops::full_aggregate<T>(Tape<T>&, NodeId, NodeId, NodeId);                                    \
  template EnlNodes enl_forward<T>(Tape<T>&, NodeId, const EnlWeights<T>&, std::size_t);                       \
  template NodeId original_nonlocal<T>(Tape<T>&, NodeId, const NonLocalWeights<T>&, std::size_t);              \
  template EnlResult<T> enl_forward<T>(const Tensor<T>&, const EnlWeights<T>&, std::size_t);                   \
  template Tensor<T> original_nonlocal<T>(const Tensor<T>&, const NonLocalWeights<T>&, std::size_t);           \
  template Tensor<T> correlation_map<T>(std::span<const AttentionState<T>>, Pixel);

ENLFCN_INSTANTIATE_NONLOCAL(float)
ENLFCN_INSTANTIATE_NONLOCAL(double)

}  // namespace enlfcn
