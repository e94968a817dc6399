#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "enlfcn/ops.hpp"
#include "enlfcn/random.hpp"
#include "enlfcn/tape.hpp"
#include "enlfcn/tensor.hpp"

namespace enlfcn {

struct Pixel {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Ordering of the H+W-1 positions a pixel attends to: the whole column
/// (rows 0..H-1, self included), then the row without the self column.
class CrissCross {
 public:
  CrissCross(std::size_t height, std::size_t width) : height_(height), width_(width) {}

  std::size_t length() const noexcept { return height_ + width_ - 1; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }

  Pixel position(std::size_t p, Pixel at) const {
    if (p < height_) return {p, at.col};
    const std::size_t q = p - height_;
    return {at.row, q < at.col ? q : q + 1};
  }

  /// Index of `source` within the path of `at`, if it lies on it.
  std::optional<std::size_t> index_of(Pixel at, Pixel source) const {
    if (source.col == at.col) return source.row;
    if (source.row == at.row) return height_ + (source.col < at.col ? source.col : source.col - 1);
    return std::nullopt;
  }

  std::vector<Pixel> positions(Pixel at) const {
    std::vector<Pixel> out;
    out.reserve(length());
    for (std::size_t p = 0; p < length(); ++p) out.push_back(position(p, at));
    return out;
  }

 private:
  std::size_t height_;
  std::size_t width_;
};

/// Weights of the full non-local block: theta, phi (N->L) and g (N->N), all 1x1.
template <typename T>
struct NonLocalWeights {
  ConvWeights<T> theta;
  ConvWeights<T> phi;
  ConvWeights<T> g;

  static NonLocalWeights init(std::size_t channels, std::size_t query_channels, Rng& rng);
};

/// Weights of the criss-cross block, shared across recurrent passes.
template <typename T>
struct EnlWeights {
  ConvWeights<T> wq;
  ConvWeights<T> wk;
  ConvWeights<T> wv;

  static EnlWeights init(std::size_t channels, std::size_t query_channels, Rng& rng);
  std::size_t channels() const { return wv.out_channels(); }
  std::size_t query_channels() const { return wq.out_channels(); }
};

/// Reuses criss-cross projections as theta/phi/g of the full block.
template <typename T>
NonLocalWeights<T> transplant(const EnlWeights<T>& w) {
  return {w.wq, w.wk, w.wv};
}

/// Softmax-normalised attention of one pass, [(H+W-1),H,W].
template <typename T>
struct AttentionState {
  Tensor<T> attention;
};

/// Largest full attention map (bytes) the original block will allocate.
inline constexpr std::size_t kDefaultAttentionByteLimit = std::size_t{1} << 30;

// Tensor-level kernels.

/// D[p,i,j] = <Q[:,i,j], K[:, path_p(i,j)]>.
template <typename T>
Tensor<T> cc_affinity(const Tensor<T>& q, const Tensor<T>& k);

/// E'[:,i,j] = sum_p A[p,i,j] V[:, path_p(i,j)] + E[:,i,j].
template <typename T>
Tensor<T> cc_aggregate(const Tensor<T>& a, const Tensor<T>& v, const Tensor<T>& e);

/// Full dot-product logits [HW,H,W]; position index is the flat pixel index.
template <typename T>
Tensor<T> full_affinity(const Tensor<T>& q, const Tensor<T>& k, std::size_t byte_limit = kDefaultAttentionByteLimit);

template <typename T>
Tensor<T> full_aggregate(const Tensor<T>& a, const Tensor<T>& v, const Tensor<T>& e);

namespace ops {

template <typename T>
NodeId cc_affinity(Tape<T>& tape, NodeId q, NodeId k);

template <typename T>
NodeId cc_aggregate(Tape<T>& tape, NodeId a, NodeId v, NodeId e);

template <typename T>
NodeId full_affinity(Tape<T>& tape, NodeId q, NodeId k, std::size_t byte_limit = kDefaultAttentionByteLimit);

template <typename T>
NodeId full_aggregate(Tape<T>& tape, NodeId a, NodeId v, NodeId e);

}  // namespace ops

/// Node ids of a recorded criss-cross forward.
struct EnlNodes {
  NodeId output;
  std::vector<NodeId> attention;  // one per pass
};

/// R passes of {projection, affinity, softmax, aggregation} with shared weights.
template <typename T>
EnlNodes enl_forward(Tape<T>& tape, NodeId input, const EnlWeights<T>& w, std::size_t recurrence);

/// Full non-local block with softmax normalisation and residual add.
template <typename T>
NodeId original_nonlocal(Tape<T>& tape, NodeId input, const NonLocalWeights<T>& w,
                         std::size_t byte_limit = kDefaultAttentionByteLimit);

template <typename T>
struct EnlResult {
  Tensor<T> output;
  std::vector<AttentionState<T>> states;
};

template <typename T>
EnlResult<T> enl_forward(const Tensor<T>& input, const EnlWeights<T>& w, std::size_t recurrence);

template <typename T>
Tensor<T> original_nonlocal(const Tensor<T>& input, const NonLocalWeights<T>& w,
                            std::size_t byte_limit = kDefaultAttentionByteLimit);

/// Two-pass influence of `source` on every pixel:
///   sum over intermediates q on both paths of A1[q <- source] * A2[t <- q],
///   plus the direct second-pass weight A2[t <- source] when t is on the
///   source's path (the residual carries the source feature into pass 2).
/// For pixels off the source's path the sum has exactly the two routes via
/// (t.row, source.col) and (source.row, t.col).
template <typename T>
Tensor<T> correlation_map(std::span<const AttentionState<T>> states, Pixel source);

}  // namespace enlfcn
