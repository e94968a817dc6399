#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace enlfcn {

enum class AttentionKind { efficient, original };

const char* to_string(AttentionKind kind) noexcept;
AttentionKind parse_attention_kind(const std::string& s);

/// Attention geometry for cost accounting.
struct CostGeometry {
  std::uint64_t height = 0;
  std::uint64_t width = 0;
  std::uint64_t query_channels = 0;  // L
  std::uint64_t value_channels = 0;  // N
  std::uint64_t recurrence = 1;      // R, only meaningful for the efficient kind
};

struct CostReport {
  CostGeometry geometry;
  AttentionKind kind = AttentionKind::efficient;
  std::uint64_t multiplications = 0;
  std::uint64_t attention_bytes = 0;

  double attention_megabytes() const { return static_cast<double>(attention_bytes) / 1e6; }
};

/// Multiplications in the affinity and aggregation stages only.
///   original:  HW*HW*L + HW*HW*N, one pass
///   efficient: R * ((H+W-1)*HW*L + (H+W-1)*HW*N)
std::uint64_t attention_flops(const CostGeometry& g, AttentionKind kind);

/// Bytes of one attention map: (HW)^2 or (H+W-1)*HW elements.
std::uint64_t attention_bytes(std::uint64_t height, std::uint64_t width, AttentionKind kind,
                              std::uint64_t bytes_per_element = 4);

/// original / efficient(R=1) flops with H = W = L = N = n, i.e. n^2 / (2n - 1).
double asymptotic_ratio(std::uint64_t n);

CostReport cost_report(const CostGeometry& g, AttentionKind kind, std::uint64_t bytes_per_element = 4);

// Process-wide multiplication counter fed by the attention kernels.
std::uint64_t multiplication_count() noexcept;
void reset_multiplication_count() noexcept;
void add_multiplications(std::uint64_t n) noexcept;

}  // namespace enlfcn
