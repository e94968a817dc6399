#include "enlfcn/cost.hpp"

#include <atomic>

#include "enlfcn/error.hpp"

namespace enlfcn {
namespace {
std::atomic<std::uint64_t> g_multiplications{0};
}

const char* to_string(AttentionKind kind) noexcept {
  return kind == AttentionKind::efficient ? "efficient" : "original";
}

AttentionKind parse_attention_kind(const std::string& s) {
  if (s == "efficient") return AttentionKind::efficient;
  if (s == "original") return AttentionKind::original;
  throw ConfigError("unknown attention kind '" + s + "' (expected efficient|original)");
}

std::uint64_t attention_flops(const CostGeometry& g, AttentionKind kind) {
  const std::uint64_t pixels = g.height * g.width;
  const std::uint64_t channels = g.query_channels + g.value_channels;
  if (kind == AttentionKind::original) return pixels * pixels * channels;
  const std::uint64_t path = g.height + g.width - 1;
  return g.recurrence * path * pixels * channels;
}

std::uint64_t attention_bytes(std::uint64_t height, std::uint64_t width, AttentionKind kind,
                              std::uint64_t bytes_per_element) {
  const std::uint64_t pixels = height * width;
  const std::uint64_t elements = kind == AttentionKind::original ? pixels * pixels : (height + width - 1) * pixels;
  return elements * bytes_per_element;
}

double asymptotic_ratio(std::uint64_t n) {
  const CostGeometry g{n, n, n, n, 1};
  return static_cast<double>(attention_flops(g, AttentionKind::original)) /
         static_cast<double>(attention_flops(g, AttentionKind::efficient));
}

CostReport cost_report(const CostGeometry& g, AttentionKind kind, std::uint64_t bytes_per_element) {
  if (g.height == 0 || g.width == 0 || g.query_channels == 0 || g.value_channels == 0 || g.recurrence == 0) {
    throw ConfigError("cost geometry extents must be positive");
  }
  CostReport r;
  r.geometry = g;
  r.kind = kind;
  r.multiplications = attention_flops(g, kind);
  r.attention_bytes = attention_bytes(g.height, g.width, kind, bytes_per_element);
  return r;
}

std::uint64_t multiplication_count() noexcept { return g_multiplications.load(); }
void reset_multiplication_count() noexcept { g_multiplications.store(0); }
void add_multiplications(std::uint64_t n) noexcept { g_multiplications.fetch_add(n, std::memory_order_relaxed); }

}  // namespace enlfcn
