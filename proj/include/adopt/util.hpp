#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace adopt {

/// Split on runs of whitespace; no empty tokens.
std::vector<std::string> split_tokens(std::string_view text);

/// Lowercase, strip punctuation, collapse whitespace. Used by the text metrics.
std::string normalize_text(std::string_view text);

/// 1 - |A∩B| / |A∪B| over whitespace token sets. Two empty texts have distance 0.
double jaccard_distance(std::string_view a, std::string_view b);

std::string trim(std::string_view text);
bool contains(std::string_view haystack, std::string_view needle);

/// Substitute "{name}" placeholders. Unknown placeholders are left untouched so
/// the caller can validate them separately.
std::string fill_placeholders(const std::string& tmpl,
                              const std::map<std::string, std::string>& values);

/// Names of all "{...}" placeholders appearing in a template, in order, deduplicated.
std::vector<std::string> placeholder_names(const std::string& tmpl);

/// Deterministic RNG used everywhere randomness is needed. Thin wrapper so the
/// draw primitives are fixed by this codebase, not by the standard library's
/// unspecified distribution algorithms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::size_t next_index(std::size_t n);

  /// Uniform double in [0, 1).
  double next_unit();

  /// Standard normal via Box-Muller.
  double next_normal();

  /// k distinct indices from [0, n), in selection order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[next_index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Stable 64-bit mix for deriving sub-seeds from a base seed and a stream tag.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace adopt
