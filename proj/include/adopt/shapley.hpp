#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace adopt {

class Rng;

/// A weak/strong assignment over m steps. Bit i set means step i uses its
/// strong prompt; clear means the incumbent (weak) prompt.
using CoalitionMask = std::uint32_t;

struct ValueSample {
  CoalitionMask mask = 0;
  double value = 0.0;  // end-to-end score of the corresponding configuration
};

enum class AttributionMethod { Exact, KernelShap };

struct ContributionEstimate {
  std::vector<double> phi;
  AttributionMethod method = AttributionMethod::Exact;
  double residual = 0.0;     // weighted RMS residual of the kernel fit
  bool regularized = false;  // set when a rank-deficient design needed a ridge term
};

/// Coalition weight |S|!(m-|S|-1)!/m! for a coalition of size s that excludes
/// the player being measured. Defined for 0 <= s <= m-1.
double shapley_weight(int s, int m);

/// Kernel regression weight (m-1) / (C(m,|z|) * |z| * (m-|z|)) for 0 < |z| < m.
double kernel_shap_weight(int size, int m);

/// Exact attribution from a complete value table indexed by coalition mask
/// (table.size() == 2^m). Satisfies efficiency, symmetry, null player, and
/// linearity up to floating-point rounding.
ContributionEstimate exact_shapley(const std::vector<double>& value_table, int m);

/// Same, from a sparse map; raises ContractError naming missing coalitions.
ContributionEstimate exact_shapley(const std::map<CoalitionMask, double>& value_table, int m);

/// Weighted-least-squares attribution from observed coalition samples. The
/// all-weak and all-strong samples must be present; they are imposed as
/// equality constraints (intercept = v(empty), intercept + sum(phi) = v(full)),
/// so efficiency holds by construction.
ContributionEstimate kernel_shap(const std::vector<ValueSample>& samples, int m);

struct BudgetAllocation {
  std::vector<int> budgets;
  int total = 0;
};

/// Integer budgets proportional to clipped contributions, floored at b_min,
/// integerized by largest remainder. Conserves the total; never gives a
/// smaller budget to a strictly larger contribution. Scaling every phi by a
/// positive constant leaves the result unchanged.
BudgetAllocation allocate_budgets(const std::vector<double>& phi, int total, int b_min);

/// Baseline policies used for allocation comparisons.
BudgetAllocation allocate_uniform(int m, int total, int b_min);
BudgetAllocation allocate_random(int m, int total, int b_min, Rng& rng);

/// Coalition probe schedule: always starts with all-weak and all-strong, then
/// fills the quota with distinct coalitions whose sizes follow the kernel
/// weight distribution. Deterministic given the seed. A quota of 2^m or more
/// enumerates every coalition.
std::vector<CoalitionMask> schedule_coalition_probes(int m, int quota, std::uint64_t seed);

/// Formatting helpers for the line-delimited coalition sample format
/// {"z": "0101", "v": 0.7}; character k of z is step k, '1' = strong.
std::string mask_to_bits(CoalitionMask mask, int m);
CoalitionMask bits_to_mask(const std::string& bits);

}  // namespace adopt
