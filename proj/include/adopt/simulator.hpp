#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace adopt {

/// One synthetic pipeline step. Its quality improves when the step-level
/// optimizer draws candidates; gains shrink as quality approaches the cap.
struct SyntheticStep {
  double quality = 0.5;  // current q in [0, 1]
  double cap = 0.95;     // best reachable quality
  double rate = 0.5;     // fraction of the remaining headroom a perfect draw closes
  double noise = 0.01;   // observation noise on coalition scores
};

enum class AllocationPolicy { Uniform, Random, Shapley };

AllocationPolicy parse_policy(const std::string& name);
std::string policy_name(AllocationPolicy policy);

struct SimulationOptions {
  int m = 4;
  AllocationPolicy policy = AllocationPolicy::Shapley;
  double target = 0.80;     // end-to-end score (product of step qualities) to reach
  int total_budget = 12;    // candidate draws per iteration, split across steps
  int b_min = 1;
  int runs = 50;
  std::uint64_t seed = 0;
  int iteration_cap = 64;
  int coalition_quota = 12;           // weak/strong probes per iteration (shapley policy)
  std::vector<SyntheticStep> steps;   // empty: default_heterogeneous_steps(m)
};

struct SimulationResult {
  std::string policy_id;
  std::vector<int> iterations;    // per run; capped runs hold iteration_cap
  std::vector<bool> censored;     // true when the cap was hit before the target
  double mean = 0.0;
  double stddev = 0.0;

  nlohmann::json to_json() const;
};

/// Runs the synthetic optimization loop under the chosen allocation policy
/// and reports iterations-to-target per run. Deterministic given the seed;
/// run r draws step improvements from a generator seeded with seed + r, so
/// policies that allocate identically produce identical iteration counts.
SimulationResult simulate_allocation(const SimulationOptions& options);

/// One low-quality high-headroom step, the rest nearly saturated.
std::vector<SyntheticStep> default_heterogeneous_steps(int m);
std::vector<SyntheticStep> homogeneous_steps(int m, SyntheticStep prototype);

}  // namespace adopt
