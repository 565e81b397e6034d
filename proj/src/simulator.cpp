#include "adopt/simulator.hpp"

#include <algorithm>
#include <cmath>

#include "adopt/common.hpp"
#include "adopt/shapley.hpp"
#include "adopt/util.hpp"

namespace adopt {

AllocationPolicy parse_policy(const std::string& name) {
  if (name == "uniform") return AllocationPolicy::Uniform;
  if (name == "random") return AllocationPolicy::Random;
  if (name == "shapley") return AllocationPolicy::Shapley;
  throw ConfigError("unknown allocation policy: " + name);
}

std::string policy_name(AllocationPolicy policy) {
  switch (policy) {
    case AllocationPolicy::Uniform: return "uniform";
    case AllocationPolicy::Random: return "random";
    case AllocationPolicy::Shapley: return "shapley";
  }
  return "uniform";
}

namespace {

// Only draws near the top of the candidate distribution close real headroom:
// a draw u contributes u^kDrawShape of the step's rate. This is what makes
// extra candidate budget on the right step pay off.
constexpr double kDrawShape = 5.0;

double product_quality(const std::vector<SyntheticStep>& steps) {
  double score = 1.0;
  for (const auto& step : steps) score *= step.quality;
  return score;
}

double clamp01(double value) { return std::clamp(value, 0.0, 1.0); }

}  // namespace

nlohmann::json SimulationResult::to_json() const {
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t i = 0; i < iterations.size(); ++i) {
    runs.push_back({{"run", i}, {"iterations", iterations[i]}, {"censored", bool(censored[i])}});
  }
  return {{"policy", policy_id}, {"mean", mean}, {"stddev", stddev}, {"runs", runs}};
}

std::vector<SyntheticStep> default_heterogeneous_steps(int m) {
  std::vector<SyntheticStep> steps(m);
  for (int i = 0; i < m; ++i) {
    if (i == 0) {
      steps[i] = {0.30, 0.99, 0.80, 0.01};  // the critical step: low quality, large headroom
    } else {
      steps[i] = {0.95, 0.96, 0.20, 0.01};  // saturated: budget spent here is wasted
    }
  }
  return steps;
}

std::vector<SyntheticStep> homogeneous_steps(int m, SyntheticStep prototype) {
  return std::vector<SyntheticStep>(m, prototype);
}

SimulationResult simulate_allocation(const SimulationOptions& options) {
  if (options.m < 1) throw ContractError("simulate_allocation: m must be >= 1");
  if (!(options.target > 0.0 && options.target <= 1.0)) {
    throw ContractError("simulate_allocation: target must be in (0, 1]");
  }
  if (options.runs < 1) throw ContractError("simulate_allocation: runs must be >= 1");
  if (options.iteration_cap < 1) throw ContractError("simulate_allocation: iteration_cap must be >= 1");

  std::vector<SyntheticStep> initial_steps =
      options.steps.empty() ? default_heterogeneous_steps(options.m) : options.steps;
  if (static_cast<int>(initial_steps.size()) != options.m) {
    throw ContractError("simulate_allocation: step parameter count does not match m");
  }
  for (const auto& step : initial_steps) {
    if (step.quality < 0.0 || step.quality > 1.0 || step.cap < 0.0 || step.cap > 1.0) {
      throw ContractError("simulate_allocation: step qualities and caps must lie in [0, 1]");
    }
  }

  const int m = options.m;
  const int quota = static_cast<int>(
      std::min<long long>(options.coalition_quota, 1LL << std::min(m, 20)));
  double observation_noise = 0.0;
  for (const auto& step : initial_steps) observation_noise += step.noise;
  observation_noise /= m;

  SimulationResult result;
  result.policy_id = policy_name(options.policy);
  result.iterations.reserve(options.runs);
  result.censored.reserve(options.runs);

  for (int run = 0; run < options.runs; ++run) {
    // The improvement draws come from their own stream so that two policies
    // making identical allocations see identical trajectories.
    Rng draw_rng(options.seed + static_cast<std::uint64_t>(run));
    Rng policy_rng(mix_seed(options.seed + static_cast<std::uint64_t>(run), 0x9a11c7));

    std::vector<SyntheticStep> steps = initial_steps;
    std::vector<int> budgets = allocate_uniform(m, options.total_budget, options.b_min).budgets;

    int iterations = 0;
    bool reached = product_quality(steps) >= options.target;
    while (!reached && iterations < options.iteration_cap) {
      ++iterations;

      // Step-level optimization: the best of b_i candidate draws closes part
      // of the remaining headroom, with diminishing returns near the cap.
      std::vector<double> strong(m);
      for (int i = 0; i < m; ++i) {
        double best_draw = 0.0;
        for (int d = 0; d < budgets[i]; ++d) best_draw = std::max(best_draw, draw_rng.next_unit());
        double headroom = std::max(0.0, steps[i].cap - steps[i].quality);
        double gain = headroom * steps[i].rate * std::pow(best_draw, kDrawShape);
        strong[i] = std::min(steps[i].cap, steps[i].quality + gain);
      }

      // Reallocate for the next iteration.
      switch (options.policy) {
        case AllocationPolicy::Uniform:
          break;
        case AllocationPolicy::Random:
          budgets = allocate_random(m, options.total_budget, options.b_min, policy_rng).budgets;
          break;
        case AllocationPolicy::Shapley: {
          if (quota >= 2 && m <= 20) {
            auto masks = schedule_coalition_probes(
                m, quota, mix_seed(options.seed + run, 0xc0a1 + iterations));
            std::vector<ValueSample> samples;
            samples.reserve(masks.size());
            for (CoalitionMask mask : masks) {
              double value = 1.0;
              for (int i = 0; i < m; ++i) {
                value *= ((mask >> i) & 1) ? strong[i] : steps[i].quality;
              }
              value = clamp01(value + observation_noise * policy_rng.next_normal());
              samples.push_back({mask, value});
            }
            auto estimate = kernel_shap(samples, m);
            budgets =
                allocate_budgets(estimate.phi, options.total_budget, options.b_min).budgets;
          }
          break;
        }
      }

      // Every step adopts its round-best candidate; quality never decreases.
      for (int i = 0; i < m; ++i) steps[i].quality = strong[i];
      reached = product_quality(steps) >= options.target;
    }

    result.iterations.push_back(iterations);
    result.censored.push_back(!reached);
  }

  double sum = 0.0;
  for (int it : result.iterations) sum += it;
  result.mean = sum / result.iterations.size();
  double sq = 0.0;
  for (int it : result.iterations) sq += (it - result.mean) * (it - result.mean);
  result.stddev = result.iterations.size() > 1
                      ? std::sqrt(sq / (result.iterations.size() - 1))
                      : 0.0;
  return result;
}

}  // namespace adopt
