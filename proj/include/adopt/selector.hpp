#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adopt/pipeline.hpp"
#include "adopt/shapley.hpp"

namespace adopt {

/// Candidate prompts generated for one step in a round. The incumbent (the
/// prompt accepted in the previous round) is always present.
struct CandidateSet {
  std::string step_id;
  std::vector<PromptTemplate> candidates;
  int incumbent_index = 0;

  const PromptTemplate& incumbent() const { return candidates.at(incumbent_index); }
};

/// One point of the joint space: a candidate index per step, in step order.
struct PromptConfiguration {
  std::vector<int> choice;

  bool operator==(const PromptConfiguration&) const = default;
  bool operator<(const PromptConfiguration& other) const { return choice < other.choice; }
};

struct EvaluatedConfig {
  PromptConfiguration config;
  double score = 0.0;
  /// Set when the configuration is a pure weak/strong assignment.
  std::optional<CoalitionMask> coalition;
};

enum class SearchStrategy { Surrogate, Random, Exhaustive };

SearchStrategy parse_strategy(const std::string& name);
std::string strategy_name(SearchStrategy strategy);

struct SelectorOptions {
  int budget = 12;
  int coalition_quota = 6;
  SearchStrategy strategy = SearchStrategy::Surrogate;
  std::uint64_t seed = 0;
};

using ConfigEvaluator = std::function<double(const PromptConfiguration&)>;

struct SelectionResult {
  EvaluatedConfig best;
  std::vector<EvaluatedConfig> history;  // one entry per distinct configuration
  std::vector<int> strong_choice;        // the per-step strong candidate index
  std::vector<ValueSample> coalition_samples;
  std::size_t evaluator_calls = 0;
};

/// Searches the joint candidate space under a fixed evaluation budget.
///
/// The incumbent configuration is always evaluated first (it doubles as the
/// all-weak coalition sample). A free-exploration phase driven by the chosen
/// strategy follows; the per-step strong prompt is then fixed from the
/// surrogate means, and the remaining calls probe weak/strong coalitions
/// scheduled by kernel-weighted size sampling. Exactly `budget` evaluator
/// calls are made. Ties resolve toward the incumbent, then toward lower
/// candidate indices.
SelectionResult select_configuration(const std::vector<CandidateSet>& candidate_sets,
                                     const ConfigEvaluator& evaluator,
                                     const SelectorOptions& options);

}  // namespace adopt
