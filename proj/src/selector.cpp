#include "adopt/selector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "adopt/util.hpp"

namespace adopt {

SearchStrategy parse_strategy(const std::string& name) {
  if (name == "surrogate") return SearchStrategy::Surrogate;
  if (name == "random") return SearchStrategy::Random;
  if (name == "exhaustive") return SearchStrategy::Exhaustive;
  throw ConfigError("unknown selector strategy: " + name);
}

std::string strategy_name(SearchStrategy strategy) {
  switch (strategy) {
    case SearchStrategy::Surrogate: return "surrogate";
    case SearchStrategy::Random: return "random";
    case SearchStrategy::Exhaustive: return "exhaustive";
  }
  return "surrogate";
}

namespace {

/// Additive per-candidate statistics backing the surrogate search and the
/// strong-prompt choice.
class SurrogateModel {
 public:
  explicit SurrogateModel(const std::vector<CandidateSet>& sets) {
    visits_.resize(sets.size());
    means_.resize(sets.size());
    for (std::size_t i = 0; i < sets.size(); ++i) {
      visits_[i].assign(sets[i].candidates.size(), 0);
      means_[i].assign(sets[i].candidates.size(), 0.0);
    }
  }

  void observe(const PromptConfiguration& config, double score) {
    total_score_ += score;
    total_count_ += 1;
    for (std::size_t i = 0; i < config.choice.size(); ++i) {
      int c = config.choice[i];
      int n = ++visits_[i][c];
      means_[i][c] += (score - means_[i][c]) / n;
    }
  }

  int visits(std::size_t step, int candidate) const { return visits_[step][candidate]; }
  double mean(std::size_t step, int candidate) const { return means_[step][candidate]; }
  double global_mean() const { return total_count_ > 0 ? total_score_ / total_count_ : 0.0; }

  /// Acquisition value: observed mean plus an uncertainty bonus that decays
  /// as 1/sqrt(visits). Unvisited candidates rank above everything.
  double acquisition(std::size_t step, int candidate) const {
    int n = visits_[step][candidate];
    if (n == 0) return std::numeric_limits<double>::max();
    return means_[step][candidate] + kBonus / std::sqrt(static_cast<double>(n));
  }

  /// The strong choice for a step: highest observed mean, ties to lower
  /// index; incumbent when nothing but the incumbent has evidence.
  int strong_choice(std::size_t step, const CandidateSet& set) const {
    int best = set.incumbent_index;
    double best_mean = -std::numeric_limits<double>::max();
    bool any = false;
    for (int c = 0; c < static_cast<int>(set.candidates.size()); ++c) {
      if (visits_[step][c] == 0) continue;
      double mean = means_[step][c];
      if (!any || mean > best_mean) {
        best = c;
        best_mean = mean;
        any = true;
      }
    }
    if (!any) {
      // No evidence at all: fall back to the first non-incumbent candidate.
      for (int c = 0; c < static_cast<int>(set.candidates.size()); ++c) {
        if (c != set.incumbent_index) return c;
      }
    }
    return best;
  }

 private:
  static constexpr double kBonus = 0.25;
  std::vector<std::vector<int>> visits_;
  std::vector<std::vector<double>> means_;
  double total_score_ = 0.0;
  int total_count_ = 0;
};

class ConfigSearch {
 public:
  ConfigSearch(const std::vector<CandidateSet>& sets, SearchStrategy strategy, std::uint64_t seed)
      : sets_(sets), strategy_(strategy), rng_(seed) {}

  void mark_visited(const PromptConfiguration& config) { visited_.insert(config); }
  bool is_visited(const PromptConfiguration& config) const { return visited_.count(config) > 0; }

  std::optional<PromptConfiguration> propose(const SurrogateModel& model,
                                             const PromptConfiguration& anchor) {
    switch (strategy_) {
      case SearchStrategy::Exhaustive: return next_lexicographic();
      case SearchStrategy::Random: return next_random();
      case SearchStrategy::Surrogate: return next_surrogate(model, anchor);
    }
    return std::nullopt;
  }

 private:
  std::optional<PromptConfiguration> next_lexicographic() {
    PromptConfiguration config;
    config.choice.assign(sets_.size(), 0);
    while (true) {
      if (!is_visited(config)) return config;
      // Odometer increment over the candidate index space.
      std::size_t pos = 0;
      while (pos < sets_.size()) {
        if (++config.choice[pos] < static_cast<int>(sets_[pos].candidates.size())) break;
        config.choice[pos] = 0;
        ++pos;
      }
      if (pos == sets_.size()) return std::nullopt;  // space exhausted
    }
  }

  std::optional<PromptConfiguration> next_random() {
    for (int attempt = 0; attempt < 64; ++attempt) {
      PromptConfiguration config;
      config.choice.reserve(sets_.size());
      for (const auto& set : sets_) {
        config.choice.push_back(static_cast<int>(rng_.next_index(set.candidates.size())));
      }
      if (!is_visited(config)) return config;
    }
    return next_lexicographic();
  }

  std::optional<PromptConfiguration> next_surrogate(const SurrogateModel& model,
                                                    const PromptConfiguration& anchor) {
    // Coordinate ascent on the acquisition value, starting from the anchor
    // (the best configuration found so far).
    PromptConfiguration config = anchor;
    for (std::size_t pass = 0; pass < sets_.size() + 1; ++pass) {
      bool changed = false;
      for (std::size_t i = 0; i < sets_.size(); ++i) {
        int best = config.choice[i];
        double best_value = model.acquisition(i, best);
        for (int c = 0; c < static_cast<int>(sets_[i].candidates.size()); ++c) {
          double value = model.acquisition(i, c);
          if (value > best_value) {
            best = c;
            best_value = value;
          }
        }
        if (best != config.choice[i]) {
          config.choice[i] = best;
          changed = true;
        }
      }
      if (!changed) break;
    }
    if (!is_visited(config)) return config;

    // Already evaluated: deterministic single-coordinate repair, preferring
    // the least-visited candidate on each step.
    for (std::size_t i = 0; i < sets_.size(); ++i) {
      std::vector<int> order(sets_[i].candidates.size());
      for (std::size_t c = 0; c < order.size(); ++c) order[c] = static_cast<int>(c);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return model.visits(i, a) < model.visits(i, b);
      });
      for (int c : order) {
        PromptConfiguration tweaked = config;
        tweaked.choice[i] = c;
        if (!is_visited(tweaked)) return tweaked;
      }
    }
    return next_lexicographic();
  }

  const std::vector<CandidateSet>& sets_;
  SearchStrategy strategy_;
  Rng rng_;
  std::set<PromptConfiguration> visited_;
};

}  // namespace

SelectionResult select_configuration(const std::vector<CandidateSet>& candidate_sets,
                                     const ConfigEvaluator& evaluator,
                                     const SelectorOptions& options) {
  const int m = static_cast<int>(candidate_sets.size());
  if (m == 0) throw ContractError("select_configuration: no candidate sets");
  if (m > 20) throw ContractError("select_configuration: more than 20 steps is unsupported");
  if (options.budget < 1) throw ContractError("select_configuration: budget must be >= 1");
  for (const auto& set : candidate_sets) {
    if (set.candidates.empty()) {
      throw ContractError("candidate set for step '" + set.step_id + "' is empty");
    }
    if (set.incumbent_index < 0 ||
        set.incumbent_index >= static_cast<int>(set.candidates.size())) {
      throw ContractError("candidate set for step '" + set.step_id +
                          "' has an out-of-range incumbent index");
    }
  }

  PromptConfiguration incumbent;
  incumbent.choice.reserve(m);
  for (const auto& set : candidate_sets) incumbent.choice.push_back(set.incumbent_index);

  SurrogateModel model(candidate_sets);
  ConfigSearch search(candidate_sets, options.strategy, mix_seed(options.seed, 0x5e1ec7));
  SelectionResult result;
  result.evaluator_calls = 0;

  auto is_better = [&](const EvaluatedConfig& challenger, const EvaluatedConfig& champion) {
    if (challenger.score != champion.score) return challenger.score > champion.score;
    if (champion.config == incumbent) return false;  // ties resolve toward the incumbent
    if (challenger.config == incumbent) return true;
    return challenger.config < champion.config;
  };

  auto evaluate = [&](const PromptConfiguration& config,
                      std::optional<CoalitionMask> coalition) -> double {
    double score = evaluator(config);
    result.evaluator_calls += 1;
    model.observe(config, score);
    search.mark_visited(config);
    EvaluatedConfig entry{config, score, coalition};
    result.history.push_back(entry);
    if (result.history.size() == 1 || is_better(entry, result.best)) result.best = entry;
    return score;
  };

  // The incumbent always goes first; it doubles as the all-weak coalition.
  double incumbent_score = evaluate(incumbent, CoalitionMask{0});
  result.coalition_samples.push_back({CoalitionMask{0}, incumbent_score});

  const int quota = std::min(options.coalition_quota, options.budget);
  const bool probes_enabled = quota >= 2;
  int free_calls = probes_enabled ? options.budget - quota : options.budget - 1;

  for (int call = 0; call < free_calls; ++call) {
    auto proposal = search.propose(model, result.best.config);
    if (!proposal) break;  // configuration space exhausted
    evaluate(*proposal, std::nullopt);
  }

  // Fix the strong prompt per step, then spend the tail of the budget on
  // weak/strong coalition probes.
  result.strong_choice.resize(m);
  for (int i = 0; i < m; ++i) {
    result.strong_choice[i] = model.strong_choice(i, candidate_sets[i]);
  }

  if (probes_enabled) {
    auto masks = schedule_coalition_probes(m, quota, mix_seed(options.seed, 0xc0a7));
    for (CoalitionMask mask : masks) {
      if (mask == 0) continue;  // already covered by the incumbent evaluation
      if (static_cast<int>(result.evaluator_calls) >= options.budget) break;
      PromptConfiguration config;
      config.choice.resize(m);
      for (int i = 0; i < m; ++i) {
        config.choice[i] = ((mask >> i) & 1) ? result.strong_choice[i] : incumbent.choice[i];
      }
      double score;
      if (search.is_visited(config)) {
        // Same prompt assignment as an earlier evaluation: reuse its score
        // as the coalition observation rather than re-running the pipeline.
        auto it = std::find_if(result.history.begin(), result.history.end(),
                               [&](const EvaluatedConfig& e) { return e.config == config; });
        score = it->score;
        if (!it->coalition) it->coalition = mask;
      } else {
        score = evaluate(config, mask);
      }
      result.coalition_samples.push_back({mask, score});
    }
  }

  // Any remaining budget goes back to free exploration.
  while (static_cast<int>(result.evaluator_calls) < options.budget) {
    auto proposal = search.propose(model, result.best.config);
    if (!proposal) {
      // Space exhausted: burn the remaining calls on the best configuration
      // so the per-round evaluation cost stays constant.
      evaluator(result.best.config);
      result.evaluator_calls += 1;
      continue;
    }
    evaluate(*proposal, std::nullopt);
  }

  return result;
}

}  // namespace adopt
