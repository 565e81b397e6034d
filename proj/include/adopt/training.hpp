#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "adopt/gradient.hpp"
#include "adopt/selector.hpp"
#include "adopt/tasks.hpp"

namespace adopt {

struct StepConfig {
  std::string optimizer = "instruct";  // "instruct" | "joint"
  int k_demos = 2;
};

struct TrainingConfig {
  int rounds = 3;
  int minibatch_size = 4;
  double threshold = 1.0;
  int patience = 0;  // rounds without dev improvement before stopping; 0 disables
  int selector_budget = 12;
  int coalition_quota = 6;
  SearchStrategy strategy = SearchStrategy::Surrogate;
  int total_budget = 8;  // candidate budget B split across steps each round
  int b_min = 1;
  int eval_slice = 4;  // held-out dev cases scoring each configuration
  std::uint64_t seed = 0;
  std::string allocation = "shapley";  // "shapley" | "uniform" | "random"
  std::map<std::string, StepConfig> step_configs;  // key "*" sets the default
  int max_pairs_shown = 8;
  int jobs = 1;
  std::string optimizer_model_ref = "optimizer/instruct";

  StepConfig step_config(const std::string& step_id) const;
  void validate(int step_count) const;
};

struct RoundReport {
  int round = 0;
  std::string status;  // "ok" | "no_op" | "failed: ..."
  std::vector<std::string> minibatch_ids;
  int good_count = 0;
  int bad_count = 0;
  std::map<std::string, int> dataset_sizes;     // K_i
  std::map<std::string, int> candidate_counts;  // n_i including the incumbent
  std::vector<EvaluatedConfig> evaluated;
  std::vector<ValueSample> coalition_samples;  // weak/strong probes, (z, v)
  std::vector<double> phi;  // empty when carried forward
  std::map<std::string, int> budgets;
  std::map<std::string, int> selected;  // chosen candidate index per step
  double dev_score = 0.0;
  int evaluator_calls = 0;

  nlohmann::json to_json(const std::vector<std::string>& step_order) const;
};

struct TrainingState {
  PromptMap current_prompts;
  std::vector<int> budgets;  // aligned with pipeline step order
  int round = 0;
  double best_dev_score = -1.0;  // negative: no round scored yet
  PromptMap best_prompts;
  std::vector<double> last_phi;
  int rounds_without_improvement = 0;
  int epoch = 0;
  std::size_t epoch_cursor = 0;
};

struct TrainingResult {
  PromptMap final_prompts;
  std::vector<RoundReport> reports;
  double best_dev_score = -1.0;
};

/// The outer loop: minibatch execution, good/bad partition, gradient stages,
/// per-step optimization under the round budgets, global selection, kernel
/// attribution from the coalition probes, and budget reallocation.
class Trainer {
 public:
  Trainer(Pipeline pipeline, TaskMetric metric, GradientEngine engine, TrainingConfig config,
          ModelBackend& backend);

  /// Receives every executed minibatch trace, in minibatch order. Used to
  /// persist traces as line-delimited records alongside the round reports.
  using TraceSink = std::function<void(const Trace&)>;
  void set_trace_sink(TraceSink sink) { trace_sink_ = std::move(sink); }

  TrainingState initial_state(const PromptMap& initial_prompts) const;

  /// Executes one full round. A round with zero bad cases is a recorded no-op
  /// preserving prompts and budgets; any stage failure aborts the round with
  /// the state unchanged and the failure recorded in the report.
  std::pair<TrainingState, RoundReport> run_round(const TrainingState& state,
                                                  const Dataset& train, const Dataset& dev);

  /// Runs at most config.rounds rounds with early stopping on dev plateaus.
  TrainingResult run_training(const PromptMap& initial_prompts, const Dataset& train,
                              const Dataset& dev);

  const std::vector<std::string>& step_order() const { return step_order_; }

 private:
  double evaluate_prompts(const PromptMap& prompts, const Dataset& dev,
                          const std::vector<std::size_t>& slice) const;
  std::vector<std::size_t> dev_slice(const Dataset& dev) const;

  Pipeline pipeline_;
  TaskMetric metric_;
  GradientEngine engine_;
  TrainingConfig config_;
  ModelBackend& backend_;
  std::vector<std::string> step_order_;
  TraceSink trace_sink_;
};

/// Self-contained prompt bundle: every template with its version.
nlohmann::json prompt_bundle_to_json(const PromptMap& prompts);
PromptMap prompt_map_from_bundle(const nlohmann::json& bundle);

}  // namespace adopt
