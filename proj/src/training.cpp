#include "adopt/training.hpp"

#include <algorithm>
#include <numeric>
#include <thread>

#include "adopt/util.hpp"

namespace adopt {
namespace {

/// Index-parallel loop; results must be written through the index so the
/// outcome does not depend on thread timing.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& body) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  const int workers = std::min<std::size_t>(jobs, count);
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&, w]() {
      try {
        for (std::size_t i = w; i < count; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& thread : threads) thread.join();
  for (auto& error : errors) {
    if (error) std::rethrow_exception(error);
  }
}

}  // namespace

StepConfig TrainingConfig::step_config(const std::string& step_id) const {
  auto it = step_configs.find(step_id);
  if (it != step_configs.end()) return it->second;
  auto fallback = step_configs.find("*");
  if (fallback != step_configs.end()) return fallback->second;
  return StepConfig{};
}

void TrainingConfig::validate(int step_count) const {
  if (rounds < 0) throw ConfigError("rounds must be >= 0");
  if (minibatch_size < 1) throw ConfigError("minibatch_size must be >= 1");
  if (threshold < 0.0 || threshold > 1.0) throw ConfigError("threshold must be in [0, 1]");
  if (selector_budget < 1) throw ConfigError("selector.budget must be >= 1");
  if (coalition_quota < 2) throw ConfigError("selector.coalition_quota must be >= 2");
  if (selector_budget < coalition_quota) {
    throw ConfigError("selector.budget must be >= selector.coalition_quota");
  }
  if (b_min < 1) throw ConfigError("budgets.min must be >= 1");
  if (total_budget < step_count * b_min) {
    throw ConfigError("budgets.total must be >= step count * budgets.min");
  }
  if (eval_slice < 1) throw ConfigError("eval_slice must be >= 1");
  if (allocation != "shapley" && allocation != "uniform" && allocation != "random") {
    throw ConfigError("allocation must be one of shapley|uniform|random");
  }
  for (const auto& [step_id, step_config] : step_configs) {
    find_optimizer(step_config.optimizer);
    if (step_config.k_demos < 0) {
      throw ConfigError("k_demos must be >= 0 (step '" + step_id + "')");
    }
  }
}

nlohmann::json RoundReport::to_json(const std::vector<std::string>& step_order) const {
  nlohmann::json evaluated_json = nlohmann::json::array();
  for (const auto& entry : evaluated) {
    nlohmann::json choice;
    for (std::size_t i = 0; i < entry.config.choice.size() && i < step_order.size(); ++i) {
      choice[step_order[i]] = entry.config.choice[i];
    }
    nlohmann::json row = {{"choice", choice}, {"score", entry.score}};
    row["coalition"] = entry.coalition
                           ? nlohmann::json(mask_to_bits(*entry.coalition,
                                                         static_cast<int>(step_order.size())))
                           : nlohmann::json(nullptr);
    evaluated_json.push_back(row);
  }
  nlohmann::json samples_json = nlohmann::json::array();
  for (const auto& sample : coalition_samples) {
    samples_json.push_back(
        {{"z", mask_to_bits(sample.mask, static_cast<int>(step_order.size()))},
         {"v", sample.value}});
  }
  return {{"round", round},
          {"coalition_samples", samples_json},
          {"status", status},
          {"minibatch", minibatch_ids},
          {"good_count", good_count},
          {"bad_count", bad_count},
          {"dataset_sizes", dataset_sizes},
          {"candidate_counts", candidate_counts},
          {"evaluated", evaluated_json},
          {"phi", phi},
          {"budgets", budgets},
          {"selected", selected},
          {"dev_score", dev_score},
          {"evaluator_calls", evaluator_calls}};
}

Trainer::Trainer(Pipeline pipeline, TaskMetric metric, GradientEngine engine,
                 TrainingConfig config, ModelBackend& backend)
    : pipeline_(std::move(pipeline)),
      metric_(std::move(metric)),
      engine_(std::move(engine)),
      config_(std::move(config)),
      backend_(backend) {
  for (const auto& step : pipeline_.steps) step_order_.push_back(step.step_id);
  config_.validate(static_cast<int>(step_order_.size()));
}

TrainingState Trainer::initial_state(const PromptMap& initial_prompts) const {
  for (const auto& step : pipeline_.steps) {
    auto it = initial_prompts.find(step.step_id);
    if (it == initial_prompts.end()) {
      throw ConfigError("initial prompts do not cover step '" + step.step_id + "'");
    }
    it->second.validate();
  }
  TrainingState state;
  state.current_prompts = initial_prompts;
  state.best_prompts = initial_prompts;
  // Before any contribution estimate exists every step gets the same budget.
  state.budgets = allocate_uniform(static_cast<int>(step_order_.size()), config_.total_budget,
                                   config_.b_min)
                      .budgets;
  return state;
}

std::vector<std::size_t> Trainer::dev_slice(const Dataset& dev) const {
  if (dev.empty()) throw ConfigError("dev dataset is empty");
  std::vector<std::size_t> indices(dev.size());
  std::iota(indices.begin(), indices.end(), 0);
  Rng rng(mix_seed(config_.seed, 0xde5));
  rng.shuffle(indices);
  indices.resize(std::min<std::size_t>(indices.size(), config_.eval_slice));
  std::sort(indices.begin(), indices.end());
  return indices;
}

double Trainer::evaluate_prompts(const PromptMap& prompts, const Dataset& dev,
                                 const std::vector<std::size_t>& slice) const {
  std::vector<double> scores(slice.size(), 0.0);
  parallel_for(slice.size(), config_.jobs, [&](std::size_t k) {
    const DataCase& data = dev[slice[k]];
    Trace trace = execute(pipeline_, prompts, data.input, backend_,
                          mix_seed(config_.seed, 0xe7a1 + slice[k]),
                          "dev:" + std::to_string(slice[k]));
    scores[k] = metric_.score(trace.final_output, data.label);
  });
  double total = 0.0;
  for (double score : scores) total += score;
  return total / scores.size();
}

std::pair<TrainingState, RoundReport> Trainer::run_round(const TrainingState& state,
                                                         const Dataset& train,
                                                         const Dataset& dev) {
  if (train.empty()) throw ConfigError("train dataset is empty");
  const int round_index = state.round + 1;
  const int m = static_cast<int>(step_order_.size());

  TrainingState next = state;
  next.round = round_index;
  RoundReport report;
  report.round = round_index;
  for (int i = 0; i < m; ++i) report.budgets[step_order_[i]] = state.budgets[i];

  // Minibatch sampling: without replacement within an epoch.
  std::vector<std::size_t> batch;
  {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng epoch_rng(mix_seed(config_.seed, 0xe90c + next.epoch));
    epoch_rng.shuffle(order);
    std::size_t cursor = next.epoch_cursor;
    while (batch.size() < std::min<std::size_t>(config_.minibatch_size, train.size())) {
      if (cursor >= order.size()) {
        next.epoch += 1;
        cursor = 0;
        Rng reshuffle(mix_seed(config_.seed, 0xe90c + next.epoch));
        std::iota(order.begin(), order.end(), 0);
        reshuffle.shuffle(order);
      }
      batch.push_back(order[cursor++]);
    }
    next.epoch_cursor = cursor;
  }
  for (std::size_t index : batch) report.minibatch_ids.push_back("train:" + std::to_string(index));

  const auto slice = dev_slice(dev);

  try {
    // Execute the minibatch and partition by the metric.
    std::vector<std::pair<Trace, std::string>> executed(batch.size());
    parallel_for(batch.size(), config_.jobs, [&](std::size_t k) {
      const DataCase& data = train[batch[k]];
      Trace trace = execute(pipeline_, state.current_prompts, data.input, backend_,
                            mix_seed(config_.seed, batch[k]), report.minibatch_ids[k]);
      executed[k] = {std::move(trace), data.label};
    });
    if (trace_sink_) {
      for (const auto& [trace, label] : executed) trace_sink_(trace);
    }
    auto [good, bad] = score_and_partition(executed, metric_, config_.threshold);
    report.good_count = static_cast<int>(good.size());
    report.bad_count = static_cast<int>(bad.size());

    if (bad.empty()) {
      // Nothing to learn from: a recorded no-op round.
      report.status = "no_op";
      report.dev_score = evaluate_prompts(state.current_prompts, dev, slice);
      for (int i = 0; i < m; ++i) {
        report.selected[step_order_[i]] = 0;
        report.candidate_counts[step_order_[i]] = 1;
      }
      if (report.dev_score > next.best_dev_score) {
        next.best_dev_score = report.dev_score;
        next.best_prompts = next.current_prompts;
        next.rounds_without_improvement = 0;
      } else {
        next.rounds_without_improvement += 1;
      }
      return {next, report};
    }

    // Gradient stages E1..E6.
    PipelineUnderstanding understanding =
        engine_.analyze_pipeline(pipeline_, state.current_prompts, backend_);
    DependencyReport dependencies = engine_.analyze_dependencies(understanding, good, backend_);

    std::vector<Trace> bad_traces;
    std::vector<RevisedOutput> revised;
    for (const auto& scored : bad) {
      TextualLoss loss = engine_.compute_textual_loss(scored, metric_, backend_);
      GlobalGradient global = engine_.compute_global_gradient(loss, backend_);
      std::vector<LocalGradient> locals =
          engine_.compute_local_gradients(global, dependencies, scored.trace, backend_);
      std::vector<RevisedOutput> outputs =
          engine_.generate_revised_outputs(locals, scored.trace, backend_);
      revised.insert(revised.end(), outputs.begin(), outputs.end());
      bad_traces.push_back(scored.trace);
    }
    auto datasets = build_step_datasets(revised, bad_traces);
    for (const auto& step_id : step_order_) {
      auto it = datasets.find(step_id);
      report.dataset_sizes[step_id] =
          it != datasets.end() ? static_cast<int>(it->second.pairs.size()) : 0;
    }

    // Decoupled per-step optimization under the round budgets.
    std::vector<CandidateSet> candidate_sets;
    for (int i = 0; i < m; ++i) {
      const std::string& step_id = step_order_[i];
      StepConfig step_config = config_.step_config(step_id);
      const StepOptimizer& optimizer = find_optimizer(step_config.optimizer);

      StepDataset dataset;
      if (auto it = datasets.find(step_id); it != datasets.end()) dataset = it->second;
      dataset.step_id = step_id;

      StepOptimizerOptions options;
      options.k_demos = step_config.k_demos;
      options.max_pairs_shown = config_.max_pairs_shown;
      options.seed = config_.seed;
      options.model_ref = config_.optimizer_model_ref;
      if (auto dep = dependencies.dependency.find(step_id);
          dep != dependencies.dependency.end()) {
        options.dependency_hint = dep->second;
      }

      OptimizerBudget budget{step_id, state.budgets[i]};
      CandidateSet set = optimizer.optimize(dataset, state.current_prompts.at(step_id), budget,
                                            backend_, options);
      report.candidate_counts[step_id] = static_cast<int>(set.candidates.size());
      candidate_sets.push_back(std::move(set));
    }

    // Global selection over the joint candidate space.
    ConfigEvaluator evaluator = [&](const PromptConfiguration& config) {
      PromptMap prompts;
      for (int i = 0; i < m; ++i) {
        prompts[step_order_[i]] = candidate_sets[i].candidates.at(config.choice[i]);
      }
      return evaluate_prompts(prompts, dev, slice);
    };
    SelectorOptions selector_options;
    selector_options.budget = config_.selector_budget;
    selector_options.coalition_quota = config_.coalition_quota;
    selector_options.strategy = config_.strategy;
    selector_options.seed = mix_seed(config_.seed, 0x5e1 + round_index);
    SelectionResult selection = select_configuration(candidate_sets, evaluator, selector_options);

    report.evaluated = selection.history;
    report.coalition_samples = selection.coalition_samples;
    report.evaluator_calls = static_cast<int>(selection.evaluator_calls);
    report.dev_score = selection.best.score;
    for (int i = 0; i < m; ++i) {
      report.selected[step_order_[i]] = selection.best.config.choice[i];
    }

    // Accept the selected configuration.
    for (int i = 0; i < m; ++i) {
      next.current_prompts[step_order_[i]] =
          candidate_sets[i].candidates.at(selection.best.config.choice[i]);
    }

    // Contribution estimation from the coalition probes, then reallocation.
    std::vector<double> phi = state.last_phi;
    if (config_.allocation == "shapley") {
      if (static_cast<int>(selection.coalition_samples.size()) >= m + 2 || m == 1) {
        phi = kernel_shap(selection.coalition_samples, m).phi;
        report.phi = phi;
      }
      if (!phi.empty()) {
        next.budgets = allocate_budgets(phi, config_.total_budget, config_.b_min).budgets;
      }
    } else if (config_.allocation == "uniform") {
      next.budgets = allocate_uniform(m, config_.total_budget, config_.b_min).budgets;
    } else {
      Rng rng(mix_seed(config_.seed, 0xa110c + round_index));
      next.budgets = allocate_random(m, config_.total_budget, config_.b_min, rng).budgets;
    }
    next.last_phi = phi;

    report.status = "ok";
    if (report.dev_score > next.best_dev_score) {
      next.best_dev_score = report.dev_score;
      next.best_prompts = next.current_prompts;
      next.rounds_without_improvement = 0;
    } else {
      next.rounds_without_improvement += 1;
    }
    return {next, report};
  } catch (const std::exception& error) {
    // Abort the round: prompts, budgets, and scores stay as they were.
    TrainingState unchanged = state;
    unchanged.round = round_index;
    unchanged.epoch = next.epoch;
    unchanged.epoch_cursor = next.epoch_cursor;
    unchanged.rounds_without_improvement += 1;
    report.status = std::string("failed: ") + error.what();
    report.dev_score = state.best_dev_score;
    return {unchanged, report};
  }
}

TrainingResult Trainer::run_training(const PromptMap& initial_prompts, const Dataset& train,
                                     const Dataset& dev) {
  TrainingState state = initial_state(initial_prompts);
  TrainingResult result;
  result.final_prompts = initial_prompts;

  for (int round = 0; round < config_.rounds; ++round) {
    auto [next, report] = run_round(state, train, dev);
    state = std::move(next);
    result.reports.push_back(std::move(report));
    if (config_.patience > 0 && state.rounds_without_improvement >= config_.patience) break;
  }

  if (state.best_dev_score >= 0.0) {
    result.final_prompts = state.best_prompts;
    result.best_dev_score = state.best_dev_score;
  }
  return result;
}

nlohmann::json prompt_bundle_to_json(const PromptMap& prompts) {
  nlohmann::json templates = nlohmann::json::array();
  for (const auto& [step_id, prompt] : prompts) {
    nlohmann::json demos = nlohmann::json::array();
    for (const auto& demo : prompt.demonstrations) {
      demos.push_back({{"input", demo.input}, {"output", demo.output}});
    }
    templates.push_back({{"step_id", step_id},
                         {"instruction", prompt.instruction},
                         {"demonstrations", demos},
                         {"version", prompt.version}});
  }
  return {{"prompts", templates}};
}

PromptMap prompt_map_from_bundle(const nlohmann::json& bundle) {
  PromptMap prompts;
  for (const auto& t : bundle.at("prompts")) {
    PromptTemplate prompt;
    prompt.step_id = t.at("step_id").get<std::string>();
    prompt.instruction = t.at("instruction").get<std::string>();
    prompt.version = t.value("version", 0);
    for (const auto& d : t.value("demonstrations", nlohmann::json::array())) {
      prompt.demonstrations.push_back(
          {d.at("input").get<std::string>(), d.at("output").get<std::string>()});
    }
    prompt.validate();
    prompts[prompt.step_id] = prompt;
  }
  return prompts;
}

}  // namespace adopt
