#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "adopt/config.hpp"
#include "adopt/jsonl.hpp"
#include "adopt/selector.hpp"
#include "adopt/shapley.hpp"
#include "adopt/simulator.hpp"
#include "adopt/training.hpp"

namespace {

using namespace adopt;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

BuiltTask build_configured_task(const RunConfig& config) {
  BuiltTask task = make_task(config.task.pipeline_id, config.task.pipeline_params);
  if (config.backend.kind == "http" && !config.backend.default_model.empty()) {
    for (auto& step : task.pipeline.steps) {
      if (step.model_ref.empty()) step.model_ref = config.backend.default_model;
    }
  }
  return task;
}

int run_optimize(const std::string& config_path, int jobs_override) {
  RunConfig config = RunConfig::from_file(config_path);
  if (jobs_override > 0) config.training.jobs = jobs_override;

  BuiltTask task = build_configured_task(config);
  PromptMap initial = task.initial_prompts;
  if (!config.initial_prompts.empty()) {
    initial = prompt_map_from_bundle(read_json_file(config.initial_prompts));
  }

  auto backend = config.make_backend();
  RolePrompts roles = RolePrompts::load(
      config.roles_dir.empty() ? RolePrompts::default_directory() : config.roles_dir);
  GradientEngine engine(std::move(roles), config.engine_options());
  TrainingConfig training = config.training;
  training.optimizer_model_ref = config.optimizer_model_ref();

  Trainer trainer(task.pipeline, make_metric(config.task.metric_id), std::move(engine), training,
                  *backend);
  Dataset train = load_dataset(config.task.train_data);
  Dataset dev = load_dataset(config.task.dev_data);

  std::filesystem::create_directories(config.output_dir);
  std::ofstream trace_log(config.output_dir / "traces.jsonl", std::ios::trunc);
  if (!trace_log) throw ConfigError("cannot write to output_dir: " + config.output_dir.string());
  trainer.set_trace_sink([&trace_log](const Trace& trace) {
    trace_log << trace.to_json().dump() << '\n';
  });

  TrainingResult result = trainer.run_training(initial, train, dev);
  trace_log.close();
  std::vector<nlohmann::json> report_lines;
  std::vector<nlohmann::json> sample_lines;
  for (const auto& report : result.reports) {
    report_lines.push_back(report.to_json(trainer.step_order()));
    for (const auto& sample : report.coalition_samples) {
      sample_lines.push_back(
          {{"z", mask_to_bits(sample.mask, static_cast<int>(trainer.step_order().size()))},
           {"v", sample.value}});
    }
  }
  write_jsonl(config.output_dir / "round_reports.jsonl", report_lines);
  write_jsonl(config.output_dir / "coalition_samples.jsonl", sample_lines);

  nlohmann::json bundle = prompt_bundle_to_json(result.final_prompts);
  bundle["pipeline"] = config.task.pipeline_id;
  bundle["pipeline_params"] = config.task.pipeline_params;
  bundle["metric"] = config.task.metric_id;
  write_json_file(config.output_dir / "prompt_bundle.json", bundle);

  std::cout << "rounds: " << result.reports.size() << "\n";
  for (const auto& report : result.reports) {
    std::cout << "round " << report.round << " [" << report.status
              << "] dev_score=" << report.dev_score << "\n";
  }
  std::cout << "best_dev_score: " << result.best_dev_score << "\n"
            << "bundle: " << (config.output_dir / "prompt_bundle.json").string() << "\n";
  return kExitOk;
}

int run_eval(const std::string& bundle_path, const std::string& data_path,
             const std::string& script_path, const std::string& base_url,
             const std::string& model) {
  nlohmann::json bundle = read_json_file(bundle_path);
  if (!bundle.contains("pipeline")) {
    throw ConfigError("bundle is missing the 'pipeline' field; was it written by `optimize`?");
  }
  BuiltTask task =
      make_task(bundle.at("pipeline").get<std::string>(),
                bundle.value("pipeline_params", nlohmann::json::object()));
  PromptMap prompts = prompt_map_from_bundle(bundle);
  TaskMetric metric = make_metric(bundle.value("metric", "exact_match"));

  std::shared_ptr<ModelBackend> backend;
  if (!script_path.empty()) {
    backend = ScriptedBackend::from_file(script_path);
  } else if (!base_url.empty()) {
    HttpBackendConfig http;
    http.base_url = base_url;
    backend = std::make_shared<HttpBackend>(http);
    if (!model.empty()) {
      for (auto& step : task.pipeline.steps) {
        if (step.model_ref.empty()) step.model_ref = model;
      }
    }
  } else {
    throw ConfigError("eval needs --script (offline) or --base-url (http backend)");
  }

  Dataset data = load_dataset(data_path);
  if (data.empty()) throw ConfigError("dataset is empty: " + data_path);
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Trace trace = execute(task.pipeline, prompts, data[i].input, *backend, /*seed=*/i,
                          "eval:" + std::to_string(i));
    total += metric.score(trace.final_output, data[i].label);
  }
  std::cout << "cases: " << data.size() << "\nmean_score: " << total / data.size() << "\n";
  return kExitOk;
}

int run_shapley(const std::string& samples_path) {
  std::vector<ValueSample> samples;
  int m = 0;
  for (const auto& doc : read_jsonl(samples_path)) {
    std::string bits = doc.at("z").get<std::string>();
    if (m == 0) {
      m = static_cast<int>(bits.size());
    } else if (static_cast<int>(bits.size()) != m) {
      throw ConfigError("inconsistent coalition lengths in " + samples_path);
    }
    samples.push_back({bits_to_mask(bits), doc.at("v").get<double>()});
  }
  if (samples.empty()) throw ConfigError("no samples in " + samples_path);

  nlohmann::json output;
  output["m"] = m;
  output["samples"] = samples.size();

  auto kernel = kernel_shap(samples, m);
  output["kernel"] = {{"phi", kernel.phi},
                      {"residual", kernel.residual},
                      {"regularized", kernel.regularized}};

  std::set<CoalitionMask> distinct;
  for (const auto& sample : samples) distinct.insert(sample.mask);
  if (m <= 20 && distinct.size() == (std::size_t{1} << m)) {
    std::map<CoalitionMask, double> table;
    std::map<CoalitionMask, int> counts;
    for (const auto& sample : samples) {
      table[sample.mask] += sample.value;
      counts[sample.mask] += 1;
    }
    for (auto& [mask, value] : table) value /= counts[mask];
    auto exact = exact_shapley(table, m);
    output["exact"] = {{"phi", exact.phi}};
  } else {
    output["exact"] = nullptr;
  }
  std::cout << output.dump(2) << "\n";
  return kExitOk;
}

int run_simulate(const std::string& policy, int m, int runs, std::uint64_t seed, double target,
                 int budget, int quota, int cap, const std::string& out_path) {
  SimulationOptions options;
  options.m = m;
  options.runs = runs;
  options.seed = seed;
  options.target = target;
  options.total_budget = budget;
  options.coalition_quota = quota;
  options.iteration_cap = cap;

  std::vector<AllocationPolicy> policies;
  if (policy == "all") {
    policies = {AllocationPolicy::Uniform, AllocationPolicy::Random, AllocationPolicy::Shapley};
  } else {
    policies = {parse_policy(policy)};
  }

  std::vector<nlohmann::json> out_lines;
  std::cout << "policy      runs   mean   stddev censored\n";
  for (AllocationPolicy p : policies) {
    options.policy = p;
    SimulationResult result = simulate_allocation(options);
    int censored = 0;
    for (bool c : result.censored) censored += c ? 1 : 0;
    std::printf("%-10s %5d %6.2f %8.2f %8d\n", result.policy_id.c_str(),
                static_cast<int>(result.iterations.size()), result.mean, result.stddev, censored);
    out_lines.push_back(result.to_json());
  }
  if (!out_path.empty()) write_jsonl(out_path, out_lines);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dependency-aware prompt optimization for multi-step LLM pipelines"};
  app.require_subcommand(1);

  auto* optimize = app.add_subcommand("optimize", "Run the optimization loop from a config file");
  std::string config_path;
  int jobs_override = 0;
  optimize->add_option("--config", config_path, "Run configuration (JSON)")->required();
  optimize->add_option("--jobs", jobs_override, "Worker threads for pipeline execution");

  auto* eval = app.add_subcommand("eval", "Score a prompt bundle on a dataset");
  std::string bundle_path, data_path, script_path, base_url, model;
  eval->add_option("--bundle", bundle_path, "Prompt bundle written by `optimize`")->required();
  eval->add_option("--data", data_path, "JSONL dataset with {input, label} records")->required();
  eval->add_option("--script", script_path, "Scripted-backend fixture (offline)");
  eval->add_option("--base-url", base_url, "OpenAI-compatible server base URL");
  eval->add_option("--model", model, "Model name for http requests");

  auto* shapley = app.add_subcommand("shapley", "Attribute contributions from coalition samples");
  std::string samples_path;
  shapley->add_option("--samples", samples_path, "JSONL file of {z, v} records")->required();

  auto* simulate = app.add_subcommand("simulate", "Synthetic allocation-policy comparison");
  std::string policy = "all";
  int sim_m = 4, sim_runs = 50, sim_budget = 12, sim_quota = 12, sim_cap = 64;
  std::uint64_t sim_seed = 0;
  double sim_target = 0.80;
  std::string sim_out;
  simulate->add_option("--policy", policy, "uniform|random|shapley|all");
  simulate->add_option("--m", sim_m, "Number of synthetic steps");
  simulate->add_option("--runs", sim_runs, "Independent runs per policy");
  simulate->add_option("--seed", sim_seed, "Base seed");
  simulate->add_option("--target", sim_target, "End-to-end score to reach");
  simulate->add_option("--budget", sim_budget, "Total candidate budget per iteration");
  simulate->add_option("--quota", sim_quota, "Coalition probes per iteration");
  simulate->add_option("--cap", sim_cap, "Iteration cap per run");
  simulate->add_option("--out", sim_out, "Write per-run results to this JSONL file");

  auto* config_cmd = app.add_subcommand("config", "Configuration utilities");
  bool print_defaults = false;
  config_cmd->add_flag("--print-defaults", print_defaults, "Print the documented defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& error) {
    app.exit(error);
    return error.get_exit_code() == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (optimize->parsed()) return run_optimize(config_path, jobs_override);
    if (eval->parsed()) return run_eval(bundle_path, data_path, script_path, base_url, model);
    if (shapley->parsed()) return run_shapley(samples_path);
    if (simulate->parsed()) {
      return run_simulate(policy, sim_m, sim_runs, sim_seed, sim_target, sim_budget, sim_quota,
                          sim_cap, sim_out);
    }
    if (config_cmd->parsed()) {
      if (print_defaults) {
        std::cout << adopt::default_config_json().dump(2) << "\n";
        return kExitOk;
      }
      std::cerr << "config: nothing to do (try --print-defaults)\n";
      return kExitConfig;
    }
    return kExitConfig;
  } catch (const adopt::ConfigError& error) {
    std::cerr << "config error: " << error.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& error) {
    std::cerr << "error: " << error.what() << "\n";
    return kExitRuntime;
  }
}
