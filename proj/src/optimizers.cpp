#include "adopt/optimizers.hpp"

#include <algorithm>
#include <limits>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>

#include "adopt/util.hpp"

namespace adopt {
namespace {

constexpr const char* kRewriteTemplate =
    "You are improving the prompt of one step inside a multi-step LLM pipeline.\n"
    "Step: {step_id}\n"
    "How this step's output affects the final result:\n{dependency}\n\n"
    "Current instruction:\n{instruction}\n\n"
    "Observed step inputs with the outputs the step should have produced:\n{pairs}\n\n"
    "Write variant {variant} of an improved instruction for this step. Take a different\n"
    "angle than other variants. Reply with the new instruction text only.";

std::string format_pairs(const StepDataset& dataset, int max_pairs) {
  std::ostringstream out;
  int shown = 0;
  for (const auto& pair : dataset.pairs) {
    if (shown >= max_pairs) break;
    out << "INPUT: " << pair.input << "\nDESIRED OUTPUT: " << pair.output << "\n---\n";
    ++shown;
  }
  return out.str();
}

std::vector<std::string> generate_instructions(const StepDataset& dataset,
                                               const PromptTemplate& current,
                                               const OptimizerBudget& budget,
                                               ModelBackend& backend,
                                               const StepOptimizerOptions& options) {
  std::vector<std::string> instructions;
  const std::string pairs_text = format_pairs(dataset, options.max_pairs_shown);
  for (int variant = 1; variant <= budget.n_candidates; ++variant) {
    ModelRequest request;
    request.model_ref = options.model_ref;
    request.seed = options.seed;
    std::string body = fill_placeholders(
        kRewriteTemplate, {{"step_id", current.step_id},
                           {"dependency", options.dependency_hint.empty()
                                              ? "(no dependency analysis available)"
                                              : options.dependency_hint},
                           {"instruction", current.instruction},
                           {"pairs", pairs_text},
                           {"variant", std::to_string(variant)}});
    request.messages = {{"system", "You write precise single-step instructions."},
                        {"user", body}};
    std::string text = trim(backend.complete(request).text);
    if (!text.empty()) instructions.push_back(std::move(text));
  }
  return instructions;
}

CandidateSet assemble(const PromptTemplate& current, const std::vector<PromptTemplate>& generated) {
  CandidateSet set;
  set.step_id = current.step_id;
  set.candidates.push_back(current);  // incumbent first
  set.incumbent_index = 0;
  std::set<std::string> seen{rendered_fingerprint(current)};
  for (const auto& candidate : generated) {
    if (seen.insert(rendered_fingerprint(candidate)).second) {
      set.candidates.push_back(candidate);
    }
  }
  return set;
}

class InstructOptimizer : public StepOptimizer {
 public:
  std::string name() const override { return "instruct"; }
  CandidateSet optimize(const StepDataset& dataset, const PromptTemplate& current,
                        const OptimizerBudget& budget, ModelBackend& backend,
                        const StepOptimizerOptions& options) const override {
    return optimize_instruction(dataset, current, budget, backend, options);
  }
};

class JointOptimizer : public StepOptimizer {
 public:
  std::string name() const override { return "joint"; }
  CandidateSet optimize(const StepDataset& dataset, const PromptTemplate& current,
                        const OptimizerBudget& budget, ModelBackend& backend,
                        const StepOptimizerOptions& options) const override {
    return optimize_joint(dataset, current, budget, options.k_demos, backend, options);
  }
};

std::mutex& registry_mutex() {
  static std::mutex mutex;
  return mutex;
}

std::map<std::string, std::unique_ptr<StepOptimizer>>& registry() {
  static std::map<std::string, std::unique_ptr<StepOptimizer>> optimizers = [] {
    std::map<std::string, std::unique_ptr<StepOptimizer>> builtins;
    builtins.emplace("instruct", std::make_unique<InstructOptimizer>());
    builtins.emplace("joint", std::make_unique<JointOptimizer>());
    return builtins;
  }();
  return optimizers;
}

}  // namespace

const StepOptimizer& find_optimizer(const std::string& name) {
  std::lock_guard<std::mutex> lock(registry_mutex());
  auto it = registry().find(name);
  if (it == registry().end()) throw ConfigError("unknown step optimizer: " + name);
  return *it->second;
}

void register_optimizer(std::unique_ptr<StepOptimizer> optimizer) {
  if (!optimizer) throw ContractError("register_optimizer: null optimizer");
  std::lock_guard<std::mutex> lock(registry_mutex());
  std::string name = optimizer->name();
  auto [it, inserted] = registry().emplace(name, std::move(optimizer));
  if (!inserted) throw ConfigError("a step optimizer named '" + name + "' already exists");
}

std::vector<std::string> registered_optimizer_names() {
  std::lock_guard<std::mutex> lock(registry_mutex());
  std::vector<std::string> names;
  for (const auto& [name, optimizer] : registry()) names.push_back(name);
  return names;
}

std::string rendered_fingerprint(const PromptTemplate& prompt) {
  std::ostringstream out;
  out << prompt.instruction << '\x1f';
  for (const auto& demo : prompt.demonstrations) {
    out << demo.input << '\x1e' << demo.output << '\x1f';
  }
  return out.str();
}

CandidateSet optimize_instruction(const StepDataset& dataset, const PromptTemplate& current,
                                  const OptimizerBudget& budget, ModelBackend& backend,
                                  const StepOptimizerOptions& options) {
  current.validate();
  if (budget.n_candidates < 1) throw ContractError("optimizer budget must be >= 1");
  if (dataset.pairs.empty()) return assemble(current, {});

  std::vector<PromptTemplate> generated;
  for (auto& instruction : generate_instructions(dataset, current, budget, backend, options)) {
    PromptTemplate candidate = current;
    candidate.instruction = std::move(instruction);
    candidate.version = current.version + 1;
    generated.push_back(std::move(candidate));
  }
  return assemble(current, generated);
}

CandidateSet optimize_joint(const StepDataset& dataset, const PromptTemplate& current,
                            const OptimizerBudget& budget, int k_demos, ModelBackend& backend,
                            const StepOptimizerOptions& options) {
  if (k_demos < 0) throw ContractError("k_demos must be >= 0");
  if (k_demos == 0) return optimize_instruction(dataset, current, budget, backend, options);
  current.validate();
  if (budget.n_candidates < 1) throw ContractError("optimizer budget must be >= 1");
  if (dataset.pairs.empty()) return assemble(current, {});

  std::vector<Demonstration> demos;
  for (std::size_t index : select_representative_pairs(dataset.pairs, k_demos)) {
    demos.push_back(dataset.pairs[index]);
  }

  std::vector<PromptTemplate> generated;
  for (auto& instruction : generate_instructions(dataset, current, budget, backend, options)) {
    PromptTemplate candidate = current;
    candidate.instruction = std::move(instruction);
    candidate.demonstrations = demos;
    candidate.version = current.version + 1;
    generated.push_back(std::move(candidate));
  }
  return assemble(current, generated);
}

std::vector<std::size_t> select_representative_pairs(const std::vector<Demonstration>& pairs,
                                                     int k) {
  const std::size_t n = pairs.size();
  const std::size_t want = std::min<std::size_t>(n, k < 0 ? 0 : static_cast<std::size_t>(k));
  if (want == 0) return {};
  if (want == 1) return {0};  // degenerate: diversity is undefined, keep dataset order

  std::vector<std::vector<double>> distance(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      distance[a][b] = distance[b][a] = jaccard_distance(pairs[a].input, pairs[b].input);
    }
  }

  // Seed with the most distant pair (this is the exact max-min optimum for
  // k == 2), then greedily add the pair maximizing its minimum distance to
  // the selection. Ties break toward dataset order.
  std::size_t seed_a = 0, seed_b = 1;
  double best = -1.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (distance[a][b] > best) {
        best = distance[a][b];
        seed_a = a;
        seed_b = b;
      }
    }
  }
  std::vector<std::size_t> selected = {seed_a, seed_b};
  std::set<std::size_t> chosen(selected.begin(), selected.end());
  while (selected.size() < want) {
    std::size_t pick = 0;
    double pick_score = -1.0;
    for (std::size_t candidate = 0; candidate < n; ++candidate) {
      if (chosen.count(candidate)) continue;
      double min_distance = std::numeric_limits<double>::max();
      for (std::size_t s : selected) min_distance = std::min(min_distance, distance[candidate][s]);
      if (min_distance > pick_score) {
        pick_score = min_distance;
        pick = candidate;
      }
    }
    selected.push_back(pick);
    chosen.insert(pick);
  }
  return selected;
}

}  // namespace adopt
