#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "adopt/backend.hpp"
#include "adopt/pipeline.hpp"
#include "adopt/selector.hpp"

namespace adopt {

/// Distilled supervision for one step: (step input, revised output) pairs
/// aggregated across bad cases and loop invocations.
struct StepDataset {
  std::string step_id;
  std::vector<Demonstration> pairs;
};

struct OptimizerBudget {
  std::string step_id;
  int n_candidates = 1;  // new candidates allowed this round, incumbent excluded
};

struct StepOptimizerOptions {
  int k_demos = 0;
  int max_pairs_shown = 8;         // supervision pairs included in the rewrite prompt
  std::string dependency_hint;     // this step's dependency text from the current round
  std::string model_ref = "optimizer/instruct";
  std::uint64_t seed = 0;
};

/// Single-prompt optimizers are registered behind this interface so a new
/// algorithm can plug in without touching the gradient stages.
class StepOptimizer {
 public:
  virtual ~StepOptimizer() = default;
  virtual std::string name() const = 0;
  virtual CandidateSet optimize(const StepDataset& dataset, const PromptTemplate& current,
                                const OptimizerBudget& budget, ModelBackend& backend,
                                const StepOptimizerOptions& options) const = 0;
};

/// Optimizer registry. "instruct" (rewrites only the instruction) and
/// "joint" (instruction plus representative demonstrations) are built in;
/// additional optimizers can be registered at startup under a unique name
/// and selected per step through the ordinary config keys.
const StepOptimizer& find_optimizer(const std::string& name);
void register_optimizer(std::unique_ptr<StepOptimizer> optimizer);
std::vector<std::string> registered_optimizer_names();

/// Rewrites the instruction only; demonstrations stay untouched. An empty
/// dataset produces just the incumbent. Candidates are deduplicated by
/// rendered content, so the result can be smaller than budget + 1.
CandidateSet optimize_instruction(const StepDataset& dataset, const PromptTemplate& current,
                                  const OptimizerBudget& budget, ModelBackend& backend,
                                  const StepOptimizerOptions& options);

/// Same instruction rewrites plus min(k_demos, |dataset|) demonstrations per
/// non-incumbent candidate, chosen by greedy max-min Jaccard distance over
/// pair inputs (ties break toward dataset order). k_demos == 0 degenerates to
/// optimize_instruction.
CandidateSet optimize_joint(const StepDataset& dataset, const PromptTemplate& current,
                            const OptimizerBudget& budget, int k_demos, ModelBackend& backend,
                            const StepOptimizerOptions& options);

/// Indices of the k most mutually distant pairs (by input Jaccard distance),
/// in selection order. Exposed for the selection-objective tests.
std::vector<std::size_t> select_representative_pairs(const std::vector<Demonstration>& pairs,
                                                     int k);

/// Canonical rendering of a template used for deduplication and the
/// incumbent-preservation check.
std::string rendered_fingerprint(const PromptTemplate& prompt);

}  // namespace adopt
