#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "adopt/backend.hpp"
#include "adopt/optimizers.hpp"
#include "adopt/pipeline.hpp"

namespace adopt {

struct PipelineUnderstanding {
  std::string task_summary;
  std::map<std::string, std::string> step_roles;  // one entry per declared step
};

struct DependencyReport {
  std::map<std::string, std::string> dependency;  // one entry per declared step
  std::vector<std::string> provenance;            // case ids of the consulted good traces
  bool structural_only = false;                   // set when no good cases were available
};

struct TextualLoss {
  std::string case_id;
  std::vector<std::string> discrepancies;  // nonempty
};

struct GlobalGradient {
  std::string case_id;
  std::string diagnosis;
  std::string correction_direction;
};

struct LocalGradient {
  std::string case_id;
  std::string step_id;
  int invocation_index = 0;
  std::string direction;
};

struct RevisedOutput {
  std::string case_id;
  std::string step_id;
  int invocation_index = 0;
  std::string revised_text;
};

/// The six optimizer-role templates, loaded from plain-text assets. Each file
/// is validated at load: its placeholders must be exactly the documented set
/// for that role.
class RolePrompts {
 public:
  static RolePrompts load(const std::filesystem::path& directory);
  static std::filesystem::path default_directory();

  const std::string& text(const std::string& role) const;

 private:
  std::map<std::string, std::string> templates_;
};

struct GradientEngineOptions {
  int max_good_traces = 4;  // good traces consulted per step by the dependency role
  /// model_ref used for each optimizer role; roles not listed use
  /// "optimizer/<role>".
  std::map<std::string, std::string> role_models;
};

/// Optimizer roles E1..E6: pipeline understanding, per-step dependencies,
/// textual loss, global gradient, per-invocation local gradients, and revised
/// step outputs. Deterministic under a scripted backend.
class GradientEngine {
 public:
  GradientEngine(RolePrompts prompts, GradientEngineOptions options = {});

  PipelineUnderstanding analyze_pipeline(const Pipeline& pipeline, const PromptMap& prompts,
                                         ModelBackend& backend) const;

  /// When good_cases is empty the report falls back to the structural roles.
  DependencyReport analyze_dependencies(const PipelineUnderstanding& understanding,
                                        const std::vector<ScoredCase>& good_cases,
                                        ModelBackend& backend) const;

  TextualLoss compute_textual_loss(const ScoredCase& bad_case, const TaskMetric& metric,
                                   ModelBackend& backend) const;

  GlobalGradient compute_global_gradient(const TextualLoss& loss, ModelBackend& backend) const;

  /// One local gradient per step record of the trace, loop repeats included.
  std::vector<LocalGradient> compute_local_gradients(const GlobalGradient& global,
                                                     const DependencyReport& report,
                                                     const Trace& trace,
                                                     ModelBackend& backend) const;

  std::vector<RevisedOutput> generate_revised_outputs(const std::vector<LocalGradient>& locals,
                                                      const Trace& trace,
                                                      ModelBackend& backend) const;

 private:
  std::string role_model(const std::string& role) const;

  RolePrompts prompts_;
  GradientEngineOptions options_;
};

/// Groups revised outputs into per-step supervision datasets; pair inputs are
/// taken verbatim from the originating step records.
std::map<std::string, StepDataset> build_step_datasets(const std::vector<RevisedOutput>& revised,
                                                       const std::vector<Trace>& traces);

}  // namespace adopt
