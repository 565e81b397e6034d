#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "adopt/backend.hpp"
#include "adopt/optimizers.hpp"
#include "adopt/pipeline.hpp"
#include "adopt/shapley.hpp"
#include "adopt/simulator.hpp"
#include "adopt/tasks.hpp"

namespace py = pybind11;
using namespace adopt;

namespace {

std::vector<ValueSample> samples_from_pairs(
    const std::vector<std::pair<std::string, double>>& pairs) {
  std::vector<ValueSample> samples;
  samples.reserve(pairs.size());
  for (const auto& [bits, value] : pairs) samples.push_back({bits_to_mask(bits), value});
  return samples;
}

py::dict estimate_to_dict(const ContributionEstimate& estimate) {
  py::dict out;
  out["phi"] = estimate.phi;
  out["method"] = estimate.method == AttributionMethod::Exact ? "exact" : "kernel_shap";
  out["residual"] = estimate.residual;
  out["regularized"] = estimate.regularized;
  return out;
}

}  // namespace

PYBIND11_MODULE(adopt_cpp, m) {
  m.doc() = "Core operations of the pipeline prompt-optimization framework";

  m.def("shapley_weight", &shapley_weight, py::arg("s"), py::arg("m"),
        "Coalition weight |S|!(m-|S|-1)!/m!");
  m.def("kernel_shap_weight", &kernel_shap_weight, py::arg("size"), py::arg("m"));

  m.def(
      "exact_shapley",
      [](const std::vector<double>& table, int m) {
        return estimate_to_dict(exact_shapley(table, m));
      },
      py::arg("value_table"), py::arg("m"),
      "Exact attribution from a complete value table indexed by coalition mask");

  m.def(
      "kernel_shap",
      [](const std::vector<std::pair<std::string, double>>& samples, int m) {
        return estimate_to_dict(kernel_shap(samples_from_pairs(samples), m));
      },
      py::arg("samples"), py::arg("m"),
      "Weighted-least-squares attribution from (bit-string, value) samples");

  m.def(
      "allocate_budgets",
      [](const std::vector<double>& phi, int total, int b_min) {
        return allocate_budgets(phi, total, b_min).budgets;
      },
      py::arg("phi"), py::arg("total"), py::arg("b_min") = 1);

  m.def(
      "schedule_coalition_probes",
      [](int m, int quota, std::uint64_t seed) {
        std::vector<std::string> bits;
        for (CoalitionMask mask : schedule_coalition_probes(m, quota, seed)) {
          bits.push_back(mask_to_bits(mask, m));
        }
        return bits;
      },
      py::arg("m"), py::arg("quota"), py::arg("seed") = 0);

  m.def("evaluate_metric", &evaluate_metric, py::arg("metric_id"), py::arg("prediction"),
        py::arg("label"));

  m.def(
      "select_representative_pairs",
      [](const std::vector<std::pair<std::string, std::string>>& pairs, int k) {
        std::vector<Demonstration> demos;
        for (const auto& [input, output] : pairs) demos.push_back({input, output});
        return select_representative_pairs(demos, k);
      },
      py::arg("pairs"), py::arg("k"));

  m.def(
      "render_prompt",
      [](const std::string& instruction,
         const std::vector<std::pair<std::string, std::string>>& demonstrations,
         const std::string& step_input) {
        PromptTemplate prompt;
        prompt.step_id = "step";
        prompt.instruction = instruction;
        for (const auto& [input, output] : demonstrations) {
          prompt.demonstrations.push_back({input, output});
        }
        std::vector<std::pair<std::string, std::string>> rendered;
        for (const auto& message : render_prompt(prompt, step_input)) {
          rendered.emplace_back(message.role, message.content);
        }
        return rendered;
      },
      py::arg("instruction"), py::arg("demonstrations"), py::arg("step_input"));

  m.def(
      "request_digest",
      [](const std::string& model_ref,
         const std::vector<std::pair<std::string, std::string>>& messages, std::uint64_t seed) {
        ModelRequest request;
        request.model_ref = model_ref;
        for (const auto& [role, content] : messages) request.messages.push_back({role, content});
        request.seed = seed;
        return request_digest(request);
      },
      py::arg("model_ref"), py::arg("messages"), py::arg("seed") = 0);

  m.def(
      "simulate_allocation",
      [](const std::string& policy, int m, int runs, std::uint64_t seed, double target,
         int total_budget, int coalition_quota, int iteration_cap) {
        SimulationOptions options;
        options.policy = parse_policy(policy);
        options.m = m;
        options.runs = runs;
        options.seed = seed;
        options.target = target;
        options.total_budget = total_budget;
        options.coalition_quota = coalition_quota;
        options.iteration_cap = iteration_cap;
        SimulationResult result = simulate_allocation(options);
        py::dict out;
        out["policy"] = result.policy_id;
        out["iterations"] = result.iterations;
        out["censored"] = result.censored;
        out["mean"] = result.mean;
        out["stddev"] = result.stddev;
        return out;
      },
      py::arg("policy"), py::arg("m") = 4, py::arg("runs") = 50, py::arg("seed") = 0,
      py::arg("target") = 0.80, py::arg("total_budget") = 12, py::arg("coalition_quota") = 12,
      py::arg("iteration_cap") = 64);

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<ContractError>(m, "ContractError");
}
