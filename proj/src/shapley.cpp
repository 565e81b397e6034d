#include "adopt/shapley.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "adopt/common.hpp"
#include "adopt/util.hpp"

namespace adopt {
namespace {

constexpr int kMaxPlayers = 20;  // 2^m value tables stay affordable below this

void check_player_count(int m) {
  if (m < 1) throw ContractError("player count must be >= 1");
  if (m > kMaxPlayers) {
    throw ContractError("player count " + std::to_string(m) + " exceeds the exact-computation guard (" +
                        std::to_string(kMaxPlayers) + ")");
  }
}

/// Binomial coefficients are exact in double up to C(20, 10).
double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double result = 1.0;
  for (int i = 1; i <= k; ++i) {
    result = result * static_cast<double>(n - k + i) / static_cast<double>(i);
  }
  return std::round(result);
}

/// Solves the symmetric system A x = b in place by Gaussian elimination with
/// partial pivoting. Returns false when a pivot collapses (rank deficiency).
bool solve_linear(std::vector<std::vector<double>> a, std::vector<double> b,
                  std::vector<double>& x) {
  const std::size_t n = b.size();
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(a[i][i]));
  const double tol = std::max(scale, 1.0) * 1e-12;

  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t row = col + 1; row < n; ++row) {
      if (std::abs(a[row][col]) > std::abs(a[pivot][col])) pivot = row;
    }
    if (std::abs(a[pivot][col]) < tol) return false;
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t row = col + 1; row < n; ++row) {
      double factor = a[row][col] / a[col][col];
      for (std::size_t k = col; k < n; ++k) a[row][k] -= factor * a[col][k];
      b[row] -= factor * b[col];
    }
  }
  x.assign(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double sum = b[i];
    for (std::size_t k = i + 1; k < n; ++k) sum -= a[i][k] * x[k];
    x[i] = sum / a[i][i];
  }
  return true;
}

BudgetAllocation allocate_by_weights(const std::vector<double>& weights, int total, int b_min) {
  const int m = static_cast<int>(weights.size());
  if (m < 1) throw ContractError("allocate_budgets: need at least one step");
  if (b_min < 1) throw ContractError("allocate_budgets: b_min must be >= 1");
  if (total < m * b_min) {
    throw ConfigError("infeasible budget: total " + std::to_string(total) + " < " +
                      std::to_string(m) + " steps * b_min " + std::to_string(b_min));
  }

  double weight_sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  const int spare = total - m * b_min;

  std::vector<int> base(m, 0);
  std::vector<double> fraction(m, 0.0);
  int assigned = 0;
  for (int i = 0; i < m; ++i) {
    double ideal = weight_sum > 0.0 ? spare * weights[i] / weight_sum
                                    : static_cast<double>(spare) / m;
    base[i] = static_cast<int>(std::floor(ideal));
    fraction[i] = ideal - base[i];
    assigned += base[i];
  }

  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (fraction[a] != fraction[b]) return fraction[a] > fraction[b];
    if (weights[a] != weights[b]) return weights[a] > weights[b];
    return a < b;
  });
  for (int k = 0; k < spare - assigned; ++k) base[order[k]] += 1;

  BudgetAllocation allocation;
  allocation.total = total;
  allocation.budgets.resize(m);
  for (int i = 0; i < m; ++i) allocation.budgets[i] = b_min + base[i];
  return allocation;
}

}  // namespace

double shapley_weight(int s, int m) {
  check_player_count(m);
  if (s < 0 || s >= m) {
    throw ContractError("shapley_weight: coalition size " + std::to_string(s) +
                        " outside [0, m-1] for m=" + std::to_string(m));
  }
  // s!(m-s-1)!/m! == 1 / (m * C(m-1, s))
  return 1.0 / (static_cast<double>(m) * binomial(m - 1, s));
}

double kernel_shap_weight(int size, int m) {
  check_player_count(m);
  if (size <= 0 || size >= m) {
    throw ContractError("kernel_shap_weight is defined for 0 < |z| < m");
  }
  return static_cast<double>(m - 1) /
         (binomial(m, size) * static_cast<double>(size) * static_cast<double>(m - size));
}

ContributionEstimate exact_shapley(const std::vector<double>& value_table, int m) {
  check_player_count(m);
  const std::size_t expected = std::size_t{1} << m;
  if (value_table.size() != expected) {
    throw ContractError("exact_shapley: value table has " + std::to_string(value_table.size()) +
                        " entries, expected 2^m = " + std::to_string(expected));
  }

  std::vector<double> weight_by_size(m);
  for (int s = 0; s < m; ++s) weight_by_size[s] = shapley_weight(s, m);

  ContributionEstimate estimate;
  estimate.method = AttributionMethod::Exact;
  estimate.phi.assign(m, 0.0);
  const CoalitionMask full = static_cast<CoalitionMask>(expected - 1);
  for (int i = 0; i < m; ++i) {
    const CoalitionMask bit = CoalitionMask{1} << i;
    const CoalitionMask others = full & ~bit;
    // Enumerate every subset of the other players via the submask trick.
    CoalitionMask subset = others;
    while (true) {
      int size = std::popcount(subset);
      estimate.phi[i] +=
          weight_by_size[size] * (value_table[subset | bit] - value_table[subset]);
      if (subset == 0) break;
      subset = (subset - 1) & others;
    }
  }
  return estimate;
}

ContributionEstimate exact_shapley(const std::map<CoalitionMask, double>& value_table, int m) {
  check_player_count(m);
  const std::size_t expected = std::size_t{1} << m;
  std::vector<double> table(expected, 0.0);
  std::vector<CoalitionMask> missing;
  for (CoalitionMask mask = 0; mask < expected; ++mask) {
    auto it = value_table.find(mask);
    if (it == value_table.end()) {
      missing.push_back(mask);
    } else {
      table[mask] = it->second;
    }
  }
  if (!missing.empty()) {
    std::ostringstream message;
    message << "exact_shapley: value table is missing " << missing.size() << " coalition(s):";
    for (std::size_t k = 0; k < missing.size() && k < 8; ++k) {
      message << ' ' << mask_to_bits(missing[k], m);
    }
    if (missing.size() > 8) message << " ...";
    throw ContractError(message.str());
  }
  return exact_shapley(table, m);
}

ContributionEstimate kernel_shap(const std::vector<ValueSample>& samples, int m) {
  check_player_count(m);
  const CoalitionMask full = (m >= 32) ? ~CoalitionMask{0} : ((CoalitionMask{1} << m) - 1);

  bool has_empty = false;
  bool has_full = false;
  double v_empty = 0.0, v_full = 0.0;
  int n_empty = 0, n_full = 0;
  std::vector<const ValueSample*> interior;
  for (const auto& sample : samples) {
    if (sample.mask == 0) {
      v_empty += sample.value;
      ++n_empty;
      has_empty = true;
    } else if (sample.mask == full) {
      v_full += sample.value;
      ++n_full;
      has_full = true;
    } else {
      interior.push_back(&sample);
    }
  }
  if (!has_empty || !has_full) {
    throw ContractError("kernel_shap: samples must include the all-weak and all-strong coalitions");
  }
  {
    std::set<CoalitionMask> distinct;
    for (const auto& sample : samples) distinct.insert(sample.mask);
    if (distinct.size() < 2) {
      throw ContractError("kernel_shap: need at least 2 distinct coalition samples");
    }
  }
  v_empty /= n_empty;
  v_full /= n_full;
  const double delta = v_full - v_empty;

  ContributionEstimate estimate;
  estimate.method = AttributionMethod::KernelShap;
  estimate.phi.assign(m, 0.0);

  if (m == 1) {
    estimate.phi[0] = delta;
    return estimate;
  }
  if (interior.empty()) {
    // Only the endpoints were observed: the fit is underdetermined, so spread
    // the total effect evenly and flag it.
    for (int i = 0; i < m; ++i) estimate.phi[i] = delta / m;
    estimate.regularized = true;
    return estimate;
  }

  // Eliminate the efficiency constraint by substituting the last coefficient:
  // phi[m-1] = delta - sum(others). Unknowns: phi[0 .. m-2].
  const int n_unknowns = m - 1;
  std::vector<std::vector<double>> normal(n_unknowns, std::vector<double>(n_unknowns, 0.0));
  std::vector<double> rhs(n_unknowns, 0.0);

  auto design_row = [&](CoalitionMask mask, std::vector<double>& row) {
    const double z_last = (mask >> (m - 1)) & 1 ? 1.0 : 0.0;
    for (int j = 0; j < n_unknowns; ++j) {
      const double z_j = (mask >> j) & 1 ? 1.0 : 0.0;
      row[j] = z_j - z_last;
    }
    return z_last;
  };

  std::vector<double> row(n_unknowns);
  for (const ValueSample* sample : interior) {
    const int size = std::popcount(sample->mask);
    const double weight = kernel_shap_weight(size, m);
    const double z_last = design_row(sample->mask, row);
    const double target = sample->value - v_empty - z_last * delta;
    for (int a = 0; a < n_unknowns; ++a) {
      rhs[a] += weight * row[a] * target;
      for (int b = 0; b < n_unknowns; ++b) normal[a][b] += weight * row[a] * row[b];
    }
  }

  std::vector<double> coefficients;
  if (!solve_linear(normal, rhs, coefficients)) {
    // Rank-deficient design: ridge-regularize toward the uniform split.
    double trace = 0.0;
    for (int a = 0; a < n_unknowns; ++a) trace += normal[a][a];
    const double ridge = std::max(trace, 1.0) * 1e-8;
    for (int a = 0; a < n_unknowns; ++a) normal[a][a] += ridge;
    if (!solve_linear(normal, rhs, coefficients)) {
      throw Error("kernel_shap: regularized solve failed unexpectedly");
    }
    estimate.regularized = true;
  }

  double tail = delta;
  for (int j = 0; j < n_unknowns; ++j) {
    estimate.phi[j] = coefficients[j];
    tail -= coefficients[j];
  }
  estimate.phi[m - 1] = tail;

  double weighted_sq = 0.0;
  double weight_sum = 0.0;
  for (const ValueSample* sample : interior) {
    const double weight = kernel_shap_weight(std::popcount(sample->mask), m);
    double predicted = v_empty;
    for (int j = 0; j < m; ++j) {
      if ((sample->mask >> j) & 1) predicted += estimate.phi[j];
    }
    weighted_sq += weight * (sample->value - predicted) * (sample->value - predicted);
    weight_sum += weight;
  }
  estimate.residual = weight_sum > 0.0 ? std::sqrt(weighted_sq / weight_sum) : 0.0;
  return estimate;
}

BudgetAllocation allocate_budgets(const std::vector<double>& phi, int total, int b_min) {
  const int m = static_cast<int>(phi.size());
  std::vector<double> weights(phi.size());
  double top = 0.0;
  for (double value : phi) top = std::max(top, value);
  if (top <= 0.0) {
    // No positive contribution signal: allocate evenly.
    std::fill(weights.begin(), weights.end(), 1.0);
  } else {
    // The epsilon is relative to the largest contribution so that scaling all
    // phi by a positive constant cannot change the allocation.
    const double epsilon = 1e-6 * top;
    for (int i = 0; i < m; ++i) weights[i] = std::max(phi[i], 0.0) + epsilon;
  }
  return allocate_by_weights(weights, total, b_min);
}

BudgetAllocation allocate_uniform(int m, int total, int b_min) {
  return allocate_by_weights(std::vector<double>(m, 1.0), total, b_min);
}

BudgetAllocation allocate_random(int m, int total, int b_min, Rng& rng) {
  std::vector<double> weights(m);
  for (int i = 0; i < m; ++i) weights[i] = rng.next_unit() + 1e-9;
  return allocate_by_weights(weights, total, b_min);
}

std::vector<CoalitionMask> schedule_coalition_probes(int m, int quota, std::uint64_t seed) {
  check_player_count(m);
  if (quota < 2) throw ContractError("schedule_coalition_probes: quota must be >= 2");
  const std::size_t space = std::size_t{1} << m;
  const CoalitionMask full = static_cast<CoalitionMask>(space - 1);

  std::vector<CoalitionMask> probes;
  if (static_cast<std::size_t>(quota) >= space) {
    // Quota covers the space: enumerate everything, endpoints first.
    probes.push_back(0);
    probes.push_back(full);
    for (CoalitionMask mask = 1; mask < full; ++mask) probes.push_back(mask);
    return probes;
  }

  probes = {0, full};
  std::set<CoalitionMask> seen(probes.begin(), probes.end());
  if (m == 1) return probes;

  std::vector<double> size_weight(m, 0.0);
  std::vector<std::size_t> remaining(m, 0);
  for (int s = 1; s < m; ++s) {
    size_weight[s] = static_cast<double>(m - 1) / (static_cast<double>(s) * (m - s));
    remaining[s] = static_cast<std::size_t>(binomial(m, s));
  }

  Rng rng(seed);
  int stalls = 0;
  while (probes.size() < static_cast<std::size_t>(quota)) {
    double total_weight = 0.0;
    for (int s = 1; s < m; ++s) {
      if (remaining[s] > 0) total_weight += size_weight[s];
    }
    if (total_weight <= 0.0) break;  // every interior coalition already scheduled

    double pick = rng.next_unit() * total_weight;
    int size = -1;
    for (int s = 1; s < m; ++s) {
      if (remaining[s] == 0) continue;
      size = s;  // falls through to the last eligible size on rounding slop
      if (pick < size_weight[s]) break;
      pick -= size_weight[s];
    }

    CoalitionMask mask = 0;
    for (std::size_t index : rng.sample_without_replacement(m, size)) {
      mask |= CoalitionMask{1} << index;
    }
    if (seen.insert(mask).second) {
      probes.push_back(mask);
      remaining[size] -= 1;
      stalls = 0;
    } else if (++stalls > 64) {
      // Dense region: finish deterministically by scanning unseen masks.
      for (CoalitionMask candidate = 1;
           candidate < full && probes.size() < static_cast<std::size_t>(quota); ++candidate) {
        if (seen.insert(candidate).second) {
          probes.push_back(candidate);
          remaining[std::popcount(candidate)] -= 1;
        }
      }
      break;
    }
  }
  return probes;
}

std::string mask_to_bits(CoalitionMask mask, int m) {
  std::string bits(m, '0');
  for (int i = 0; i < m; ++i) {
    if ((mask >> i) & 1) bits[i] = '1';
  }
  return bits;
}

CoalitionMask bits_to_mask(const std::string& bits) {
  if (bits.empty() || bits.size() > kMaxPlayers) {
    throw ContractError("coalition bit-string must have between 1 and " +
                        std::to_string(kMaxPlayers) + " characters");
  }
  CoalitionMask mask = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] == '1') {
      mask |= CoalitionMask{1} << i;
    } else if (bits[i] != '0') {
      throw ContractError("coalition bit-string must contain only '0' and '1': " + bits);
    }
  }
  return mask;
}

}  // namespace adopt
