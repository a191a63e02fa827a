#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dkd/metrics.hpp"

namespace dkd {

// Two-phase random search over integer temperatures for each alpha: `coarse`
// distinct draws from [t_min, t_max], then `fine` distinct draws within
// +-fine_radius of that alpha's best coarse temperature.
struct SweepPlan {
  std::vector<double> alphas{0.1, 0.2, 0.3, 0.4, 0.5};
  std::size_t coarse = 8;
  std::size_t fine = 5;
  int t_min = 1;
  int t_max = 100;
  int fine_radius = 10;
  std::uint64_t seed = 0;

  // Throws ContractError for an empty budget or a bad range.
  void validate() const;
  std::size_t trial_count() const { return alphas.size() * (coarse + fine); }
};

std::vector<int> coarse_temperatures(const SweepPlan& plan, std::size_t alpha_index);
std::vector<int> fine_temperatures(const SweepPlan& plan, std::size_t alpha_index, int center);

struct SweepTrial {
  std::size_t index = 0;
  std::string phase;  // "coarse" or "fine"
  ResultRow row;
  std::string checkpoint;  // relative to the sweep output directory, may be empty
};

// Calls `trial(alpha, T, index)` for every planned trial in a fixed order and
// returns the trials in that order. `trial` fills a result row.
using TrialFn = std::function<SweepTrial(double alpha, int temperature, std::size_t index)>;
std::vector<SweepTrial> run_sweep(const SweepPlan& plan, const TrialFn& trial);

// Highest accuracy; ties go to the smaller temperature, then the smaller alpha.
// Throws ContractError on an empty list.
std::size_t best_row(std::span<const ResultRow> rows);

// Accuracy descending, F1 descending, then temperature, alpha and model
// ascending so the order is total.
bool report_before(const ResultRow& a, const ResultRow& b);
void sort_report(std::vector<ResultRow>& rows);

// Header line plus one formatted row per entry.
std::string results_csv(std::span<const ResultRow> rows);

}  // namespace dkd
