#include "dkd/sweep.hpp"

#include <algorithm>
#include <cmath>

#include "dkd/errors.hpp"
#include "dkd/rng.hpp"

namespace dkd {

void SweepPlan::validate() const {
  if (alphas.empty()) throw ContractError("sweep needs at least one alpha");
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ContractError("sweep alpha values must lie in [0, 1]");
  }
  if (coarse == 0) throw ContractError("sweep budget must include at least one coarse trial per alpha");
  if (t_min < 1 || t_max < t_min) throw ContractError("sweep temperature range must satisfy 1 <= min <= max");
  if (fine_radius < 0) throw ContractError("fine radius must be >= 0");
  const auto span = static_cast<std::size_t>(t_max - t_min + 1);
  if (coarse > span) throw ContractError("more coarse trials than distinct temperatures");
  if (fine > static_cast<std::size_t>(2 * fine_radius + 1) && fine > 0) {
    throw ContractError("more fine trials than distinct temperatures in the refinement window");
  }
}

namespace {

std::vector<int> distinct_draws(Rng& rng, int lo, int hi, std::size_t n) {
  std::vector<int> out;
  const auto span = static_cast<std::size_t>(hi - lo + 1);
  n = std::min(n, span);
  while (out.size() < n) {
    const int t = static_cast<int>(uniform_int(rng, lo, hi));
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  }
  return out;
}

}  // namespace

std::vector<int> coarse_temperatures(const SweepPlan& plan, std::size_t alpha_index) {
  Rng rng = make_rng({plan.seed, 0x636f61727365, alpha_index});
  return distinct_draws(rng, plan.t_min, plan.t_max, plan.coarse);
}

std::vector<int> fine_temperatures(const SweepPlan& plan, std::size_t alpha_index, int center) {
  Rng rng = make_rng({plan.seed, 0x66696e65, alpha_index});
  // Near the range ends the window is shifted inward so it keeps its width.
  int lo = center - plan.fine_radius, hi = center + plan.fine_radius;
  if (lo < plan.t_min) {
    hi = std::min(plan.t_max, hi + (plan.t_min - lo));
    lo = plan.t_min;
  }
  if (hi > plan.t_max) {
    lo = std::max(plan.t_min, lo - (hi - plan.t_max));
    hi = plan.t_max;
  }
  return distinct_draws(rng, lo, hi, plan.fine);
}

std::vector<SweepTrial> run_sweep(const SweepPlan& plan, const TrialFn& trial) {
  plan.validate();
  std::vector<SweepTrial> trials;
  std::size_t index = 0;
  for (std::size_t ai = 0; ai < plan.alphas.size(); ++ai) {
    const double alpha = plan.alphas[ai];
    std::vector<ResultRow> coarse_rows;
    for (int t : coarse_temperatures(plan, ai)) {
      SweepTrial r = trial(alpha, t, index++);
      r.phase = "coarse";
      coarse_rows.push_back(r.row);
      trials.push_back(std::move(r));
    }
    const int center = static_cast<int>(std::lround(coarse_rows[best_row(coarse_rows)].temperature));
    for (int t : fine_temperatures(plan, ai, center)) {
      SweepTrial r = trial(alpha, t, index++);
      r.phase = "fine";
      trials.push_back(std::move(r));
    }
  }
  return trials;
}

std::size_t best_row(std::span<const ResultRow> rows) {
  if (rows.empty()) throw ContractError("no result rows to choose from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const ResultRow& a = rows[i];
    const ResultRow& b = rows[best];
    if (a.accuracy != b.accuracy) {
      if (a.accuracy > b.accuracy) best = i;
    } else if (a.temperature != b.temperature) {
      if (a.temperature < b.temperature) best = i;
    } else if (a.alpha < b.alpha) {
      best = i;
    }
  }
  return best;
}

bool report_before(const ResultRow& a, const ResultRow& b) {
  if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
  if (a.f1 != b.f1) return a.f1 > b.f1;
  if (a.temperature != b.temperature) return a.temperature < b.temperature;
  if (a.alpha != b.alpha) return a.alpha < b.alpha;
  return a.model < b.model;
}

void sort_report(std::vector<ResultRow>& rows) { std::stable_sort(rows.begin(), rows.end(), report_before); }

std::string results_csv(std::span<const ResultRow> rows) {
  std::string out(kResultHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += format_result_row(r);
    out += '\n';
  }
  return out;
}

}  // namespace dkd
