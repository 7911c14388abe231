#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tirtarget/matrix.hpp"
#include "tirtarget/nuisance.hpp"
#include "tirtarget/sim.hpp"

namespace tir::eval {

// Patient-level split into train / validation / test thirds (sizes differ by
// at most one; any remainder goes to train first, then validation). Each list
// is sorted ascending.
struct SplitIndex {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
};

SplitIndex split_by_patient(int n_patients, std::uint64_t seed);

// Throws InconsistentInputError when the two patient sets intersect. Called
// before any nuisance model fit on one set is applied to the other.
void require_disjoint_patients(const std::vector<int>& a, const std::vector<int>& b);

// One row per usable panel row: the control covariates X^c plus the logged
// action/reward and bookkeeping columns. history_weeks=2 is the dashboard
// view (TIDE features + demographic subset); 3 and 4 append per-week CGM
// aggregates and a message indicator for each extra history week. Rows whose
// trace cannot cover the longer history are dropped and counted.
struct ControlFrame {
  std::vector<std::string> column_names;
  Matrix X;
  std::vector<int> patient_ids;
  std::vector<int> days;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<std::size_t> panel_row;  // index into panel.rows
  long dropped_rows = 0;
  int history_weeks = 2;
};

ControlFrame build_control_covariates(const sim::LoggedPanel& panel, int history_weeks = 2);

// Row filters. Both preserve row order.
ControlFrame select_rows(const ControlFrame& frame, const std::vector<std::size_t>& rows);
std::vector<std::size_t> rows_for_patients(const ControlFrame& frame,
                                           const std::vector<int>& patient_ids);
std::vector<std::size_t> rows_every_kth_day(const ControlFrame& frame, int stride);

// Nuisance interfaces over frame rows. Row-indexed closures let tests supply
// exact oracles (which need the hidden per-row truth, not just X^c).
using OutcomeFn = std::function<double(std::size_t row, int action)>;
using PropensityFn = std::function<std::vector<double>(std::size_t row)>;

OutcomeFn outcome_fn(const nuisance::OutcomeModel& model, const ControlFrame& frame);
PropensityFn propensity_fn(const nuisance::PropensityModel& model, const ControlFrame& frame);

// Doubly robust scores: one row per frame row, one column per action class,
// column 0 identically zero.
struct DrScoreTable {
  Matrix gamma;
  std::vector<int> patient_ids;
  std::vector<int> days;
  std::vector<int> actions;
  std::vector<double> rewards;
};

DrScoreTable dr_scores(const ControlFrame& frame, const OutcomeFn& outcome,
                       const PropensityFn& propensity);

// Per-action mean of the DR scores over all rows (the DR ATE estimate).
std::vector<double> dr_ate(const DrScoreTable& table);

// Applies the capacity-constrained targeting rule day by day: within each day
// rank rows by best tau-hat and give the top K their argmax action. Score
// ties order by a day-salted hash of the patient id (so fully tied scores
// rotate the treated subset across days instead of pinning it to the lowest
// ids). Returns one chosen action per table row.
std::vector<int> per_day_assignments(const DrScoreTable& table, const Matrix& tau_hat, int K,
                                     bool skip_negative = false);

// (1/T) sum_days (1/K) sum_rows gamma(row, chosen[row]). The denominator is
// always K, so days with fewer than K treated patients count at face value.
// Throws CapacityError when more than K rows of one day are non-control.
double estimate_att(const DrScoreTable& table, const std::vector<int>& chosen, int K);

// Percentile bootstrap over whole patients: a replicate redraws patients with
// replacement and keeps every row of each drawn patient (duplicates repeat).
// The statistic is the mean of `values`. Requires B >= 100, level in (0,1),
// and at least two distinct patients.
struct Interval {
  double lo = 0;
  double hi = 0;
};

Interval bootstrap_ci(const std::vector<double>& values, const std::vector<int>& patient_ids,
                      int B, double level, std::uint64_t seed);

// Targeting operator characteristic: ATT@K over a grid of capacity ratios
// K/N with N = distinct patients, plus AUTOC and the ATT at 25% capacity.
// Each day's capacity is capped at its row count and a tie block straddling
// the cutoff contributes pro rata, so a constant tau-hat traces a flat curve
// and the K/N = 1 point is the per-day mean of chosen-action scores. CIs are
// patient-level percentile bootstrap; B = 0 skips them (lo = hi = point
// estimate).
struct TocPoint {
  double ratio = 0;
  int K = 0;
  double att = 0;
  double lo = 0;
  double hi = 0;
};

struct TocReport {
  std::vector<TocPoint> points;  // ratios 0.05, 0.10, ..., 1.00
  double att25 = 0;              // ATT at K = round(0.25 * N)
  Interval att25_ci;
  int k25 = 0;
  double autoc = 0;  // trapezoid of (ATT@K - chosen-mix ATE) over the ratio grid
  Interval autoc_ci;
  double ate_baseline = 0;  // DR ATE of the action with the highest predicted ATE
  Interval ate_baseline_ci;
  int baseline_action = 0;
  int n_patients = 0;
  int bootstrap_B = 0;
  double level = 0.95;
  std::uint64_t seed = 0;
};

TocReport toc_curve(const DrScoreTable& table, const Matrix& tau_hat, int B, std::uint64_t seed,
                    double level = 0.95);

}  // namespace tir::eval
