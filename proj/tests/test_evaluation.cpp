#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "tirtarget/errors.hpp"
#include "tirtarget/evaluation.hpp"
#include "tirtarget/features.hpp"
#include "tirtarget/policy.hpp"
#include "tirtarget/rng.hpp"
#include "tirtarget/sim.hpp"

using namespace tir;

namespace {

sim::LoggedPanel make_panel(int n_patients, int days, uint64_t seed) {
  sim::SimConfig cfg;
  cfg.n_patients = n_patients;
  cfg.days = days;
  cfg.seed = seed;
  return sim::simulate_panel(cfg);
}

// Shared heavy fixture: ~31k rows at the default confounding strength.
const sim::LoggedPanel& big_panel() {
  static const sim::LoggedPanel panel = make_panel(980, 112, 42);
  return panel;
}

const eval::ControlFrame& big_frame() {
  static const eval::ControlFrame frame = eval::build_control_covariates(big_panel(), 2);
  return frame;
}

eval::OutcomeFn oracle_outcome(const sim::LoggedPanel& panel, const eval::ControlFrame& frame) {
  return [&panel, &frame](size_t i, int a) {
    const auto& row = panel.rows[frame.panel_row[i]];
    return row.oracle.control_response + row.oracle.effects[static_cast<size_t>(a)];
  };
}

eval::PropensityFn oracle_propensity(const sim::LoggedPanel& panel,
                                     const eval::ControlFrame& frame) {
  return [&panel, &frame](size_t i) {
    const auto& p = panel.rows[frame.panel_row[i]].oracle.propensities;
    return std::vector<double>(p.begin(), p.end());
  };
}

std::vector<double> true_ate(const sim::LoggedPanel& panel, const eval::ControlFrame& frame) {
  std::vector<double> ate(kNumActionClasses, 0.0);
  for (const size_t r : frame.panel_row) {
    for (int a = 0; a < kNumActionClasses; ++a) {
      ate[static_cast<size_t>(a)] += panel.rows[r].oracle.effects[static_cast<size_t>(a)];
    }
  }
  for (double& v : ate) v /= static_cast<double>(frame.panel_row.size());
  return ate;
}

// A small hand-rolled score table for the ATT arithmetic tests.
eval::DrScoreTable hand_table() {
  eval::DrScoreTable t;
  t.gamma = Matrix(5, kNumActionClasses);
  const std::vector<std::vector<double>> g = {
      {0, 0.1, 0.2, 0.3, 0.4},
      {0, -0.1, 0.0, 0.1, 0.2},
      {0, 0.5, 0.4, 0.3, 0.2},
      {0, 0.6, 0.1, 0.0, 0.0},
      {0, 0.0, 0.0, 0.0, 0.7},
  };
  for (int i = 0; i < 5; ++i) {
    for (int a = 0; a < kNumActionClasses; ++a) t.gamma.at(i, a) = g[static_cast<size_t>(i)][static_cast<size_t>(a)];
  }
  t.patient_ids = {0, 1, 2, 0, 1};
  t.days = {14, 14, 14, 21, 21};
  t.actions = {1, 0, 2, 0, 4};
  t.rewards = {0.1, 0.0, 0.2, 0.0, 0.3};
  return t;
}

}  // namespace

TEST_CASE("split_by_patient partitions the cohort into near-equal thirds") {
  const auto split = eval::split_by_patient(281, 7);
  CHECK(split.train.size() == 94);
  CHECK(split.validation.size() == 94);
  CHECK(split.test.size() == 93);

  std::vector<int> all;
  all.insert(all.end(), split.train.begin(), split.train.end());
  all.insert(all.end(), split.validation.begin(), split.validation.end());
  all.insert(all.end(), split.test.begin(), split.test.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 281; ++i) CHECK(all[static_cast<size_t>(i)] == i);

  SUBCASE("deterministic given the seed") {
    const auto again = eval::split_by_patient(281, 7);
    CHECK(again.train == split.train);
    CHECK(again.validation == split.validation);
    CHECK(again.test == split.test);
    const auto other = eval::split_by_patient(281, 8);
    CHECK(other.train != split.train);
  }
  SUBCASE("three patients make three singleton splits") {
    const auto tiny = eval::split_by_patient(3, 1);
    CHECK(tiny.train.size() == 1);
    CHECK(tiny.validation.size() == 1);
    CHECK(tiny.test.size() == 1);
  }
  SUBCASE("fewer than three patients cannot be split") {
    CHECK_THROWS_AS(eval::split_by_patient(2, 1), InsufficientSupportError);
  }
  SUBCASE("overlap detection") {
    CHECK_NOTHROW(eval::require_disjoint_patients(split.train, split.validation));
    CHECK_THROWS_AS(eval::require_disjoint_patients(split.train, split.train),
                    InconsistentInputError);
  }
}

TEST_CASE("two-week control covariates reproduce the dashboard view") {
  const auto panel = make_panel(40, 56, 3);
  const auto frame = eval::build_control_covariates(panel, 2);

  const std::vector<std::string> want = {
      "very_low_7dr", "low_7dr", "in_range_7dr", "g_7dr", "using_pump",
      "in_range_7dr_7d_delta", "large_tir_drop", "low_tir", "lows", "very_lows",
      "pop_pilot", "pop_4T_1", "pop_TIPS",
      "sexF", "public_insurance", "english_primary_language", "age",
      "months_since_onset", "using_aid", "days_since_msg"};
  CHECK(frame.column_names == want);
  CHECK(frame.X.cols == 20);
  CHECK(frame.X.rows == static_cast<int>(panel.rows.size()));
  CHECK(frame.dropped_rows == 0);

  // Values are straight copies of the named clinical features.
  for (const int i : {0, 5, 11}) {
    const auto& row = panel.rows[frame.panel_row[static_cast<size_t>(i)]];
    for (size_t c = 0; c < want.size(); ++c) {
      CHECK(frame.X.at(i, static_cast<int>(c)) ==
            cgm::feature_value(row.features, want[c]));
    }
    CHECK(frame.actions[static_cast<size_t>(i)] == to_int(row.action.class_label));
    CHECK(frame.rewards[static_cast<size_t>(i)] == row.reward);
    CHECK(frame.days[static_cast<size_t>(i)] == row.day);
    CHECK(frame.patient_ids[static_cast<size_t>(i)] == row.patient_id);
  }

  SUBCASE("history_weeks outside 2..4 is rejected") {
    CHECK_THROWS_AS(eval::build_control_covariates(panel, 1), ConfigError);
    CHECK_THROWS_AS(eval::build_control_covariates(panel, 5), ConfigError);
  }
}

TEST_CASE("longer histories append weekly aggregates and message indicators") {
  const auto panel = make_panel(50, 70, 11);
  const auto f2 = eval::build_control_covariates(panel, 2);
  const auto f3 = eval::build_control_covariates(panel, 3);
  const auto f4 = eval::build_control_covariates(panel, 4);

  CHECK(f3.X.cols == 25);
  CHECK(f4.X.cols == 30);
  CHECK(f3.column_names[20] == "week3_g");
  CHECK(f3.column_names[24] == "week3_message");
  CHECK(f4.column_names[29] == "week4_message");

  // Rows too early for the longer history are dropped and counted.
  long before21 = 0, before28 = 0;
  for (const auto& row : panel.rows) {
    if (row.day < 21) ++before21;
    if (row.day < 28) ++before28;
  }
  CHECK(f3.dropped_rows == before21);
  CHECK(f4.dropped_rows == before28);
  CHECK(f3.X.rows + f3.dropped_rows == static_cast<int>(panel.rows.size()));

  // Recompute one row's week-3 block straight from the raw trace.
  REQUIRE(f3.X.rows > 0);
  const int probe = f3.X.rows / 2;
  const auto& row = panel.rows[f3.panel_row[static_cast<size_t>(probe)]];
  const auto& trace = panel.traces[static_cast<size_t>(row.patient_id)];
  double sum = 0;
  long present = 0, low = 0, in_range = 0, high = 0;
  const long begin = static_cast<long>(row.day - 21) * cgm::kSlotsPerDay;
  for (long s = begin; s < begin + 7 * cgm::kSlotsPerDay; ++s) {
    const float g = trace.readings[static_cast<size_t>(s)];
    if (std::isnan(g)) continue;
    ++present;
    sum += g;
    if (g < cgm::kLowThreshold) {
      ++low;
    } else if (g <= cgm::kHighThreshold) {
      ++in_range;
    } else {
      ++high;
    }
  }
  REQUIRE(present > 0);
  CHECK(f3.X.at(probe, 20) == doctest::Approx(sum / present).epsilon(1e-12));
  CHECK(f3.X.at(probe, 21) == doctest::Approx(static_cast<double>(low) / present));
  CHECK(f3.X.at(probe, 22) == doctest::Approx(static_cast<double>(in_range) / present));
  CHECK(f3.X.at(probe, 23) == doctest::Approx(static_cast<double>(high) / present));

  // Message indicators agree with a scan of the logged actions on every row.
  std::map<int, std::vector<int>> msg_days;
  for (const auto& r : panel.rows) {
    if (!r.action.is_control()) msg_days[r.patient_id].push_back(r.day);
  }
  auto any_message_in = [&](int pid, int lo, int hi) {
    for (const int d : msg_days[pid]) {
      if (d >= lo && d < hi) return true;
    }
    return false;
  };
  for (int i = 0; i < f4.X.rows; ++i) {
    const int pid = f4.patient_ids[static_cast<size_t>(i)];
    const int day = f4.days[static_cast<size_t>(i)];
    CHECK(f4.X.at(i, 24) == (any_message_in(pid, day - 21, day - 14) ? 1.0 : 0.0));
    CHECK(f4.X.at(i, 29) == (any_message_in(pid, day - 28, day - 21) ? 1.0 : 0.0));
  }
}

TEST_CASE("frame row filters") {
  const auto panel = make_panel(30, 56, 17);
  const auto frame = eval::build_control_covariates(panel, 2);

  const auto rows = eval::rows_for_patients(frame, {0, 2, 5});
  CHECK(!rows.empty());
  for (const size_t r : rows) {
    const int pid = frame.patient_ids[r];
    CHECK((pid == 0 || pid == 2 || pid == 5));
  }

  const auto weekly = eval::rows_every_kth_day(frame, 7);
  CHECK(!weekly.empty());
  for (const size_t r : weekly) CHECK(frame.days[r] % 7 == 0);
  CHECK_THROWS_AS(eval::rows_every_kth_day(frame, 0), ConfigError);

  const auto sub = eval::select_rows(frame, rows);
  CHECK(sub.X.rows == static_cast<int>(rows.size()));
  CHECK(sub.column_names == frame.column_names);
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(sub.patient_ids[i] == frame.patient_ids[rows[i]]);
    CHECK(sub.panel_row[i] == frame.panel_row[rows[i]]);
    for (int c = 0; c < frame.X.cols; ++c) {
      CHECK(sub.X.at(static_cast<int>(i), c) == frame.X.at(static_cast<int>(rows[i]), c));
    }
  }
}

TEST_CASE("doubly robust scores reproduce the hand example") {
  eval::ControlFrame frame;
  frame.column_names = {"x"};
  frame.X = Matrix(2, 1);
  frame.patient_ids = {0, 1};
  frame.days = {14, 14};
  frame.actions = {2, 0};
  frame.rewards = {0.2, 0.3};
  frame.panel_row = {0, 1};

  const eval::OutcomeFn outcome = [](size_t, int a) {
    if (a == 2) return 0.1;
    if (a == 0) return 0.05;
    return 0.07;
  };
  const eval::PropensityFn propensity = [](size_t) {
    return std::vector<double>{0.25, 0.1, 0.25, 0.2, 0.2};
  };
  const auto table = eval::dr_scores(frame, outcome, propensity);

  // Observed action 2: gamma(2) = (0.1-0.05) + (0.2-0.1) * (1/0.25) = 0.45.
  CHECK(table.gamma.at(0, 2) == doctest::Approx(0.45).epsilon(1e-15));
  CHECK(table.gamma.at(0, 0) == 0.0);
  // Unobserved actions keep only the outcome-model contrast.
  CHECK(table.gamma.at(0, 1) == doctest::Approx(0.02));
  CHECK(table.gamma.at(0, 3) == doctest::Approx(0.02));

  // Observed control: the IPW term subtracts (r - r_hat(0)) / e(0).
  CHECK(table.gamma.at(1, 2) == doctest::Approx(0.05 + (0.3 - 0.05) * (0.0 - 1.0 / 0.25)));
  CHECK(table.gamma.at(1, 1) == doctest::Approx(0.02 + (0.3 - 0.05) * (0.0 - 1.0 / 0.25)));

  SUBCASE("invalid propensities are rejected") {
    const eval::PropensityFn bad_size = [](size_t) { return std::vector<double>{0.5, 0.5}; };
    CHECK_THROWS_AS(eval::dr_scores(frame, outcome, bad_size), InconsistentInputError);
    const eval::PropensityFn bad_sum = [](size_t) {
      return std::vector<double>{0.5, 0.5, 0.5, 0.25, 0.25};
    };
    CHECK_THROWS_AS(eval::dr_scores(frame, outcome, bad_sum), InconsistentInputError);
    const eval::PropensityFn zero = [](size_t) {
      return std::vector<double>{1.0, 0.0, 0.0, 0.0, 0.0};
    };
    CHECK_THROWS_AS(eval::dr_scores(frame, outcome, zero), InconsistentInputError);
  }
}

TEST_CASE("oracle nuisances recover the true per-action ATE") {
  const auto& panel = big_panel();
  const auto& frame = big_frame();
  REQUIRE(frame.X.rows > 28000);

  const auto table =
      eval::dr_scores(frame, oracle_outcome(panel, frame), oracle_propensity(panel, frame));
  const auto means = eval::dr_ate(table);
  const auto truth = true_ate(panel, frame);

  CHECK(means[0] == 0.0);
  for (int a = 1; a < kNumActionClasses; ++a) {
    const double err = std::abs(means[static_cast<size_t>(a)] - truth[static_cast<size_t>(a)]);
    std::printf("dr_ate action %d: est %+0.5f true %+0.5f err %.5f\n", a,
                means[static_cast<size_t>(a)], truth[static_cast<size_t>(a)], err);
    CHECK(err <= 0.005);
  }
}

TEST_CASE("one corrupted nuisance keeps DR consistent; two corrupt it") {
  const auto& panel = big_panel();
  const auto& frame = big_frame();
  const auto truth = true_ate(panel, frame);

  const auto oracle_r = oracle_outcome(panel, frame);
  const auto oracle_e = oracle_propensity(panel, frame);
  // Bias every treated-outcome prediction upward; leave control alone.
  const eval::OutcomeFn corrupt_r = [&](size_t i, int a) {
    return oracle_r(i, a) + (a == 0 ? 0.0 : 0.1);
  };
  const eval::PropensityFn corrupt_e = [](size_t) {
    return std::vector<double>(kNumActionClasses, 0.2);
  };

  auto max_err = [&](const eval::OutcomeFn& r, const eval::PropensityFn& e) {
    const auto means = eval::dr_ate(eval::dr_scores(frame, r, e));
    double worst = 0.0;
    for (int a = 1; a < kNumActionClasses; ++a) {
      worst = std::max(worst,
                       std::abs(means[static_cast<size_t>(a)] - truth[static_cast<size_t>(a)]));
    }
    return worst;
  };

  const double bad_outcome = max_err(corrupt_r, oracle_e);
  const double bad_propensity = max_err(oracle_r, corrupt_e);
  const double bad_both = max_err(corrupt_r, corrupt_e);
  std::printf("dr corruption: outcome-only %.5f propensity-only %.5f both %.5f\n", bad_outcome,
              bad_propensity, bad_both);
  CHECK(bad_outcome <= 0.01);
  CHECK(bad_propensity <= 0.01);
  CHECK(bad_both > 0.02);
}

TEST_CASE("estimate_att arithmetic") {
  const auto table = hand_table();
  const std::vector<int> chosen = {2, 0, 1, 1, 4};

  // Day 14: (0.2 + 0.5)/2, day 21: (0.6 + 0.7)/2; averaged over the 2 days.
  CHECK(eval::estimate_att(table, chosen, 2) == doctest::Approx(0.5));

  SUBCASE("all-control policy scores zero") {
    CHECK(eval::estimate_att(table, {0, 0, 0, 0, 0}, 2) == 0.0);
  }
  SUBCASE("linear in the scores") {
    auto scaled = table;
    for (double& v : scaled.gamma.data) v *= 3.0;
    CHECK(eval::estimate_att(scaled, chosen, 2) == doctest::Approx(1.5));

    auto summed = table;
    for (size_t i = 0; i < summed.gamma.data.size(); ++i) {
      summed.gamma.data[i] = table.gamma.data[i] + scaled.gamma.data[i];
    }
    CHECK(eval::estimate_att(summed, chosen, 2) ==
          doctest::Approx(eval::estimate_att(table, chosen, 2) +
                          eval::estimate_att(scaled, chosen, 2)));
  }
  SUBCASE("capacity violations throw") {
    CHECK_THROWS_AS(eval::estimate_att(table, {1, 1, 1, 0, 0}, 2), CapacityError);
  }
  SUBCASE("bad arguments throw") {
    CHECK_THROWS_AS(eval::estimate_att(table, chosen, 0), ConfigError);
    CHECK_THROWS_AS(eval::estimate_att(table, {1, 0, 0}, 2), InconsistentInputError);
    CHECK_THROWS_AS(eval::estimate_att(table, {7, 0, 0, 0, 0}, 2), UnknownActionError);
  }
}

TEST_CASE("per-day assignments follow the ranking rule and feed the toc grid") {
  // Random table over 30 patients and 4 days with partial presence.
  Rng rng(2024);
  eval::DrScoreTable table;
  Matrix tau(0, kNumActionClasses);
  table.gamma = Matrix(0, kNumActionClasses);
  for (const int day : {14, 21, 28, 35}) {
    for (int p = 0; p < 30; ++p) {
      if (rng.uniform() < 0.3) continue;
      std::vector<double> g(kNumActionClasses, 0.0), t(kNumActionClasses, 0.0);
      for (int a = 1; a < kNumActionClasses; ++a) {
        g[static_cast<size_t>(a)] = rng.uniform(-1.0, 1.0);
        t[static_cast<size_t>(a)] = rng.uniform(-1.0, 1.0);
      }
      table.gamma.push_row(g);
      tau.push_row(t);
      table.patient_ids.push_back(p);
      table.days.push_back(day);
      table.actions.push_back(0);
      table.rewards.push_back(0.0);
    }
  }

  const int K = 8;
  const auto chosen = eval::per_day_assignments(table, tau, K);

  // Independent re-ranking per day.
  std::map<int, std::vector<size_t>> by_day;
  for (size_t i = 0; i < table.days.size(); ++i) by_day[table.days[i]].push_back(i);
  std::vector<int> want(table.days.size(), 0);
  for (auto& [day, rows] : by_day) {
    auto best_of = [&](size_t r) {
      int arg = 1;
      for (int a = 2; a < kNumActionClasses; ++a) {
        if (tau.at(static_cast<int>(r), a) > tau.at(static_cast<int>(r), arg)) arg = a;
      }
      return arg;
    };
    std::stable_sort(rows.begin(), rows.end(), [&](size_t x, size_t y) {
      const double sx = tau.at(static_cast<int>(x), best_of(x));
      const double sy = tau.at(static_cast<int>(y), best_of(y));
      if (sx != sy) return sx > sy;
      return table.patient_ids[x] < table.patient_ids[y];
    });
    for (size_t j = 0; j < rows.size() && j < static_cast<size_t>(K); ++j) {
      want[rows[j]] = best_of(rows[j]);
    }
  }
  CHECK(chosen == want);

  // The ATT of those assignments equals the matching toc grid point.
  const auto report = eval::toc_curve(table, tau, 0, 1);
  REQUIRE(report.points.size() == 20);
  CHECK(report.n_patients == 30);
  CHECK(report.points[4].K == 8);  // round(0.25 * 30)
  CHECK(eval::estimate_att(table, chosen, K) == doctest::Approx(report.points[4].att));
  CHECK(report.att25 == doctest::Approx(report.points[4].att));
  CHECK(report.k25 == 8);
}

TEST_CASE("toc curve invariants on a fully present table") {
  Rng rng(31);
  eval::DrScoreTable table;
  table.gamma = Matrix(0, kNumActionClasses);
  Matrix tau(0, kNumActionClasses);
  for (const int day : {14, 15, 16, 17, 18}) {
    for (int p = 0; p < 12; ++p) {
      std::vector<double> g(kNumActionClasses, 0.0), t(kNumActionClasses, 0.0);
      for (int a = 1; a < kNumActionClasses; ++a) {
        g[static_cast<size_t>(a)] = rng.uniform(-0.5, 1.0);
        t[static_cast<size_t>(a)] = rng.uniform(-0.5, 1.0);
      }
      table.gamma.push_row(g);
      tau.push_row(t);
      table.patient_ids.push_back(p);
      table.days.push_back(day);
      table.actions.push_back(0);
      table.rewards.push_back(0.0);
    }
  }
  const auto report = eval::toc_curve(table, tau, 0, 9);

  // With everyone present every day, the K/N=1 point is the plain mean of
  // each row's chosen-action score.
  double mean_chosen = 0.0;
  for (int i = 0; i < table.gamma.rows; ++i) {
    int arg = 1;
    for (int a = 2; a < kNumActionClasses; ++a) {
      if (tau.at(i, a) > tau.at(i, arg)) arg = a;
    }
    mean_chosen += table.gamma.at(i, arg);
  }
  mean_chosen /= static_cast<double>(table.gamma.rows);
  CHECK(report.points.back().K == 12);
  CHECK(report.points.back().att == doctest::Approx(mean_chosen).epsilon(1e-12));

  // AUTOC is the trapezoid of (att - final point) over the ratio grid.
  double area = 0.0;
  for (size_t j = 0; j + 1 < report.points.size(); ++j) {
    const double f0 = report.points[j].att - report.points.back().att;
    const double f1 = report.points[j + 1].att - report.points.back().att;
    area += 0.05 * 0.5 * (f0 + f1);
  }
  CHECK(report.autoc == doctest::Approx(area).epsilon(1e-12));

  // Grid ratios and capacities.
  for (size_t j = 0; j < report.points.size(); ++j) {
    CHECK(report.points[j].ratio == doctest::Approx(0.05 * static_cast<double>(j + 1)));
    CHECK(report.points[j].K >= 1);
  }

  // Baseline is the DR ATE of the action with the highest predicted ATE.
  std::vector<double> pred(kNumActionClasses, 0.0), dr(kNumActionClasses, 0.0);
  for (int i = 0; i < tau.rows; ++i) {
    for (int a = 1; a < kNumActionClasses; ++a) {
      pred[static_cast<size_t>(a)] += tau.at(i, a);
      dr[static_cast<size_t>(a)] += table.gamma.at(i, a);
    }
  }
  const int best_pred = static_cast<int>(
      std::max_element(pred.begin() + 1, pred.end()) - pred.begin());
  CHECK(report.baseline_action == best_pred);
  CHECK(report.ate_baseline ==
        doctest::Approx(dr[static_cast<size_t>(best_pred)] / tau.rows).epsilon(1e-12));
}

TEST_CASE("bootstrap interval basics") {
  SUBCASE("constant statistic collapses the interval") {
    std::vector<double> values(40, 5.0);
    std::vector<int> ids;
    for (int i = 0; i < 40; ++i) ids.push_back(i % 10);
    const auto ci = eval::bootstrap_ci(values, ids, 200, 0.95, 3);
    CHECK(ci.lo == 5.0);
    CHECK(ci.hi == 5.0);
  }
  SUBCASE("replicates resample whole patients") {
    // Patient 0 contributes rows {0,0}; patient 1 contributes {2}. Every
    // replicate mean must be one of 0, 2/3, or 2.
    const std::vector<double> values = {0.0, 0.0, 2.0};
    const std::vector<int> ids = {0, 0, 1};
    const auto ci = eval::bootstrap_ci(values, ids, 500, 0.6, 17);
    auto is_reachable = [](double v) {
      return std::abs(v) < 1e-12 || std::abs(v - 2.0 / 3.0) < 1e-12 || std::abs(v - 2.0) < 1e-12;
    };
    CHECK(ci.lo <= ci.hi);
    // Percentile endpoints interpolate between order statistics, so they must
    // lie within the convex hull of the reachable values.
    CHECK(ci.lo >= 0.0);
    CHECK(ci.hi <= 2.0);
    CHECK((is_reachable(ci.lo) || (ci.lo > 0.0 && ci.lo < 2.0)));
  }
  SUBCASE("same seed reproduces the interval") {
    std::vector<double> values;
    std::vector<int> ids;
    Rng rng(77);
    for (int i = 0; i < 200; ++i) {
      values.push_back(rng.normal());
      ids.push_back(i);
    }
    const auto a = eval::bootstrap_ci(values, ids, 300, 0.95, 5);
    const auto b = eval::bootstrap_ci(values, ids, 300, 0.95, 5);
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
  }
  SUBCASE("argument validation") {
    const std::vector<double> v = {1.0, 2.0};
    const std::vector<int> ids = {0, 1};
    CHECK_THROWS_AS(eval::bootstrap_ci(v, {0}, 200, 0.95, 1), InconsistentInputError);
    CHECK_THROWS_AS(eval::bootstrap_ci(v, ids, 99, 0.95, 1), ConfigError);
    CHECK_THROWS_AS(eval::bootstrap_ci(v, ids, 200, 1.0, 1), ConfigError);
    CHECK_THROWS_AS(eval::bootstrap_ci(v, {0, 0}, 200, 0.95, 1), InsufficientSupportError);
  }
}

TEST_CASE("bootstrap coverage on a known mean") {
  // 400 patients with one N(0,1) value each; the 95% interval should cover
  // the true mean (0) in roughly 95% of 200 independent repetitions.
  int covered = 0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    Rng rng(hash_stream(9000, static_cast<uint64_t>(rep)));
    std::vector<double> values;
    std::vector<int> ids;
    for (int i = 0; i < 400; ++i) {
      values.push_back(rng.normal());
      ids.push_back(i);
    }
    const auto ci = eval::bootstrap_ci(values, ids, 200, 0.95,
                                       hash_stream(9500, static_cast<uint64_t>(rep)));
    if (ci.lo <= 0.0 && 0.0 <= ci.hi) ++covered;
  }
  const double rate = static_cast<double>(covered) / reps;
  std::printf("bootstrap coverage: %.3f\n", rate);
  CHECK(rate >= 0.92);
  CHECK(rate <= 0.98);
}

TEST_CASE("toc bootstrap: constant tau-hat has AUTOC compatible with zero") {
  const auto panel = make_panel(300, 56, 19);
  const auto frame = eval::build_control_covariates(panel, 2);
  const auto table =
      eval::dr_scores(frame, oracle_outcome(panel, frame), oracle_propensity(panel, frame));

  // Constant scores: each day is one tie block, so every capacity takes the
  // same pro-rata day mean and the curve is flat up to rounding.
  Matrix tau(table.gamma.rows, kNumActionClasses);
  for (int i = 0; i < tau.rows; ++i) {
    for (int a = 1; a < kNumActionClasses; ++a) tau.at(i, a) = 0.02;
  }
  const auto report = eval::toc_curve(table, tau, 200, 77);
  const double half_width = 0.5 * (report.autoc_ci.hi - report.autoc_ci.lo);
  std::printf("constant-tau autoc: %+0.6f ci [%+0.6f, %+0.6f]\n", report.autoc,
              report.autoc_ci.lo, report.autoc_ci.hi);
  CHECK(std::abs(report.autoc) <= half_width + 1e-12);

  // Every row's argmax is the lowest class under ties, so the curve treats
  // class-1 scores throughout.
  for (std::size_t j = 0; j < report.points.size(); ++j) {
    const auto& p = report.points[j];
    CHECK(p.lo <= p.att);
    CHECK(p.hi >= p.att);
    if (j + 1 < report.points.size()) {
      CHECK(std::abs(p.att - report.points[j + 1].att) <= 1e-12);
    }
  }

  SUBCASE("tied scores rotate the treated subset across days") {
    const auto chosen = eval::per_day_assignments(table, tau, 10);
    std::map<int, std::set<int>> treated_by_day;
    for (size_t i = 0; i < chosen.size(); ++i) {
      if (chosen[i] != 0) treated_by_day[table.days[i]].insert(table.patient_ids[i]);
    }
    REQUIRE(treated_by_day.size() > 1);
    std::set<std::set<int>> distinct;
    for (const auto& [day, ids] : treated_by_day) {
      CHECK(ids.size() <= 10);
      distinct.insert(ids);
    }
    CHECK(distinct.size() > 1);
    CHECK(eval::per_day_assignments(table, tau, 10) == chosen);  // deterministic
  }
  SUBCASE("toc argument validation") {
    CHECK_THROWS_AS(eval::toc_curve(table, tau, 50, 1), ConfigError);
    CHECK_THROWS_AS(eval::toc_curve(table, tau, 200, 1, 1.5), ConfigError);
    Matrix bad(3, kNumActionClasses);
    CHECK_THROWS_AS(eval::toc_curve(table, bad, 0, 1), InconsistentInputError);
  }
}

TEST_CASE("oracle tau-hat yields a non-increasing toc curve") {
  const auto panel = make_panel(300, 56, 23);
  const auto frame = eval::build_control_covariates(panel, 2);
  const auto table =
      eval::dr_scores(frame, oracle_outcome(panel, frame), oracle_propensity(panel, frame));

  Matrix tau(table.gamma.rows, kNumActionClasses);
  for (int i = 0; i < tau.rows; ++i) {
    const auto& row = panel.rows[frame.panel_row[static_cast<size_t>(i)]];
    for (int a = 1; a < kNumActionClasses; ++a) {
      tau.at(i, a) = row.oracle.effects[static_cast<size_t>(a)];
    }
  }
  const auto report = eval::toc_curve(table, tau, 200, 3);
  for (size_t j = 0; j + 1 < report.points.size(); ++j) {
    const double half = 0.5 * (report.points[j].hi - report.points[j].lo);
    CHECK(report.points[j + 1].att <= report.points[j].att + half);
  }
}
