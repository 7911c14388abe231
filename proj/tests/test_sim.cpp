#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "tirtarget/sim.hpp"

using namespace tir;
using namespace tir::sim;

namespace {

// Survival function of chi-square with 4 degrees of freedom.
double chi2_df4_pvalue(double x) { return std::exp(-x / 2.0) * (1.0 + x / 2.0); }

double message_rate(const LoggedPanel& panel, bool flagged) {
  long n = 0, msgs = 0;
  for (const auto& row : panel.rows) {
    if ((row.features.large_tir_drop > 0.5) != flagged) continue;
    ++n;
    if (!row.action.is_control()) ++msgs;
  }
  REQUIRE(n > 100);
  return static_cast<double>(msgs) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("cohort sampling") {
  CHECK(sample_cohort(0, 7).empty());

  auto a = sample_cohort(281, 7);
  auto b = sample_cohort(281, 7);
  REQUIRE(a.size() == 281);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].patient_id == static_cast<int>(i));
    CHECK(a[i].baseline_mean_glucose == b[i].baseline_mean_glucose);
    CHECK(a[i].responsiveness == b[i].responsiveness);
    CHECK(a[i].pump_user == b[i].pump_user);
    CHECK(a[i].baseline_mean_glucose >= 80);
    CHECK(a[i].baseline_mean_glucose <= 350);
    CHECK(a[i].responsiveness >= 0);
    CHECK(a[i].responsiveness <= 1);
    CHECK((a[i].population >= 0 && a[i].population <= 2));
    if (!a[i].pump_user) CHECK_FALSE(a[i].aid_user);
  }

  auto big = sample_cohort(10000, 1);
  long pumps = 0;
  for (const auto& p : big) pumps += p.pump_user ? 1 : 0;
  CHECK(std::abs(pumps / 10000.0 - 0.7) < 0.02);
}

TEST_CASE("cohort is stable under size changes") {
  auto small = sample_cohort(4, 11);
  auto large = sample_cohort(12, 11);
  CHECK(small[3].baseline_mean_glucose == large[3].baseline_mean_glucose);
  CHECK(small[3].missing_prob == large[3].missing_prob);
}

TEST_CASE("trace invariants") {
  SimConfig cfg;
  cfg.seed = 5;
  cfg.days = 28;
  auto cohort = sample_cohort(3, cfg.seed);
  for (const auto& p : cohort) {
    auto t = simulate_trace(p, cfg);
    REQUIRE(t.readings.size() == static_cast<size_t>(28) * cgm::kSlotsPerDay);
    long missing = 0;
    for (float g : t.readings) {
      if (std::isnan(g)) {
        ++missing;
        continue;
      }
      CHECK(g >= 40.0f);
      CHECK(g <= 400.0f);
    }
    const double frac = static_cast<double>(missing) / static_cast<double>(t.readings.size());
    CHECK(frac >= 0.0);
    CHECK(frac < 0.6);
  }
}

TEST_CASE("true_cate directional claims") {
  EffectSpec spec;
  cgm::ClinicalFeatures f;
  f.high_7dr = 0.5;
  f.low_7dr = 0.10;
  f.using_pump = 0;

  CHECK(true_cate(spec, f, ActionClass::control) == 0.0);
  CHECK(true_cate(spec, f, ActionClass::highs_only) == doctest::Approx(0.12 * 0.5 * 1.5));

  cgm::ClinicalFeatures pump = f;
  pump.using_pump = 1;
  CHECK(true_cate(spec, f, ActionClass::highs_only) >
        true_cate(spec, pump, ActionClass::highs_only));

  cgm::ClinicalFeatures no_lows = f;
  no_lows.low_7dr = 0.0;
  CHECK(true_cate(spec, f, ActionClass::lows_only) >
        true_cate(spec, no_lows, ActionClass::lows_only));

  CHECK(true_cate(spec, f, ActionClass::highs_and_lows) ==
        doctest::Approx(0.8 * (0.12 * 0.5 * 1.5 + 0.06 * 0.10)));
  CHECK(true_cate(spec, f, ActionClass::other) == doctest::Approx(0.005));
  CHECK(true_cate(spec, f, ActionClass::highs_only, 0.5) ==
        doctest::Approx(0.5 * 0.12 * 0.5 * 1.5));
  CHECK_THROWS_AS(action_class_from_int(5), UnknownActionError);
}

TEST_CASE("panel generation is deterministic and respects invariants") {
  SimConfig cfg;
  cfg.seed = 13;
  cfg.n_patients = 40;
  cfg.days = 70;
  auto p1 = simulate_panel(cfg);
  auto p2 = simulate_panel(cfg);
  REQUIRE(p1.rows.size() == p2.rows.size());
  REQUIRE(!p1.rows.empty());

  std::map<int, std::vector<int>> msg_days;
  for (size_t i = 0; i < p1.rows.size(); ++i) {
    const auto& r = p1.rows[i];
    const auto& r2 = p2.rows[i];
    CHECK(r.patient_id == r2.patient_id);
    CHECK(r.day == r2.day);
    CHECK(r.reward == r2.reward);
    CHECK(r.action.class_label == r2.action.class_label);
    CHECK(r.oracle.propensities == r2.oracle.propensities);

    CHECK(r.day >= 14);
    CHECK(r.day <= cfg.days - 7);
    CHECK(r.reward >= -1.0);
    CHECK(r.reward <= 1.0);
    CHECK(r.features.time_worn_7dr >= cfg.min_wear);

    double total = 0;
    for (double p : r.oracle.propensities) {
      CHECK(p >= cfg.propensity_floor - 1e-15);
      total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

    CHECK(r.oracle.effects[0] == 0.0);
    CHECK(r.oracle.control_response ==
          doctest::Approx(cfg.rtm_coef * r.features.in_range_7dr_7d_delta));
    CHECK(r.oracle.responsiveness >= 0.0);
    CHECK(r.oracle.responsiveness <= 1.0);

    const auto& l = r.action.labels;
    const bool H = l.recommendations_target_high_glucose_or_low_time_in_range ||
                   l.recommends_more_correction_doses || l.reminds_patient_to_bolus;
    const bool L = l.recommendations_target_low_glucose;
    switch (r.action.class_label) {
      case ActionClass::control: {
        CHECK_FALSE(l.any());
        for (double e : r.action.embedding) CHECK(e == 0.0);
        break;
      }
      case ActionClass::highs_and_lows:
        CHECK(H);
        CHECK(L);
        break;
      case ActionClass::highs_only:
        CHECK(H);
        CHECK_FALSE(L);
        break;
      case ActionClass::lows_only:
        CHECK(L);
        CHECK_FALSE(H);
        break;
      case ActionClass::other:
        CHECK_FALSE(H);
        CHECK_FALSE(L);
        break;
    }
    if (!r.action.is_control()) msg_days[r.patient_id].push_back(r.day);
  }

  for (auto& [pid, days] : msg_days) {
    for (size_t i = 1; i < days.size(); ++i) CHECK(days[i] - days[i - 1] >= 7);
  }
}

TEST_CASE("a patient's rows do not depend on who else is in the cohort") {
  SimConfig small;
  small.seed = 21;
  small.n_patients = 4;
  small.days = 49;
  SimConfig large = small;
  large.n_patients = 12;

  auto ps = simulate_panel(small);
  auto pl = simulate_panel(large);
  auto rows_of = [](const LoggedPanel& p, int pid) {
    std::vector<const PanelRow*> out;
    for (const auto& r : p.rows)
      if (r.patient_id == pid) out.push_back(&r);
    return out;
  };
  for (int pid : {0, 1, 2, 3}) {
    auto a = rows_of(ps, pid);
    auto b = rows_of(pl, pid);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i]->day == b[i]->day);
      CHECK(a[i]->reward == b[i]->reward);
      CHECK(a[i]->action.class_label == b[i]->action.class_label);
      CHECK(a[i]->features.g_7dr == b[i]->features.g_7dr);
    }
  }
}

TEST_CASE("no confounding at strength zero") {
  SimConfig cfg;
  cfg.seed = 31;
  cfg.n_patients = 1050;
  cfg.days = 104;
  cfg.confounding_strength = 0.0;
  auto panel = simulate_panel(cfg);
  REQUIRE(panel.rows.size() > 48000);

  // 2 x 5 contingency table of flag vs action class.
  long table[2][5] = {};
  for (const auto& r : panel.rows) {
    const int flag = r.features.large_tir_drop > 0.5 ? 1 : 0;
    table[flag][to_int(r.action.class_label)]++;
  }
  long row_sum[2] = {}, col_sum[5] = {}, n = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 5; ++j) {
      row_sum[i] += table[i][j];
      col_sum[j] += table[i][j];
      n += table[i][j];
    }
  double stat = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 5; ++j) {
      const double expected =
          static_cast<double>(row_sum[i]) * static_cast<double>(col_sum[j]) / n;
      REQUIRE(expected > 0);
      const double d = table[i][j] - expected;
      stat += d * d / expected;
    }
  CHECK(chi2_df4_pvalue(stat) > 0.01);
}

TEST_CASE("confounding tilts messages toward flagged patient-days") {
  SimConfig cfg;
  cfg.seed = 37;
  cfg.n_patients = 300;
  cfg.days = 104;
  cfg.confounding_strength = 2.0;
  auto panel = simulate_panel(cfg);
  CHECK(message_rate(panel, true) - message_rate(panel, false) >= 0.1);
}

TEST_CASE("oracle ATT on a hand-built panel") {
  LoggedPanel panel;
  panel.cohort.resize(3);
  for (int i = 0; i < 3; ++i) panel.cohort[static_cast<size_t>(i)].patient_id = i;

  auto add_row = [&](int pid, int day, double e1, double e2) {
    PanelRow r;
    r.patient_id = pid;
    r.day = day;
    r.oracle.effects = {0.0, e1, e2, 0.0, 0.0};
    panel.rows.push_back(r);
  };
  add_row(0, 14, 0.10, 0.20);
  add_row(1, 14, 0.30, 0.05);
  add_row(2, 14, 0.02, 0.01);
  add_row(0, 15, 0.40, 0.00);
  add_row(1, 15, 0.10, 0.60);

  const auto hl = ActionClass::highs_and_lows;
  const auto ho = ActionClass::highs_only;
  const auto c0 = ActionClass::control;

  CHECK(oracle_att(panel, {c0, c0, c0}, 2) == 0.0);
  // Day 14: 0.10 + 0.05; day 15: 0.40 + 0.60; each divided by K = 2.
  CHECK(oracle_att(panel, {hl, ho, c0}, 2) ==
        doctest::Approx(0.5 * ((0.10 + 0.05) / 2.0 + (0.40 + 0.60) / 2.0)));
  // Single treated patient under K = 1.
  CHECK(oracle_att(panel, {hl, c0, c0}, 1) == doctest::Approx(0.5 * (0.10 + 0.40)));
  CHECK_THROWS_AS(oracle_att(panel, {hl, ho, c0}, 1), CapacityError);
  CHECK_THROWS_AS(oracle_att(panel, {hl, c0}, 2), InconsistentInputError);
  CHECK_THROWS_AS(oracle_att(panel, {hl, c0, c0}, 0), ConfigError);
}

TEST_CASE("oracle ATT matches a direct recount on simulated data") {
  SimConfig cfg;
  cfg.seed = 41;
  cfg.n_patients = 12;
  cfg.days = 42;
  auto panel = simulate_panel(cfg);
  REQUIRE(!panel.rows.empty());

  std::vector<ActionClass> assign(12, ActionClass::control);
  for (int i = 0; i < 12; i += 2) assign[static_cast<size_t>(i)] = ActionClass::highs_only;

  std::map<int, double> day_sum;
  for (const auto& r : panel.rows) {
    day_sum.try_emplace(r.day, 0.0);
    day_sum[r.day] += r.oracle.effects[static_cast<size_t>(to_int(assign[static_cast<size_t>(r.patient_id)]))];
  }
  double expected = 0;
  for (auto& [d, s] : day_sum) expected += s / 6.0;
  expected /= static_cast<double>(day_sum.size());
  CHECK(oracle_att(panel, assign, 6) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("panel requires a two-week warmup") {
  SimConfig cfg;
  cfg.days = 13;
  CHECK_THROWS_AS(simulate_panel(cfg), WindowTooShortError);
}
