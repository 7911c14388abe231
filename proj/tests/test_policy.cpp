#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <vector>

#include "tirtarget/errors.hpp"
#include "tirtarget/policy.hpp"
#include "tirtarget/rng.hpp"
#include "tirtarget/sim.hpp"

using namespace tir;

namespace {

Matrix score_table(const std::vector<std::vector<double>>& rows) {
  Matrix m;
  for (const auto& r : rows) m.push_row(r);
  return m;
}

std::vector<int> iota_ids(int n, int first = 0) {
  std::vector<int> ids(static_cast<size_t>(n));
  std::iota(ids.begin(), ids.end(), first);
  return ids;
}

std::set<std::pair<int, int>> treated_pairs(const policy::Assignment& a) {
  std::set<std::pair<int, int>> out;
  for (const auto& e : a.entries) {
    if (e.action != 0) out.insert({e.patient_id, e.action});
  }
  return out;
}

// Best achievable total score over fixed assignments: choose `exact` ? (size
// == K) : (size <= K) treated patients, each with any non-control action.
double brute_force_best_total(const Matrix& scores, int K, bool exact) {
  const int n = scores.rows;
  double best = exact && K > 0 ? -1e18 : 0.0;
  std::function<void(int, int, double)> rec = [&](int i, int used, double total) {
    if (i == n) {
      if (!exact || used == std::min(K, n)) best = std::max(best, total);
      return;
    }
    rec(i + 1, used, total);  // leave patient i on control
    if (used < K) {
      for (int a = 1; a < scores.cols; ++a) rec(i + 1, used + 1, total + scores.at(i, a));
    }
  };
  rec(0, 0, 0.0);
  return best;
}

double assigned_total(const policy::Assignment& a, const Matrix& scores,
                      const std::vector<int>& ids) {
  double total = 0.0;
  for (const auto& e : a.entries) {
    if (e.action == 0) continue;
    const auto it = std::find(ids.begin(), ids.end(), e.patient_id);
    REQUIRE(it != ids.end());
    total += scores.at(static_cast<int>(it - ids.begin()), e.action);
  }
  return total;
}

sim::LoggedPanel small_panel(int n_patients, int days, uint64_t seed) {
  sim::SimConfig cfg;
  cfg.n_patients = n_patients;
  cfg.days = days;
  cfg.seed = seed;
  return sim::simulate_panel(cfg);
}

Matrix oracle_tau_matrix(const sim::LoggedPanel& panel) {
  Matrix tau(static_cast<int>(panel.rows.size()), kNumActionClasses);
  for (size_t r = 0; r < panel.rows.size(); ++r) {
    for (int a = 0; a < kNumActionClasses; ++a) {
      tau.at(static_cast<int>(r), a) = panel.rows[r].oracle.effects[static_cast<size_t>(a)];
    }
  }
  return tau;
}

struct TableModel : learn::CateModel {
  std::function<double(std::span<const double>, int)> fn;

  TableModel(int n_classes, std::function<double(std::span<const double>, int)> f)
      : learn::CateModel(n_classes), fn(std::move(f)) {}
  learn::Method method() const override { return learn::Method::s_learner; }

 protected:
  double predict_impl(std::span<const double> s, int action) const override {
    return fn(s, action);
  }
};

}  // namespace

TEST_CASE("induce_policy ranks by best score and treats the top K") {
  const auto scores = score_table({
      {0, 0.5, 0.2},    // p10 -> a1, 0.5
      {0, 0.1, 0.7},    // p11 -> a2, 0.7
      {0, -0.2, -0.1},  // p12 -> a2, -0.1
      {0, 0.3, 0.3},    // p13 -> tie, lowest class wins: a1, 0.3
      {0, 0.0, -0.4},   // p14 -> a1, 0.0
      {0, 0.7, 0.7},    // p15 -> a1, 0.7 (score tied with p11; lower id ranks first)
  });
  const std::vector<int> ids{10, 11, 12, 13, 14, 15};

  const auto a = policy::induce_policy(scores, ids, 3);
  REQUIRE(a.entries.size() == 6);
  CHECK(a.capacity == 3);
  CHECK(a.n_treated() == 3);

  // Rank order: ties on score resolved toward the lower patient id.
  const std::vector<int> want_ids{11, 15, 10, 13, 14, 12};
  const std::vector<double> want_scores{0.7, 0.7, 0.5, 0.3, 0.0, -0.1};
  for (size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].rank == static_cast<int>(i) + 1);
    CHECK(a.entries[i].patient_id == want_ids[i]);
    CHECK(a.entries[i].score == doctest::Approx(want_scores[i]));
  }
  CHECK(a.entries[0].action == 2);
  CHECK(a.entries[1].action == 1);
  CHECK(a.entries[2].action == 1);
  for (size_t i = 3; i < 6; ++i) CHECK(a.entries[i].action == 0);

  SUBCASE("large K treats everyone, negative scores included") {
    const auto full = policy::induce_policy(scores, ids, 6);
    CHECK(full.n_treated() == 6);
    CHECK(full.entries.back().patient_id == 12);
    CHECK(full.entries.back().action == 2);  // best of two negative scores
  }
  SUBCASE("skip_negative parks non-positive best scores on control") {
    const auto skip = policy::induce_policy(scores, ids, 6, /*skip_negative=*/true);
    CHECK(skip.n_treated() == 4);  // p14 (0.0) and p12 (-0.1) stay on control
    for (const auto& e : skip.entries) {
      if (e.patient_id == 14 || e.patient_id == 12) CHECK(e.action == 0);
    }
  }
  SUBCASE("K = 0 treats nobody") {
    const auto none = policy::induce_policy(scores, ids, 0);
    CHECK(none.n_treated() == 0);
    for (const auto& e : none.entries) CHECK(e.action == 0);
  }
}

TEST_CASE("induced policy matches the brute-force optimum on score tables") {
  for (uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(hash_stream(404, seed));
    Matrix scores(6, 3);
    for (int i = 0; i < 6; ++i) {
      for (int a = 1; a < 3; ++a) scores.at(i, a) = rng.uniform(-1.0, 1.0);
    }
    const auto ids = iota_ids(6);

    const auto literal = policy::induce_policy(scores, ids, 2);
    CHECK(std::abs(assigned_total(literal, scores, ids) -
                   brute_force_best_total(scores, 2, true)) <= 1e-12);

    const auto skip = policy::induce_policy(scores, ids, 2, /*skip_negative=*/true);
    CHECK(std::abs(assigned_total(skip, scores, ids) -
                   brute_force_best_total(scores, 2, false)) <= 1e-12);
  }
}

TEST_CASE("treated sets are nested as capacity grows") {
  Rng rng(88);
  const int n = 30;
  Matrix scores(n, kNumActionClasses);
  for (int i = 0; i < n; ++i) {
    for (int a = 1; a < kNumActionClasses; ++a) scores.at(i, a) = rng.uniform(-0.5, 0.5);
  }
  const auto ids = iota_ids(n, 100);

  auto prev = treated_pairs(policy::induce_policy(scores, ids, 0));
  for (int k = 1; k <= n + 2; ++k) {
    const auto a = policy::induce_policy(scores, ids, k);
    CHECK(a.n_treated() == std::min(k, n));
    const auto cur = treated_pairs(a);
    CHECK(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
    prev = cur;
  }
}

TEST_CASE("selection is invariant to strictly increasing score transforms") {
  Rng rng(1234);
  Matrix scores(20, 4);
  for (int i = 0; i < 20; ++i) {
    for (int a = 1; a < 4; ++a) scores.at(i, a) = rng.uniform(-1.0, 1.0);
  }
  Matrix warped = scores;
  for (int i = 0; i < 20; ++i) {
    for (int a = 1; a < 4; ++a) warped.at(i, a) = std::exp(3.0 * scores.at(i, a));
  }
  const auto ids = iota_ids(20);
  const auto base = policy::induce_policy(scores, ids, 7);
  const auto after = policy::induce_policy(warped, ids, 7);
  REQUIRE(base.entries.size() == after.entries.size());
  for (size_t i = 0; i < base.entries.size(); ++i) {
    CHECK(base.entries[i].patient_id == after.entries[i].patient_id);
    CHECK(base.entries[i].action == after.entries[i].action);
    CHECK(base.entries[i].rank == after.entries[i].rank);
  }
}

TEST_CASE("cate model overload agrees with the score-table route") {
  // Score depends on the first state coordinate so rows are distinguishable.
  TableModel model(3, [](std::span<const double> s, int a) { return s[0] * a - 0.1; });
  Matrix states(5, 2);
  for (int i = 0; i < 5; ++i) states.at(i, 0) = 0.1 * i;
  const auto ids = iota_ids(5);

  Matrix scores(5, 3);
  for (int i = 0; i < 5; ++i) {
    for (int a = 1; a < 3; ++a) scores.at(i, a) = model.predict(states.row(i), a);
  }
  const auto via_model = policy::induce_policy(model, states, ids, 2);
  const auto via_table = policy::induce_policy(scores, ids, 2);
  REQUIRE(via_model.entries.size() == via_table.entries.size());
  for (size_t i = 0; i < via_model.entries.size(); ++i) {
    CHECK(via_model.entries[i].patient_id == via_table.entries[i].patient_id);
    CHECK(via_model.entries[i].action == via_table.entries[i].action);
    CHECK(via_model.entries[i].score == doctest::Approx(via_table.entries[i].score));
  }
}

TEST_CASE("optimal fixed assignment dominates every feasible alternative") {
  const auto panel = small_panel(8, 56, 21);
  const int n = static_cast<int>(panel.cohort.size());
  const int K = 2;

  Matrix sums(n, kNumActionClasses);
  for (const auto& row : panel.rows) {
    for (int a = 1; a < kNumActionClasses; ++a) {
      sums.at(row.patient_id, a) += row.oracle.effects[static_cast<size_t>(a)];
    }
  }
  const auto optimal = policy::optimal_policy(sums, iota_ids(n), K);
  const double best = sim::oracle_att(panel, policy::to_action_vector(optimal, n), K);

  // Enumerate every fixed assignment treating at most K of the 8 patients.
  int checked = 0;
  std::function<void(int, int, std::vector<ActionClass>&)> rec =
      [&](int i, int used, std::vector<ActionClass>& acts) {
        if (i == n) {
          CHECK(sim::oracle_att(panel, acts, K) <= best + 1e-12);
          ++checked;
          return;
        }
        rec(i + 1, used, acts);
        if (used < K) {
          for (int a = 1; a < kNumActionClasses; ++a) {
            acts[static_cast<size_t>(i)] = action_class_from_int(a);
            rec(i + 1, used + 1, acts);
            acts[static_cast<size_t>(i)] = ActionClass::control;
          }
        }
      };
  std::vector<ActionClass> acts(static_cast<size_t>(n), ActionClass::control);
  rec(0, 0, acts);
  CHECK(checked == 481);  // 1 + 8*4 + 28*16
}

TEST_CASE("policy regret is exactly zero when tau-hat equals the oracle effects") {
  const auto panel = small_panel(40, 56, 5);
  const auto tau = oracle_tau_matrix(panel);
  CHECK(policy::policy_regret(panel, tau, 10) == 0.0);
}

TEST_CASE("policy regret is bounded by twice the score perturbation") {
  const auto panel = small_panel(40, 56, 9);
  const auto tau = oracle_tau_matrix(panel);

  for (const double eps : {0.001, 0.01, 0.05}) {
    for (uint64_t rep = 0; rep < 5; ++rep) {
      Rng rng(hash_stream(777, rep));
      Matrix noisy = tau;
      for (int r = 0; r < noisy.rows; ++r) {
        for (int a = 1; a < noisy.cols; ++a) noisy.at(r, a) += rng.uniform(-eps, eps);
      }
      const double regret = policy::policy_regret(panel, noisy, 10);
      CHECK(regret >= 0.0);
      CHECK(regret <= 2.0 * eps + 1e-12);
    }
  }
}

TEST_CASE("average regret grows with the noise level") {
  const auto panel = small_panel(40, 56, 13);
  const auto tau = oracle_tau_matrix(panel);

  auto mean_regret = [&](double eps) {
    double total = 0.0;
    for (uint64_t rep = 0; rep < 20; ++rep) {
      Rng rng(hash_stream(555, rep));
      Matrix noisy = tau;
      for (int r = 0; r < noisy.rows; ++r) {
        for (int a = 1; a < noisy.cols; ++a) noisy.at(r, a) += rng.uniform(-eps, eps);
      }
      total += policy::policy_regret(panel, noisy, 10);
    }
    return total / 20.0;
  };
  CHECK(mean_regret(0.05) >= mean_regret(0.001));
}

TEST_CASE("policy input validation") {
  const auto scores = score_table({{0, 0.1, 0.2}, {0, 0.3, 0.4}});

  SUBCASE("row count must match ids") {
    CHECK_THROWS_AS(policy::induce_policy(scores, {1}, 1), InconsistentInputError);
  }
  SUBCASE("duplicate patient ids are rejected") {
    CHECK_THROWS_AS(policy::induce_policy(scores, {3, 3}, 1), InconsistentInputError);
  }
  SUBCASE("negative capacity is rejected") {
    CHECK_THROWS_AS(policy::induce_policy(scores, {1, 2}, -1), ConfigError);
  }
  SUBCASE("non-finite scores are rejected") {
    auto bad = scores;
    bad.at(0, 1) = std::nan("");
    CHECK_THROWS_AS(policy::induce_policy(bad, {1, 2}, 1), InconsistentInputError);
  }
  SUBCASE("a control-only table has no action to choose") {
    Matrix controls(2, 1);
    CHECK_THROWS_AS(policy::induce_policy(controls, {1, 2}, 1), InconsistentInputError);
  }
  SUBCASE("action vector expansion checks cohort bounds") {
    const auto a = policy::induce_policy(scores, {1, 7}, 1);
    CHECK_THROWS_AS(policy::to_action_vector(a, 3), InconsistentInputError);
    const auto acts = policy::to_action_vector(a, 8);
    CHECK(acts.size() == 8);
  }
  SUBCASE("regret requires one tau column per action class") {
    const auto panel = small_panel(4, 28, 2);
    Matrix tau(static_cast<int>(panel.rows.size()), 3);
    CHECK_THROWS_AS(policy::policy_regret(panel, tau, 1), InconsistentInputError);
  }
}

TEST_CASE("assignment csv export") {
  const auto scores = score_table({{0, 0.25, 0.1}, {0, -0.5, 0.75}});
  const auto a = policy::induce_policy(scores, {7, 3}, 1);

  CHECK(policy::assignment_csv_header() == "patient_id,day,action_class,score,rank");
  std::string out;
  policy::append_assignment_csv(out, a, 14);
  // Patient 3 is treated (rank 1 <= K); patient 7 is ranked but parked on control.
  CHECK(out == "3,14,2,0.75,1\n7,14,0,0.25,2\n");
}
