#include "tirtarget/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_set>

#include "tirtarget/errors.hpp"

namespace tir::policy {

namespace {

struct Candidate {
  int patient_id = 0;
  int best_action = 0;
  double best_score = 0.0;
};

std::vector<Candidate> rank_candidates(const Matrix& scores, const std::vector<int>& patient_ids) {
  if (scores.rows != static_cast<int>(patient_ids.size())) {
    throw InconsistentInputError("score matrix rows must match patient id count");
  }
  if (scores.cols < 2) {
    throw InconsistentInputError("score matrix needs at least one non-control action column");
  }
  std::unordered_set<int> seen;
  std::vector<Candidate> cands;
  cands.reserve(patient_ids.size());
  for (int i = 0; i < scores.rows; ++i) {
    if (!seen.insert(patient_ids[static_cast<size_t>(i)]).second) {
      throw InconsistentInputError("duplicate patient id " +
                                   std::to_string(patient_ids[static_cast<size_t>(i)]));
    }
    Candidate c;
    c.patient_id = patient_ids[static_cast<size_t>(i)];
    c.best_action = 1;
    c.best_score = scores.at(i, 1);
    for (int a = 1; a < scores.cols; ++a) {
      const double s = scores.at(i, a);
      if (!std::isfinite(s)) throw InconsistentInputError("non-finite policy score");
      if (s > c.best_score) {
        c.best_score = s;
        c.best_action = a;
      }
    }
    cands.push_back(c);
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.best_score != b.best_score) return a.best_score > b.best_score;
    return a.patient_id < b.patient_id;
  });
  return cands;
}

}  // namespace

int Assignment::n_treated() const {
  int n = 0;
  for (const auto& e : entries) {
    if (e.action != to_int(ActionClass::control)) ++n;
  }
  return n;
}

Assignment induce_policy(const Matrix& scores, const std::vector<int>& patient_ids, int K,
                         bool skip_negative) {
  if (K < 0) throw ConfigError("capacity K must be >= 0");
  auto cands = rank_candidates(scores, patient_ids);

  Assignment out;
  out.capacity = K;
  out.entries.reserve(cands.size());
  for (size_t i = 0; i < cands.size(); ++i) {
    const bool in_budget = static_cast<int>(i) < K;
    const bool treat = in_budget && (!skip_negative || cands[i].best_score > 0.0);
    AssignmentEntry e;
    e.patient_id = cands[i].patient_id;
    e.action = treat ? cands[i].best_action : to_int(ActionClass::control);
    e.score = cands[i].best_score;
    e.rank = static_cast<int>(i) + 1;
    out.entries.push_back(e);
  }
  return out;
}

Assignment induce_policy(const learn::CateModel& cate, const Matrix& states,
                         const std::vector<int>& patient_ids, int K, bool skip_negative) {
  Matrix scores(states.rows, cate.n_classes());
  for (int i = 0; i < states.rows; ++i) {
    const auto preds = cate.predict_all(states.row(i));
    std::copy(preds.begin(), preds.end(), scores.row(i).begin());
  }
  return induce_policy(scores, patient_ids, K, skip_negative);
}

Assignment optimal_policy(const Matrix& oracle_scores, const std::vector<int>& patient_ids,
                          int K) {
  return induce_policy(oracle_scores, patient_ids, K, /*skip_negative=*/true);
}

std::vector<ActionClass> to_action_vector(const Assignment& assignment, int cohort_size) {
  std::vector<ActionClass> actions(static_cast<size_t>(cohort_size), ActionClass::control);
  for (const auto& e : assignment.entries) {
    if (e.patient_id < 0 || e.patient_id >= cohort_size) {
      throw InconsistentInputError("patient id " + std::to_string(e.patient_id) +
                                   " outside cohort of size " + std::to_string(cohort_size));
    }
    actions[static_cast<size_t>(e.patient_id)] = action_class_from_int(e.action);
  }
  return actions;
}

double policy_regret(const sim::LoggedPanel& panel, const Matrix& tau_hat, int K) {
  if (tau_hat.rows != static_cast<int>(panel.rows.size())) {
    throw InconsistentInputError("tau_hat rows must match panel rows");
  }
  if (tau_hat.cols != kNumActionClasses) {
    throw InconsistentInputError("tau_hat needs one column per action class");
  }
  if (K < 1) throw ConfigError("K must be >= 1");

  // Score each patient by the sum of per-row effects: with a fixed assignment
  // and 1/K day weights, total ATT is separable across patients, so ranking
  // summed scores is exactly optimal among fixed assignments.
  const int n = static_cast<int>(panel.cohort.size());
  Matrix hat_sums(n, kNumActionClasses);
  Matrix true_sums(n, kNumActionClasses);
  for (size_t r = 0; r < panel.rows.size(); ++r) {
    const auto& row = panel.rows[r];
    for (int a = 1; a < kNumActionClasses; ++a) {
      hat_sums.at(row.patient_id, a) += tau_hat.at(static_cast<int>(r), a);
      true_sums.at(row.patient_id, a) += row.oracle.effects[static_cast<size_t>(a)];
    }
  }
  std::vector<int> ids(static_cast<size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);

  const auto induced = induce_policy(hat_sums, ids, K);
  const auto optimal = optimal_policy(true_sums, ids, K);
  const double att_induced = sim::oracle_att(panel, to_action_vector(induced, n), K);
  const double att_optimal = sim::oracle_att(panel, to_action_vector(optimal, n), K);
  return att_optimal - att_induced;
}

std::string assignment_csv_header() { return "patient_id,day,action_class,score,rank"; }

void append_assignment_csv(std::string& out, const Assignment& assignment, int day) {
  char buf[128];
  for (const auto& e : assignment.entries) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.17g,%d\n", e.patient_id, day, e.action, e.score,
                  e.rank);
    out += buf;
  }
}

}  // namespace tir::policy
