#pragma once

#include <string>
#include <vector>

#include "tirtarget/actions.hpp"
#include "tirtarget/learners.hpp"
#include "tirtarget/matrix.hpp"
#include "tirtarget/sim.hpp"

namespace tir::policy {

// One patient's slot in a capacity-constrained assignment. `score` is the
// patient's best non-control tau-hat; `action` is what the policy actually
// assigns (control for everyone outside the treated prefix). Ranks are
// 1-based and form a permutation of the patients.
struct AssignmentEntry {
  int patient_id = 0;
  int action = 0;
  double score = 0.0;
  int rank = 0;
};

struct Assignment {
  std::vector<AssignmentEntry> entries;  // sorted by rank
  int capacity = 0;

  int n_treated() const;
};

// Greedy capacity-constrained targeting: per patient take the best-scoring
// non-control action (ties -> lowest class id), rank patients by that score
// (ties -> lowest patient id), and treat the top K. By default the top K are
// treated even when their best score is negative; `skip_negative` parks
// patients with best score <= 0 on control instead.
//
// `scores` has one row per patient and one column per action class; column 0
// (control) is ignored by the argmax. Throws InconsistentInputError on shape
// mismatch, duplicate patient ids, or non-finite scores; ConfigError on K < 0.
Assignment induce_policy(const Matrix& scores, const std::vector<int>& patient_ids, int K,
                         bool skip_negative = false);

// Convenience overload: scores come from a fitted CATE model evaluated on one
// state row per patient.
Assignment induce_policy(const learn::CateModel& cate, const Matrix& states,
                         const std::vector<int>& patient_ids, int K, bool skip_negative = false);

// Same ranking applied to oracle effects. Never treats a patient whose best
// effect is <= 0: treating them cannot raise the ATT, and an assignment that
// skips them dominates every assignment that does not.
Assignment optimal_policy(const Matrix& oracle_scores, const std::vector<int>& patient_ids,
                          int K);

// Expands an assignment into a per-cohort-index action vector (control for
// patients without an entry). Patient ids must lie in [0, cohort_size).
std::vector<ActionClass> to_action_vector(const Assignment& assignment, int cohort_size);

// oracle_att(optimal) - oracle_att(induced), both fixed per-patient
// assignments over the whole panel. Per patient the scores are summed over
// the patient's panel rows, which makes the optimal assignment exactly
// optimal among fixed assignments treating at most K patients; the result is
// therefore non-negative. `tau_hat` has one row per panel row, one column per
// action class.
double policy_regret(const sim::LoggedPanel& panel, const Matrix& tau_hat, int K);

// CSV export: one line per patient in rank order.
std::string assignment_csv_header();
void append_assignment_csv(std::string& out, const Assignment& assignment, int day);

}  // namespace tir::policy
