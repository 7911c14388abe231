#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tirtarget/actions.hpp"
#include "tirtarget/features.hpp"

namespace tir::sim {

// Latent per-patient state. Everything an estimator may legitimately see is
// mirrored into ClinicalFeatures; responsiveness, volatility, and the
// missingness rate stay hidden.
struct PatientLatent {
  int patient_id = 0;
  double baseline_mean_glucose = 185;
  double glucose_volatility = 40;
  double responsiveness = 0.5;
  double missing_prob = 0.1;
  double diurnal_amplitude = 10;
  bool pump_user = false;
  bool aid_user = false;
  double age = 14;
  double months_since_onset = 24;
  bool sexF = false;
  bool public_insurance = false;
  bool english_primary_language = true;
  int population = 0;  // 0 pilot, 1 4T_1, 2 TIPS

  cgm::Demographics demographics(double days_since_msg) const;
};

// How true effects are generated. `formula` is the default clinically-shaped
// surface; the other two exist for estimator tests.
struct EffectSpec {
  enum class Kind { formula, constant_per_action, step_high };
  Kind kind = Kind::formula;
  double c_highs = 0.12;
  double c_lows = 0.06;
  double c_other = 0.005;
  std::array<double, kNumActionClasses> constants{};  // constant_per_action
  double step_value = 0.1;                            // step_high
  double step_threshold = 0.5;
};

struct SimConfig {
  std::uint64_t seed = 1;
  int n_patients = 281;
  int days = 112;
  double confounding_strength = 2.0;
  double message_bias = -3.3;        // logit intercept shared by message classes
  double propensity_floor = 0.01;
  double reward_noise_sd = 0.05;
  double rtm_coef = -0.3;            // regression-to-mean weight on in_range_7dr_7d_delta
  int lockout_days = 7;
  double min_wear = 0.2;
  double embedding_noise_sd = 1.0;
  double embedding_signal = 1.2;
  EffectSpec effect;
};

// Hidden per-row ground truth. Estimators never read this; tests and the
// oracle-evaluation path do.
struct OracleRow {
  std::array<double, kNumActionClasses> propensities{};
  std::array<double, kNumActionClasses> effects{};  // responsiveness included
  double control_response = 0;
  double responsiveness = 0;
};

struct PanelRow {
  int patient_id = 0;
  int day = 0;
  RawAction action;
  double reward = 0;
  cgm::ClinicalFeatures features;
  OracleRow oracle;
};

struct LoggedPanel {
  SimConfig config;
  std::vector<PatientLatent> cohort;
  std::vector<cgm::CgmTrace> traces;  // indexed by position in cohort
  std::vector<PanelRow> rows;
  long dropped_rows = 0;  // excluded for low wear or undefined features
};

std::vector<PatientLatent> sample_cohort(int n, std::uint64_t seed);

cgm::CgmTrace simulate_trace(const PatientLatent& patient, const SimConfig& cfg);

// True effect of an action at a state. Responsiveness defaults to 1 so the
// result is a pure function of the visible features.
double true_cate(const EffectSpec& spec, const cgm::ClinicalFeatures& f, ActionClass a,
                 double responsiveness = 1.0);

// True mean reward: regression-to-mean response plus the action effect.
double true_response(const EffectSpec& spec, double rtm_coef, const cgm::ClinicalFeatures& f,
                     ActionClass a, double responsiveness);

// Logging-policy class probabilities for one row, after flooring.
std::array<double, kNumActionClasses> logging_propensities(const SimConfig& cfg,
                                                           const cgm::ClinicalFeatures& f);

LoggedPanel simulate_panel(const SimConfig& cfg);

// Exact ATT of a fixed per-patient assignment, averaged over panel days:
// (1/T) sum_t (1/K) sum_i tau(s_it, pi_i), using the hidden oracle effects.
// Throws CapacityError if more than K treated patients appear on any day.
double oracle_att(const LoggedPanel& panel, const std::vector<ActionClass>& assignment, int K);

}  // namespace tir::sim
