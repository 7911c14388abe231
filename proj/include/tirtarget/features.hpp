#pragma once

#include <span>
#include <string>
#include <vector>

#include "tirtarget/errors.hpp"

namespace tir::cgm {

// CGM cadence: one reading every 5 minutes.
inline constexpr int kSlotsPerDay = 288;
inline constexpr int kWindowDays = 14;
inline constexpr int kWindowSlots = kWindowDays * kSlotsPerDay;  // 4032
inline constexpr int kWeekSlots = 7 * kSlotsPerDay;              // 2016

// Glucose range boundaries in mg/dL.
inline constexpr double kVeryLowThreshold = 54.0;
inline constexpr double kLowThreshold = 70.0;
inline constexpr double kHighThreshold = 180.0;
inline constexpr double kVeryHighThreshold = 250.0;

// days_since_msg is capped before it enters the feature vector; unbounded
// values destabilize tree splits early in a patient's history.
inline constexpr double kDaysSinceMsgCap = 60.0;

// Full per-patient CGM trace at 5-minute cadence starting at day 0.
// NaN marks a missing reading.
struct CgmTrace {
  std::vector<float> readings;

  int days() const { return static_cast<int>(readings.size()) / kSlotsPerDay; }
};

// Time-invariant and slowly-varying fields that enter the feature vector
// alongside the CGM-derived quantities. days_since_msg is per-row.
struct Demographics {
  double sexF = 0;
  double public_insurance = 0;
  double english_primary_language = 0;
  double pop_pilot = 0;
  double pop_4T_1 = 0;
  double pop_TIPS = 0;
  double age = 0;
  double months_since_onset = 0;
  double using_pump = 0;
  double using_aid = 0;
  double days_since_msg = kDaysSinceMsgCap;
};

// The clinical feature battery computed from a two-week CGM window plus
// demographics. Field names match the exported column names one to one.
struct ClinicalFeatures {
  double g_7dr = 0;
  double very_low_7dr = 0;
  double low_7dr = 0;
  double in_range_7dr = 0;
  double high_7dr = 0;
  double very_high_7dr = 0;
  double gri_7dr = 0;
  double g_14dr = 0;
  double very_low_14dr = 0;
  double low_14dr = 0;
  double in_range_14dr = 0;
  double high_14dr = 0;
  double very_high_14dr = 0;
  double gri_14dr = 0;
  double night_very_low_7dr = 0;
  double night_low_7dr = 0;
  double night_high_7dr = 0;
  double night_very_high_7dr = 0;
  double day_very_low_7dr = 0;
  double day_low_7dr = 0;
  double day_high_7dr = 0;
  double day_very_high_7dr = 0;
  double time_worn_7dr = 0;
  double night_worn_7dr = 0;
  double day_worn_7dr = 0;
  double gri_7dr_7d_delta = 0;
  double very_low_7dr_7d_delta = 0;
  double low_7dr_7d_delta = 0;
  double in_range_7dr_7d_delta = 0;
  double very_high_7dr_7d_delta = 0;
  double night_very_low_7dr_7d_delta = 0;
  double night_low_7dr_7d_delta = 0;
  double night_high_7dr_7d_delta = 0;
  double sexF = 0;
  double public_insurance = 0;
  double english_primary_language = 0;
  double pop_pilot = 0;
  double pop_4T_1 = 0;
  double pop_TIPS = 0;
  double age = 0;
  double months_since_onset = 0;
  double using_pump = 0;
  double using_aid = 0;
  double days_since_msg = 0;
  double large_tir_drop = 0;
  double low_tir = 0;
  double lows = 0;
  double very_lows = 0;
};

struct FeatureField {
  const char* name;
  double ClinicalFeatures::* member;
};

// Canonical column order for exports and for "full" state vectors.
const std::vector<FeatureField>& clinical_feature_fields();

const std::vector<std::string>& clinical_feature_names();

int feature_index(const std::string& name);  // -1 if unknown

std::vector<double> feature_vector(const ClinicalFeatures& f);

double feature_value(const ClinicalFeatures& f, const std::string& name);

ClinicalFeatures features_from_vector(std::span<const double> values);

struct RiskFlags {
  bool large_tir_drop = false;
  bool low_tir = false;
  bool lows = false;
  bool very_lows = false;
};

// GRI weighted form on percent time very-low/low/very-high/high, clipped to
// [0, 100]. Inputs are fractions; low includes very_low, high includes
// very_high.
double glycemia_risk_index(double very_low, double low, double high, double very_high);

// Clinician risk-stratification flags (strict inequalities).
RiskFlags risk_flags(const ClinicalFeatures& f);

// Computes the full battery over the two-week window ending at day_index.
// Throws UndefinedFeatureError when any required window has no present
// readings; callers drop such rows.
ClinicalFeatures compute_window_features(const CgmTrace& trace, const Demographics& demo,
                                         int day_index);

// Aggregates over the single week [end_day - 7, end_day), used by the
// longer-history control covariates. low/in_range/high are fractions of
// present readings; low includes very-low and high includes very-high.
struct WeekStats {
  double g = 0;
  double low = 0;
  double in_range = 0;
  double high = 0;
};

// Throws WindowTooShortError when the week does not fit inside the trace and
// UndefinedFeatureError when it has no present readings.
WeekStats week_stats(const CgmTrace& trace, int end_day);

// The clinician-curated dashboard subset of the clinical features.
const std::vector<std::string>& tide_feature_names();

}  // namespace tir::cgm
