#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "tirtarget/errors.hpp"

namespace tir {

// Discrete action classes. Control is 0 and is the only class that maps to 0
// under every action representation.
enum class ActionClass : int {
  control = 0,
  highs_and_lows = 1,
  highs_only = 2,
  lows_only = 3,
  other = 4,
};

inline constexpr int kNumActionClasses = 5;
inline constexpr int kEmbeddingDim = 16;

inline const std::array<std::string, kNumActionClasses>& action_class_names() {
  static const std::array<std::string, kNumActionClasses> names = {
      "control", "highs_and_lows", "highs_only", "lows_only", "other"};
  return names;
}

inline ActionClass action_class_from_int(int v) {
  if (v < 0 || v >= kNumActionClasses)
    throw UnknownActionError("unknown action class id " + std::to_string(v));
  return static_cast<ActionClass>(v);
}

inline int to_int(ActionClass a) { return static_cast<int>(a); }

// The eleven boolean labels extracted from message text.
struct MessageLabels {
  bool recommends_insulin_dose_change = false;
  bool recommends_changing_basal_or_long_acting_insulin = false;
  bool recommends_more_correction_doses = false;
  bool recommends_changing_carb_ratio = false;
  bool reminds_patient_to_bolus = false;
  bool recommends_insulin_change_at_night = false;
  bool recommends_insulin_change_during_the_day = false;
  bool recommendations_target_high_glucose_or_low_time_in_range = false;
  bool recommendations_target_low_glucose = false;
  bool mentions_recent_visit = false;
  bool mentions_patient_schedule = false;

  bool any() const {
    return recommends_insulin_dose_change || recommends_changing_basal_or_long_acting_insulin ||
           recommends_more_correction_doses || recommends_changing_carb_ratio ||
           reminds_patient_to_bolus || recommends_insulin_change_at_night ||
           recommends_insulin_change_during_the_day ||
           recommendations_target_high_glucose_or_low_time_in_range ||
           recommendations_target_low_glucose || mentions_recent_visit || mentions_patient_schedule;
  }

  std::array<bool, 11> as_array() const {
    return {recommends_insulin_dose_change,
            recommends_changing_basal_or_long_acting_insulin,
            recommends_more_correction_doses,
            recommends_changing_carb_ratio,
            reminds_patient_to_bolus,
            recommends_insulin_change_at_night,
            recommends_insulin_change_during_the_day,
            recommendations_target_high_glucose_or_low_time_in_range,
            recommendations_target_low_glucose,
            mentions_recent_visit,
            mentions_patient_schedule};
  }
};

inline const std::array<std::string, 11>& message_label_names() {
  static const std::array<std::string, 11> names = {
      "recommends_insulin_dose_change",
      "recommends_changing_basal_or_long_acting_insulin",
      "recommends_more_correction_doses",
      "recommends_changing_carb_ratio",
      "reminds_patient_to_bolus",
      "recommends_insulin_change_at_night",
      "recommends_insulin_change_during_the_day",
      "recommendations_target_high_glucose_or_low_time_in_range",
      "recommendations_target_low_glucose",
      "mentions_recent_visit",
      "mentions_patient_schedule"};
  return names;
}

// A logged action: class label, boolean message labels, and a synthetic
// 16-dim embedding standing in for the text embedding. Control actions carry
// all-false labels and a zero embedding.
struct RawAction {
  ActionClass class_label = ActionClass::control;
  MessageLabels labels;
  std::array<double, kEmbeddingDim> embedding{};

  bool is_control() const { return class_label == ActionClass::control; }
};

}  // namespace tir
