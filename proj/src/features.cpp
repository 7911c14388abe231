#include "tirtarget/features.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace tir::cgm {

namespace {

#define TIR_FIELD(name) FeatureField{#name, &ClinicalFeatures::name}

const std::vector<FeatureField> kFields = {
    TIR_FIELD(g_7dr),
    TIR_FIELD(very_low_7dr),
    TIR_FIELD(low_7dr),
    TIR_FIELD(in_range_7dr),
    TIR_FIELD(high_7dr),
    TIR_FIELD(very_high_7dr),
    TIR_FIELD(gri_7dr),
    TIR_FIELD(g_14dr),
    TIR_FIELD(very_low_14dr),
    TIR_FIELD(low_14dr),
    TIR_FIELD(in_range_14dr),
    TIR_FIELD(high_14dr),
    TIR_FIELD(very_high_14dr),
    TIR_FIELD(gri_14dr),
    TIR_FIELD(night_very_low_7dr),
    TIR_FIELD(night_low_7dr),
    TIR_FIELD(night_high_7dr),
    TIR_FIELD(night_very_high_7dr),
    TIR_FIELD(day_very_low_7dr),
    TIR_FIELD(day_low_7dr),
    TIR_FIELD(day_high_7dr),
    TIR_FIELD(day_very_high_7dr),
    TIR_FIELD(time_worn_7dr),
    TIR_FIELD(night_worn_7dr),
    TIR_FIELD(day_worn_7dr),
    TIR_FIELD(gri_7dr_7d_delta),
    TIR_FIELD(very_low_7dr_7d_delta),
    TIR_FIELD(low_7dr_7d_delta),
    TIR_FIELD(in_range_7dr_7d_delta),
    TIR_FIELD(very_high_7dr_7d_delta),
    TIR_FIELD(night_very_low_7dr_7d_delta),
    TIR_FIELD(night_low_7dr_7d_delta),
    TIR_FIELD(night_high_7dr_7d_delta),
    TIR_FIELD(sexF),
    TIR_FIELD(public_insurance),
    TIR_FIELD(english_primary_language),
    TIR_FIELD(pop_pilot),
    TIR_FIELD(pop_4T_1),
    TIR_FIELD(pop_TIPS),
    TIR_FIELD(age),
    TIR_FIELD(months_since_onset),
    TIR_FIELD(using_pump),
    TIR_FIELD(using_aid),
    TIR_FIELD(days_since_msg),
    TIR_FIELD(large_tir_drop),
    TIR_FIELD(low_tir),
    TIR_FIELD(lows),
    TIR_FIELD(very_lows),
};

#undef TIR_FIELD

// Slot-of-day membership. Night covers 23:00-05:00, day 06:00-22:00; the
// remaining hours belong to neither band.
bool is_night_slot(int slot_of_day) {
  return slot_of_day >= 276 || slot_of_day < 60;
}

bool is_day_slot(int slot_of_day) {
  return slot_of_day >= 72 && slot_of_day < 264;
}

struct RangeCounts {
  long present = 0;
  long total = 0;
  double sum = 0;
  long very_low = 0;
  long low = 0;
  long in_range = 0;
  long high = 0;
  long very_high = 0;

  void add(double g) {
    ++present;
    sum += g;
    if (g < kVeryLowThreshold) ++very_low;
    if (g < kLowThreshold) {
      ++low;
    } else if (g <= kHighThreshold) {
      ++in_range;
    } else {
      ++high;
    }
    if (g > kVeryHighThreshold) ++very_high;
  }

  double frac_very_low() const { return static_cast<double>(very_low) / present; }
  double frac_low() const { return static_cast<double>(low) / present; }
  double frac_in_range() const { return static_cast<double>(in_range) / present; }
  double frac_high() const { return static_cast<double>(high) / present; }
  double frac_very_high() const { return static_cast<double>(very_high) / present; }
  double mean() const { return sum / present; }
};

void require_present(const RangeCounts& c, const char* what) {
  if (c.present == 0) {
    throw UndefinedFeatureError(std::string("no CGM readings present in ") + what);
  }
}

}  // namespace

const std::vector<FeatureField>& clinical_feature_fields() { return kFields; }

const std::vector<std::string>& clinical_feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    out.reserve(kFields.size());
    for (const auto& f : kFields) out.emplace_back(f.name);
    return out;
  }();
  return names;
}

int feature_index(const std::string& name) {
  static const std::unordered_map<std::string, int> index = [] {
    std::unordered_map<std::string, int> m;
    for (int i = 0; i < static_cast<int>(kFields.size()); ++i) m[kFields[i].name] = i;
    return m;
  }();
  auto it = index.find(name);
  return it == index.end() ? -1 : it->second;
}

std::vector<double> feature_vector(const ClinicalFeatures& f) {
  std::vector<double> out;
  out.reserve(kFields.size());
  for (const auto& field : kFields) out.push_back(f.*(field.member));
  return out;
}

double feature_value(const ClinicalFeatures& f, const std::string& name) {
  int idx = feature_index(name);
  if (idx < 0) throw InconsistentInputError("unknown feature name: " + name);
  return f.*(kFields[idx].member);
}

ClinicalFeatures features_from_vector(std::span<const double> values) {
  if (values.size() != kFields.size()) {
    throw InconsistentInputError("feature vector has wrong length");
  }
  ClinicalFeatures f;
  for (size_t i = 0; i < kFields.size(); ++i) f.*(kFields[i].member) = values[i];
  return f;
}

double glycemia_risk_index(double very_low, double low, double high, double very_high) {
  for (double v : {very_low, low, high, very_high}) {
    if (!(v >= 0.0 && v <= 1.0) || std::isnan(v)) {
      throw InconsistentInputError("GRI inputs must be fractions in [0, 1]");
    }
  }
  if (very_low > low || very_high > high) {
    throw InconsistentInputError("GRI expects very_low <= low and very_high <= high");
  }
  double gri = 3.0 * (100.0 * very_low) + 2.4 * (100.0 * (low - very_low)) +
               1.6 * (100.0 * very_high) + 0.8 * (100.0 * (high - very_high));
  return std::clamp(gri, 0.0, 100.0);
}

RiskFlags risk_flags(const ClinicalFeatures& f) {
  RiskFlags flags;
  flags.large_tir_drop = f.in_range_7dr_7d_delta < -0.15;
  flags.low_tir = f.in_range_7dr < 0.65;
  flags.lows = f.low_7dr > 0.04;
  flags.very_lows = f.very_low_7dr > 0.01;
  return flags;
}

ClinicalFeatures compute_window_features(const CgmTrace& trace, const Demographics& demo,
                                         int day_index) {
  if (day_index < kWindowDays) {
    throw WindowTooShortError("day_index must be >= 14 so a full two-week window exists");
  }
  const long end_slot = static_cast<long>(day_index) * kSlotsPerDay;
  if (end_slot > static_cast<long>(trace.readings.size())) {
    throw WindowTooShortError("trace does not cover the two-week window ending at day_index");
  }
  const long start_slot = end_slot - kWindowSlots;

  // half 0 = previous 7 days, half 1 = current 7 days.
  RangeCounts all[2], night[2], day[2];
  for (long s = start_slot; s < end_slot; ++s) {
    const int half = (s - start_slot) < kWeekSlots ? 0 : 1;
    const int slot_of_day = static_cast<int>(s % kSlotsPerDay);
    all[half].total++;
    if (is_night_slot(slot_of_day)) night[half].total++;
    if (is_day_slot(slot_of_day)) day[half].total++;
    const float g = trace.readings[static_cast<size_t>(s)];
    if (std::isnan(g)) continue;
    all[half].add(g);
    if (is_night_slot(slot_of_day)) night[half].add(g);
    if (is_day_slot(slot_of_day)) day[half].add(g);
  }

  require_present(all[1], "the current 7-day window");
  require_present(all[0], "the previous 7-day window");
  require_present(night[1], "the current 7-day night band");
  require_present(day[1], "the current 7-day day band");
  require_present(night[0], "the previous 7-day night band");

  ClinicalFeatures f;
  f.g_7dr = all[1].mean();
  f.very_low_7dr = all[1].frac_very_low();
  f.low_7dr = all[1].frac_low();
  f.in_range_7dr = all[1].frac_in_range();
  f.high_7dr = all[1].frac_high();
  f.very_high_7dr = all[1].frac_very_high();
  f.gri_7dr = glycemia_risk_index(f.very_low_7dr, f.low_7dr, f.high_7dr, f.very_high_7dr);

  RangeCounts both;
  both.present = all[0].present + all[1].present;
  both.total = all[0].total + all[1].total;
  both.sum = all[0].sum + all[1].sum;
  both.very_low = all[0].very_low + all[1].very_low;
  both.low = all[0].low + all[1].low;
  both.in_range = all[0].in_range + all[1].in_range;
  both.high = all[0].high + all[1].high;
  both.very_high = all[0].very_high + all[1].very_high;

  f.g_14dr = both.mean();
  f.very_low_14dr = both.frac_very_low();
  f.low_14dr = both.frac_low();
  f.in_range_14dr = both.frac_in_range();
  f.high_14dr = both.frac_high();
  f.very_high_14dr = both.frac_very_high();
  f.gri_14dr = glycemia_risk_index(f.very_low_14dr, f.low_14dr, f.high_14dr, f.very_high_14dr);

  f.night_very_low_7dr = night[1].frac_very_low();
  f.night_low_7dr = night[1].frac_low();
  f.night_high_7dr = night[1].frac_high();
  f.night_very_high_7dr = night[1].frac_very_high();
  f.day_very_low_7dr = day[1].frac_very_low();
  f.day_low_7dr = day[1].frac_low();
  f.day_high_7dr = day[1].frac_high();
  f.day_very_high_7dr = day[1].frac_very_high();

  f.time_worn_7dr = static_cast<double>(all[1].present) / all[1].total;
  f.night_worn_7dr = static_cast<double>(night[1].present) / night[1].total;
  f.day_worn_7dr = static_cast<double>(day[1].present) / day[1].total;

  const double prev_gri = glycemia_risk_index(all[0].frac_very_low(), all[0].frac_low(),
                                              all[0].frac_high(), all[0].frac_very_high());
  f.gri_7dr_7d_delta = f.gri_7dr - prev_gri;
  f.very_low_7dr_7d_delta = f.very_low_7dr - all[0].frac_very_low();
  f.low_7dr_7d_delta = f.low_7dr - all[0].frac_low();
  f.in_range_7dr_7d_delta = f.in_range_7dr - all[0].frac_in_range();
  f.very_high_7dr_7d_delta = f.very_high_7dr - all[0].frac_very_high();
  f.night_very_low_7dr_7d_delta = f.night_very_low_7dr - night[0].frac_very_low();
  f.night_low_7dr_7d_delta = f.night_low_7dr - night[0].frac_low();
  f.night_high_7dr_7d_delta = f.night_high_7dr - night[0].frac_high();

  f.sexF = demo.sexF;
  f.public_insurance = demo.public_insurance;
  f.english_primary_language = demo.english_primary_language;
  f.pop_pilot = demo.pop_pilot;
  f.pop_4T_1 = demo.pop_4T_1;
  f.pop_TIPS = demo.pop_TIPS;
  f.age = demo.age;
  f.months_since_onset = demo.months_since_onset;
  f.using_pump = demo.using_pump;
  f.using_aid = demo.using_aid;
  f.days_since_msg = std::min(demo.days_since_msg, kDaysSinceMsgCap);

  const RiskFlags flags = risk_flags(f);
  f.large_tir_drop = flags.large_tir_drop ? 1.0 : 0.0;
  f.low_tir = flags.low_tir ? 1.0 : 0.0;
  f.lows = flags.lows ? 1.0 : 0.0;
  f.very_lows = flags.very_lows ? 1.0 : 0.0;
  return f;
}

WeekStats week_stats(const CgmTrace& trace, int end_day) {
  if (end_day < 7 || end_day > trace.days()) {
    throw WindowTooShortError("week ending at day " + std::to_string(end_day) +
                              " does not fit a trace of " + std::to_string(trace.days()) +
                              " days");
  }
  RangeCounts counts;
  const long begin = static_cast<long>(end_day - 7) * kSlotsPerDay;
  const long end = static_cast<long>(end_day) * kSlotsPerDay;
  for (long s = begin; s < end; ++s) {
    counts.total++;
    const float g = trace.readings[static_cast<size_t>(s)];
    if (!std::isnan(g)) counts.add(g);
  }
  require_present(counts, "the history week");
  WeekStats w;
  w.g = counts.mean();
  w.low = counts.frac_low();
  w.in_range = counts.frac_in_range();
  w.high = counts.frac_high();
  return w;
}

const std::vector<std::string>& tide_feature_names() {
  static const std::vector<std::string> names = {
      "very_low_7dr", "low_7dr",   "in_range_7dr",   "g_7dr",   "using_pump",
      "in_range_7dr_7d_delta",     "large_tir_drop", "low_tir", "lows",
      "very_lows",    "pop_pilot", "pop_4T_1",       "pop_TIPS"};
  return names;
}

}  // namespace tir::cgm
