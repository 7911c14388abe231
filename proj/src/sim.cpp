#include "tirtarget/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "tirtarget/parallel.hpp"
#include "tirtarget/probs.hpp"
#include "tirtarget/rng.hpp"

namespace tir::sim {

namespace {

// Substream tags per patient; the embedding mixer uses a cohort-independent
// stream so label geometry is stable across panel sizes.
constexpr std::uint64_t kCohortStream = 0;
constexpr std::uint64_t kTraceStream = 1;
constexpr std::uint64_t kPolicyStream = 2;
constexpr std::uint64_t kEmbeddingStream = 0x9e3779b9;

constexpr double kMeanReversion = 0.03;

struct EmbeddingMixer {
  // 16 x 11 Gaussian mixing matrix applied to the boolean label vector.
  std::array<std::array<double, 11>, kEmbeddingDim> m{};

  explicit EmbeddingMixer(std::uint64_t seed) {
    Rng rng(hash_stream(seed, kEmbeddingStream, 3));
    for (auto& row : m)
      for (auto& v : row) v = rng.normal();
  }
};

cgm::Demographics base_demographics(const PatientLatent& p) {
  cgm::Demographics d;
  d.sexF = p.sexF ? 1 : 0;
  d.public_insurance = p.public_insurance ? 1 : 0;
  d.english_primary_language = p.english_primary_language ? 1 : 0;
  d.pop_pilot = p.population == 0 ? 1 : 0;
  d.pop_4T_1 = p.population == 1 ? 1 : 0;
  d.pop_TIPS = p.population == 2 ? 1 : 0;
  d.age = p.age;
  d.months_since_onset = p.months_since_onset;
  d.using_pump = p.pump_user ? 1 : 0;
  d.using_aid = p.aid_user ? 1 : 0;
  return d;
}

MessageLabels sample_labels(Rng& rng, ActionClass a) {
  MessageLabels l;
  // Non-rule labels first, probabilities by class.
  struct P {
    double dose, basal, carb, night, day, visit, sched;
  };
  P p{};
  switch (a) {
    case ActionClass::highs_and_lows:
    case ActionClass::highs_only:
      p = {0.5, 0.3, 0.15, 0.3, 0.3, 0.2, 0.15};
      break;
    case ActionClass::lows_only:
      p = {0.4, 0.35, 0.2, 0.4, 0.2, 0.2, 0.15};
      break;
    case ActionClass::other:
      p = {0.1, 0.05, 0.05, 0.1, 0.1, 0.5, 0.4};
      break;
    case ActionClass::control:
      return l;
  }
  l.recommends_insulin_dose_change = rng.bernoulli(p.dose);
  l.recommends_changing_basal_or_long_acting_insulin = rng.bernoulli(p.basal);
  l.recommends_changing_carb_ratio = rng.bernoulli(p.carb);
  l.recommends_insulin_change_at_night = rng.bernoulli(p.night);
  l.recommends_insulin_change_during_the_day = rng.bernoulli(p.day);
  l.mentions_recent_visit = rng.bernoulli(p.visit);
  l.mentions_patient_schedule = rng.bernoulli(p.sched);

  switch (a) {
    case ActionClass::highs_and_lows:
      l.recommendations_target_low_glucose = true;
      l.recommendations_target_high_glucose_or_low_time_in_range = true;
      l.recommends_more_correction_doses = rng.bernoulli(0.45);
      l.reminds_patient_to_bolus = rng.bernoulli(0.35);
      break;
    case ActionClass::highs_only:
      l.recommendations_target_high_glucose_or_low_time_in_range = rng.bernoulli(0.8);
      l.recommends_more_correction_doses = rng.bernoulli(0.5);
      l.reminds_patient_to_bolus = rng.bernoulli(0.4);
      if (!l.recommendations_target_high_glucose_or_low_time_in_range &&
          !l.recommends_more_correction_doses && !l.reminds_patient_to_bolus) {
        l.recommendations_target_high_glucose_or_low_time_in_range = true;
      }
      break;
    case ActionClass::lows_only:
      l.recommendations_target_low_glucose = true;
      break;
    default:
      break;
  }
  return l;
}

std::array<double, kEmbeddingDim> mix_embedding(const EmbeddingMixer& mixer, const SimConfig& cfg,
                                                const MessageLabels& labels, Rng& rng) {
  std::array<double, kEmbeddingDim> e{};
  const auto bits = labels.as_array();
  for (int j = 0; j < kEmbeddingDim; ++j) {
    double s = 0;
    for (int k = 0; k < 11; ++k)
      if (bits[static_cast<size_t>(k)]) s += mixer.m[static_cast<size_t>(j)][static_cast<size_t>(k)];
    e[static_cast<size_t>(j)] = cfg.embedding_signal * s + cfg.embedding_noise_sd * rng.normal();
  }
  return e;
}

}  // namespace

cgm::Demographics PatientLatent::demographics(double days_since_msg) const {
  cgm::Demographics d = base_demographics(*this);
  d.days_since_msg = days_since_msg;
  return d;
}

std::vector<PatientLatent> sample_cohort(int n, std::uint64_t seed) {
  if (n < 0) throw InconsistentInputError("cohort size must be >= 0");
  std::vector<PatientLatent> cohort(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(hash_stream(seed, static_cast<std::uint64_t>(i), kCohortStream));
    PatientLatent& p = cohort[static_cast<size_t>(i)];
    p.patient_id = i;
    p.pump_user = rng.bernoulli(0.7);
    p.aid_user = p.pump_user && rng.bernoulli(0.64);
    p.age = rng.uniform(8.0, 21.0);
    p.months_since_onset = rng.uniform(1.0, 120.0);
    p.sexF = rng.bernoulli(0.5);
    p.public_insurance = rng.bernoulli(0.35);
    p.english_primary_language = rng.bernoulli(0.8);
    const double u = rng.uniform();
    p.population = u < 0.27 ? 0 : (u < 0.73 ? 1 : 2);
    p.baseline_mean_glucose = std::clamp(rng.normal(185.0, 35.0), 80.0, 350.0);
    p.glucose_volatility = rng.uniform(25.0, 65.0);
    p.responsiveness = rng.uniform();
    p.missing_prob = rng.uniform(0.02, 0.35);
    p.diurnal_amplitude = rng.uniform(5.0, 20.0);
  }
  return cohort;
}

cgm::CgmTrace simulate_trace(const PatientLatent& patient, const SimConfig& cfg) {
  Rng rng(hash_stream(cfg.seed, static_cast<std::uint64_t>(patient.patient_id), kTraceStream));
  const long n_slots = static_cast<long>(cfg.days) * cgm::kSlotsPerDay;
  cgm::CgmTrace trace;
  trace.readings.resize(static_cast<size_t>(n_slots));

  const double vol = patient.glucose_volatility;
  const double step_sd = vol * std::sqrt(2.0 * kMeanReversion - kMeanReversion * kMeanReversion);
  double x = patient.baseline_mean_glucose + vol * rng.normal();
  for (long s = 0; s < n_slots; ++s) {
    const int slot_of_day = static_cast<int>(s % cgm::kSlotsPerDay);
    // Diurnal peak mid-afternoon (14:00), trough at 02:00.
    const double mu = patient.baseline_mean_glucose +
                      patient.diurnal_amplitude *
                          std::sin(2.0 * M_PI * (slot_of_day - 96) / cgm::kSlotsPerDay);
    x += kMeanReversion * (mu - x) + step_sd * rng.normal();
    const double g = std::clamp(x, 40.0, 400.0);
    const bool missing = rng.bernoulli(patient.missing_prob);
    trace.readings[static_cast<size_t>(s)] =
        missing ? std::numeric_limits<float>::quiet_NaN() : static_cast<float>(g);
  }
  return trace;
}

double true_cate(const EffectSpec& spec, const cgm::ClinicalFeatures& f, ActionClass a,
                 double responsiveness) {
  if (a == ActionClass::control) return 0.0;
  switch (spec.kind) {
    case EffectSpec::Kind::constant_per_action:
      return spec.constants[static_cast<size_t>(to_int(a))];
    case EffectSpec::Kind::step_high:
      return f.high_7dr > spec.step_threshold ? spec.step_value : 0.0;
    case EffectSpec::Kind::formula:
      break;
  }
  const double e_high =
      spec.c_highs * f.high_7dr * (1.0 + 0.5 * (1.0 - f.using_pump)) * responsiveness;
  const double e_low = spec.c_lows * f.low_7dr * responsiveness;
  switch (a) {
    case ActionClass::highs_only:
      return e_high;
    case ActionClass::lows_only:
      return e_low;
    case ActionClass::highs_and_lows:
      return 0.8 * (e_high + e_low);
    case ActionClass::other:
      return spec.c_other;
    default:
      throw UnknownActionError("unknown action class");
  }
}

double true_response(const EffectSpec& spec, double rtm_coef, const cgm::ClinicalFeatures& f,
                     ActionClass a, double responsiveness) {
  return rtm_coef * f.in_range_7dr_7d_delta + true_cate(spec, f, a, responsiveness);
}

std::array<double, kNumActionClasses> logging_propensities(const SimConfig& cfg,
                                                           const cgm::ClinicalFeatures& f) {
  const double th = cfg.confounding_strength;
  std::array<double, kNumActionClasses> z{};
  z[0] = 0.0;
  z[1] = cfg.message_bias + th * (0.9 * f.high_7dr + 0.5 * f.lows + 0.4 * f.large_tir_drop);
  z[2] = cfg.message_bias + th * (1.4 * f.high_7dr + 0.5 * f.large_tir_drop);
  z[3] = cfg.message_bias + th * (1.0 * f.lows + 6.0 * f.low_7dr);
  z[4] = cfg.message_bias + th * (0.8 * f.large_tir_drop + 0.3 * (1.0 - f.in_range_7dr));
  softmax_inplace(z);
  clip_and_renormalize(z, cfg.propensity_floor);
  return z;
}

LoggedPanel simulate_panel(const SimConfig& cfg) {
  if (cfg.days < 14) throw WindowTooShortError("simulation needs at least 14 days");
  LoggedPanel panel;
  panel.config = cfg;
  panel.cohort = sample_cohort(cfg.n_patients, cfg.seed);
  panel.traces.resize(panel.cohort.size());

  const EmbeddingMixer mixer(cfg.seed);
  const int first_day = cgm::kWindowDays;
  const int last_day = cfg.days - 7;

  std::vector<std::vector<PanelRow>> per_patient(panel.cohort.size());
  std::vector<long> dropped(panel.cohort.size(), 0);

  parallel_for(panel.cohort.size(), [&](size_t i) {
    const PatientLatent& patient = panel.cohort[i];
    panel.traces[i] = simulate_trace(patient, cfg);
    Rng rng(hash_stream(cfg.seed, static_cast<std::uint64_t>(patient.patient_id), kPolicyStream));

    int last_msg_day = -1000000;
    for (int day = first_day; day <= last_day; ++day) {
      const int days_since = day - last_msg_day;
      if (days_since < cfg.lockout_days) continue;

      cgm::ClinicalFeatures f;
      try {
        f = cgm::compute_window_features(panel.traces[i],
                                         patient.demographics(static_cast<double>(days_since)),
                                         day);
      } catch (const UndefinedFeatureError&) {
        ++dropped[i];
        continue;
      }
      if (f.time_worn_7dr < cfg.min_wear) {
        ++dropped[i];
        continue;
      }

      const auto props = logging_propensities(cfg, f);
      const int a_int = sample_categorical(rng, props);
      const auto a = static_cast<ActionClass>(a_int);

      PanelRow row;
      row.patient_id = patient.patient_id;
      row.day = day;
      row.features = f;
      row.action.class_label = a;
      if (a != ActionClass::control) {
        row.action.labels = sample_labels(rng, a);
        row.action.embedding = mix_embedding(mixer, cfg, row.action.labels, rng);
        last_msg_day = day;
      }

      row.oracle.propensities = props;
      for (int c = 0; c < kNumActionClasses; ++c) {
        row.oracle.effects[static_cast<size_t>(c)] =
            true_cate(cfg.effect, f, static_cast<ActionClass>(c), patient.responsiveness);
      }
      row.oracle.control_response = cfg.rtm_coef * f.in_range_7dr_7d_delta;
      row.oracle.responsiveness = patient.responsiveness;

      const double mean_reward =
          row.oracle.control_response + row.oracle.effects[static_cast<size_t>(a_int)];
      row.reward = std::clamp(mean_reward + cfg.reward_noise_sd * rng.normal(), -1.0, 1.0);

      per_patient[i].push_back(std::move(row));
    }
  });

  for (size_t i = 0; i < per_patient.size(); ++i) {
    panel.dropped_rows += dropped[i];
    for (auto& row : per_patient[i]) panel.rows.push_back(std::move(row));
  }
  return panel;
}

double oracle_att(const LoggedPanel& panel, const std::vector<ActionClass>& assignment, int K) {
  if (assignment.size() != panel.cohort.size()) {
    throw InconsistentInputError("assignment size must match cohort size");
  }
  if (K < 1) throw ConfigError("K must be >= 1");

  std::map<int, double> day_sums;
  std::map<int, int> day_treated;
  for (const auto& row : panel.rows) {
    const ActionClass a = assignment[static_cast<size_t>(row.patient_id)];
    auto [it, inserted] = day_sums.try_emplace(row.day, 0.0);
    it->second += row.oracle.effects[static_cast<size_t>(to_int(a))];
    if (a != ActionClass::control) ++day_treated[row.day];
  }
  for (const auto& [day, treated] : day_treated) {
    if (treated > K) {
      throw CapacityError("more than K treated patients present on day " + std::to_string(day));
    }
  }
  if (day_sums.empty()) return 0.0;
  double total = 0;
  for (const auto& [day, sum] : day_sums) total += sum / K;
  return total / static_cast<double>(day_sums.size());
}

}  // namespace tir::sim
