#include "tirtarget/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "tirtarget/errors.hpp"
#include "tirtarget/features.hpp"
#include "tirtarget/rng.hpp"

namespace tir::eval {

namespace {

constexpr std::uint64_t kSplitStream = 0x51ee7;

// Demographics that enter X^c alongside the dashboard features (using_pump
// is already in the TIDE list).
const std::vector<std::string>& demographic_subset() {
  static const std::vector<std::string> names = {
      "sexF", "public_insurance", "english_primary_language", "age",
      "months_since_onset",       "using_aid",                "days_since_msg"};
  return names;
}

// Type-7 quantile (linear interpolation) on an already sorted vector.
double quantile_sorted(const std::vector<double>& sorted, double p) {
  const double h = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

Interval percentile_interval(std::vector<double> draws, double level) {
  std::sort(draws.begin(), draws.end());
  const double alpha = 1.0 - level;
  return {quantile_sorted(draws, alpha / 2.0), quantile_sorted(draws, 1.0 - alpha / 2.0)};
}

// Round-half-up of ratio_num/ratio_den * n without float drift.
int capacity_for(int n, long ratio_num, long ratio_den) {
  const long k = (ratio_num * n + ratio_den / 2) / ratio_den;
  return static_cast<int>(std::max(1L, k));
}

struct DayGroup {
  int day = 0;
  std::vector<std::size_t> rows;  // sorted by score desc (toc) or rank_day_rows
};

// Per-row greedy choice: best non-control action, ties to the lowest class.
void best_actions(const Matrix& tau_hat, std::vector<int>& best, std::vector<double>& score) {
  best.assign(static_cast<std::size_t>(tau_hat.rows), 1);
  score.assign(static_cast<std::size_t>(tau_hat.rows), 0.0);
  for (int i = 0; i < tau_hat.rows; ++i) {
    int arg = 1;
    double s = tau_hat.at(i, 1);
    for (int a = 2; a < tau_hat.cols; ++a) {
      if (tau_hat.at(i, a) > s) {
        s = tau_hat.at(i, a);
        arg = a;
      }
    }
    if (!std::isfinite(s)) throw InconsistentInputError("non-finite tau_hat score");
    best[static_cast<std::size_t>(i)] = arg;
    score[static_cast<std::size_t>(i)] = s;
  }
}

// Ranking within one evaluation day: score descending, then a day-salted hash
// of the patient id. Raw patient-id tie-breaking would hand every tied day to
// the same low-id patients, biasing tied-score targeting (e.g. a constant
// tau-hat) toward one fixed subset; the day salt rotates the subset so the
// day average stays centered on the mix ATE.
void rank_day_rows(std::vector<std::size_t>& rows, const std::vector<double>& score,
                   const std::vector<int>& patient_ids, int day) {
  std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    const std::uint64_t ha = hash_stream(static_cast<std::uint64_t>(day),
                                         static_cast<std::uint64_t>(patient_ids[a]));
    const std::uint64_t hb = hash_stream(static_cast<std::uint64_t>(day),
                                         static_cast<std::uint64_t>(patient_ids[b]));
    if (ha != hb) return ha < hb;
    return patient_ids[a] < patient_ids[b];
  });
}

}  // namespace

SplitIndex split_by_patient(int n_patients, std::uint64_t seed) {
  if (n_patients < 3) {
    throw InsufficientSupportError("patient split needs at least 3 patients");
  }
  std::vector<int> ids(static_cast<std::size_t>(n_patients));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(hash_stream(seed, kSplitStream));
  rng.shuffle(ids);

  const int base = n_patients / 3;
  const int rem = n_patients % 3;
  const int n_train = base + (rem > 0 ? 1 : 0);
  const int n_val = base + (rem > 1 ? 1 : 0);

  SplitIndex split;
  split.train.assign(ids.begin(), ids.begin() + n_train);
  split.validation.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  split.test.assign(ids.begin() + n_train + n_val, ids.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

void require_disjoint_patients(const std::vector<int>& a, const std::vector<int>& b) {
  std::unordered_set<int> seen(a.begin(), a.end());
  for (const int id : b) {
    if (seen.count(id)) {
      throw InconsistentInputError("patient " + std::to_string(id) +
                                   " appears in both splits; nuisance fitting and scoring "
                                   "must use disjoint patients");
    }
  }
}

ControlFrame build_control_covariates(const sim::LoggedPanel& panel, int history_weeks) {
  if (history_weeks < 2 || history_weeks > 4) {
    throw ConfigError("history_weeks must be 2, 3, or 4");
  }

  ControlFrame frame;
  frame.history_weeks = history_weeks;
  for (const auto& name : cgm::tide_feature_names()) frame.column_names.push_back(name);
  for (const auto& name : demographic_subset()) frame.column_names.push_back(name);
  for (int k = 3; k <= history_weeks; ++k) {
    const std::string p = "week" + std::to_string(k) + "_";
    frame.column_names.push_back(p + "g");
    frame.column_names.push_back(p + "low");
    frame.column_names.push_back(p + "in_range");
    frame.column_names.push_back(p + "high");
    frame.column_names.push_back(p + "message");
  }

  std::vector<int> base_idx;
  for (std::size_t c = 0; c < cgm::tide_feature_names().size() + demographic_subset().size();
       ++c) {
    const int idx = cgm::feature_index(frame.column_names[c]);
    if (idx < 0) throw InconsistentInputError("unknown feature " + frame.column_names[c]);
    base_idx.push_back(idx);
  }

  // Message days per patient; panel rows are the complete message log.
  std::unordered_map<int, std::vector<int>> message_days;
  for (const auto& row : panel.rows) {
    if (!row.action.is_control()) message_days[row.patient_id].push_back(row.day);
  }

  frame.X = Matrix(0, static_cast<int>(frame.column_names.size()));
  std::vector<double> x(frame.column_names.size());
  for (std::size_t r = 0; r < panel.rows.size(); ++r) {
    const auto& row = panel.rows[r];
    if (row.day < 7 * history_weeks) {
      ++frame.dropped_rows;
      continue;
    }
    const auto full = cgm::feature_vector(row.features);
    for (std::size_t c = 0; c < base_idx.size(); ++c) {
      x[c] = full[static_cast<std::size_t>(base_idx[c])];
    }

    bool usable = true;
    std::size_t c = base_idx.size();
    for (int k = 3; k <= history_weeks && usable; ++k) {
      // Week k counts back from the decision day: days [day-7k, day-7(k-1)).
      const int end_day = row.day - 7 * (k - 1);
      try {
        const auto w =
            cgm::week_stats(panel.traces[static_cast<std::size_t>(row.patient_id)], end_day);
        x[c++] = w.g;
        x[c++] = w.low;
        x[c++] = w.in_range;
        x[c++] = w.high;
      } catch (const UndefinedFeatureError&) {
        usable = false;
        break;
      }
      bool sent = false;
      const auto it = message_days.find(row.patient_id);
      if (it != message_days.end()) {
        for (const int d : it->second) {
          if (d >= end_day - 7 && d < end_day) {
            sent = true;
            break;
          }
        }
      }
      x[c++] = sent ? 1.0 : 0.0;
    }
    if (!usable) {
      ++frame.dropped_rows;
      continue;
    }

    frame.X.push_row(x);
    frame.patient_ids.push_back(row.patient_id);
    frame.days.push_back(row.day);
    frame.actions.push_back(to_int(row.action.class_label));
    frame.rewards.push_back(row.reward);
    frame.panel_row.push_back(r);
  }
  return frame;
}

ControlFrame select_rows(const ControlFrame& frame, const std::vector<std::size_t>& rows) {
  ControlFrame out;
  out.column_names = frame.column_names;
  out.history_weeks = frame.history_weeks;
  out.dropped_rows = frame.dropped_rows;
  out.X = Matrix(0, frame.X.cols);
  for (const std::size_t r : rows) {
    if (r >= static_cast<std::size_t>(frame.X.rows)) {
      throw InconsistentInputError("row index out of range");
    }
    out.X.push_row(frame.X.row(static_cast<int>(r)));
    out.patient_ids.push_back(frame.patient_ids[r]);
    out.days.push_back(frame.days[r]);
    out.actions.push_back(frame.actions[r]);
    out.rewards.push_back(frame.rewards[r]);
    out.panel_row.push_back(frame.panel_row[r]);
  }
  return out;
}

std::vector<std::size_t> rows_for_patients(const ControlFrame& frame,
                                           const std::vector<int>& patient_ids) {
  std::unordered_set<int> wanted(patient_ids.begin(), patient_ids.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < frame.patient_ids.size(); ++i) {
    if (wanted.count(frame.patient_ids[i])) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> rows_every_kth_day(const ControlFrame& frame, int stride) {
  if (stride < 1) throw ConfigError("day stride must be >= 1");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < frame.days.size(); ++i) {
    if (frame.days[i] % stride == 0) rows.push_back(i);
  }
  return rows;
}

OutcomeFn outcome_fn(const nuisance::OutcomeModel& model, const ControlFrame& frame) {
  return [&model, &frame](std::size_t row, int action) {
    return model.predict(frame.X.row(static_cast<int>(row)), action);
  };
}

PropensityFn propensity_fn(const nuisance::PropensityModel& model, const ControlFrame& frame) {
  return [&model, &frame](std::size_t row) {
    return model.probs(frame.X.row(static_cast<int>(row)));
  };
}

DrScoreTable dr_scores(const ControlFrame& frame, const OutcomeFn& outcome,
                       const PropensityFn& propensity) {
  DrScoreTable table;
  table.gamma = Matrix(frame.X.rows, kNumActionClasses);
  table.patient_ids = frame.patient_ids;
  table.days = frame.days;
  table.actions = frame.actions;
  table.rewards = frame.rewards;

  for (int i = 0; i < frame.X.rows; ++i) {
    const int a_obs = frame.actions[static_cast<std::size_t>(i)];
    if (a_obs < 0 || a_obs >= kNumActionClasses) {
      throw UnknownActionError("logged action " + std::to_string(a_obs) + " out of range");
    }
    const auto e = propensity(static_cast<std::size_t>(i));
    if (static_cast<int>(e.size()) != kNumActionClasses) {
      throw InconsistentInputError("propensity vector must have one entry per action class");
    }
    double sum = 0.0;
    for (const double p : e) {
      if (!std::isfinite(p) || p <= 0.0) {
        throw InconsistentInputError("propensities must be finite and positive after clipping");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw InconsistentInputError("propensities must sum to 1");
    }

    const double r = frame.rewards[static_cast<std::size_t>(i)];
    const double r0_hat = outcome(static_cast<std::size_t>(i), 0);
    const double robs_hat = outcome(static_cast<std::size_t>(i), a_obs);
    for (int a = 1; a < kNumActionClasses; ++a) {
      const double ra_hat = outcome(static_cast<std::size_t>(i), a);
      const double ipw = (a_obs == a ? 1.0 / e[static_cast<std::size_t>(a)] : 0.0) -
                         (a_obs == 0 ? 1.0 / e[0] : 0.0);
      const double gamma = (ra_hat - r0_hat) + (r - robs_hat) * ipw;
      if (!std::isfinite(gamma)) {
        throw InconsistentInputError("non-finite doubly robust score");
      }
      table.gamma.at(i, a) = gamma;
    }
  }
  return table;
}

std::vector<double> dr_ate(const DrScoreTable& table) {
  if (table.gamma.rows == 0) throw InsufficientSupportError("empty score table");
  std::vector<double> means(static_cast<std::size_t>(table.gamma.cols), 0.0);
  for (int i = 0; i < table.gamma.rows; ++i) {
    for (int a = 0; a < table.gamma.cols; ++a) {
      means[static_cast<std::size_t>(a)] += table.gamma.at(i, a);
    }
  }
  for (double& m : means) m /= static_cast<double>(table.gamma.rows);
  return means;
}

std::vector<int> per_day_assignments(const DrScoreTable& table, const Matrix& tau_hat, int K,
                                     bool skip_negative) {
  if (tau_hat.rows != table.gamma.rows) {
    throw InconsistentInputError("tau_hat rows must match the score table");
  }
  if (tau_hat.cols < 2) {
    throw InconsistentInputError("tau_hat needs at least one non-control action column");
  }
  if (K < 0) throw ConfigError("capacity K must be >= 0");

  std::vector<int> best;
  std::vector<double> score;
  best_actions(tau_hat, best, score);

  std::map<int, std::vector<std::size_t>> by_day;
  for (std::size_t i = 0; i < table.days.size(); ++i) by_day[table.days[i]].push_back(i);

  std::vector<int> chosen(table.days.size(), 0);
  for (auto& [day, rows] : by_day) {
    rank_day_rows(rows, score, table.patient_ids, day);
    const std::size_t treat = std::min(rows.size(), static_cast<std::size_t>(K));
    for (std::size_t j = 0; j < treat; ++j) {
      if (skip_negative && score[rows[j]] <= 0.0) break;  // sorted, rest are no better
      chosen[rows[j]] = best[rows[j]];
    }
  }
  return chosen;
}

double estimate_att(const DrScoreTable& table, const std::vector<int>& chosen, int K) {
  if (K < 1) throw ConfigError("K must be >= 1");
  if (chosen.size() != static_cast<std::size_t>(table.gamma.rows)) {
    throw InconsistentInputError("chosen actions must match the score table rows");
  }
  std::map<int, double> day_sums;
  std::map<int, int> day_treated;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const int a = chosen[i];
    if (a < 0 || a >= table.gamma.cols) {
      throw UnknownActionError("chosen action " + std::to_string(a) + " out of range");
    }
    auto [it, inserted] = day_sums.try_emplace(table.days[i], 0.0);
    it->second += table.gamma.at(static_cast<int>(i), a);
    if (a != 0) ++day_treated[table.days[i]];
  }
  for (const auto& [day, treated] : day_treated) {
    if (treated > K) {
      throw CapacityError("day " + std::to_string(day) + " treats " + std::to_string(treated) +
                          " patients with capacity " + std::to_string(K));
    }
  }
  if (day_sums.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [day, sum] : day_sums) total += sum / K;
  return total / static_cast<double>(day_sums.size());
}

Interval bootstrap_ci(const std::vector<double>& values, const std::vector<int>& patient_ids,
                      int B, double level, std::uint64_t seed) {
  if (values.size() != patient_ids.size()) {
    throw InconsistentInputError("values and patient ids must align");
  }
  if (B < 100) throw ConfigError("bootstrap needs B >= 100");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must be in (0, 1)");

  // Per-patient sufficient statistics for the mean.
  std::map<int, std::pair<double, long>> by_patient;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& [sum, count] = by_patient[patient_ids[i]];
    sum += values[i];
    ++count;
  }
  if (by_patient.size() < 2) {
    throw InsufficientSupportError("bootstrap needs at least 2 distinct patients");
  }
  std::vector<std::pair<double, long>> stats;
  stats.reserve(by_patient.size());
  for (const auto& [id, s] : by_patient) stats.push_back(s);

  const std::size_t n = stats.size();
  std::vector<double> draws(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    Rng rng(hash_stream(seed, static_cast<std::uint64_t>(b)));
    double sum = 0.0;
    long count = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const auto& [s, c] = stats[rng.uniform_int(n)];
      sum += s;
      count += c;
    }
    draws[static_cast<std::size_t>(b)] = sum / static_cast<double>(count);
  }
  return percentile_interval(std::move(draws), level);
}

TocReport toc_curve(const DrScoreTable& table, const Matrix& tau_hat, int B, std::uint64_t seed,
                    double level) {
  if (tau_hat.rows != table.gamma.rows || tau_hat.cols != table.gamma.cols) {
    throw InconsistentInputError("tau_hat must match the score table shape");
  }
  if (table.gamma.rows == 0) throw InsufficientSupportError("empty score table");
  if (B != 0 && B < 100) throw ConfigError("bootstrap needs B >= 100 (or 0 to skip CIs)");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must be in (0, 1)");

  const int n_rows = table.gamma.rows;
  const int n_actions = table.gamma.cols;

  // Dense patient index for bootstrap multiplicity counting.
  std::vector<int> patients(table.patient_ids.begin(), table.patient_ids.end());
  std::sort(patients.begin(), patients.end());
  patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
  const int N = static_cast<int>(patients.size());
  if (B != 0 && N < 2) {
    throw InsufficientSupportError("bootstrap needs at least 2 distinct patients");
  }
  std::unordered_map<int, int> dense;
  for (int i = 0; i < N; ++i) dense[patients[static_cast<std::size_t>(i)]] = i;

  std::vector<int> best;
  std::vector<double> best_score;
  best_actions(tau_hat, best, best_score);
  std::vector<double> best_gamma(static_cast<std::size_t>(n_rows));
  for (int i = 0; i < n_rows; ++i) {
    best_gamma[static_cast<std::size_t>(i)] = table.gamma.at(i, best[static_cast<std::size_t>(i)]);
  }

  // Day groups sorted by score; tied scores form blocks that the curve
  // averages over, so within-tie order is irrelevant.
  std::map<int, std::vector<std::size_t>> by_day;
  for (std::size_t i = 0; i < table.days.size(); ++i) by_day[table.days[i]].push_back(i);
  std::vector<DayGroup> days;
  days.reserve(by_day.size());
  for (auto& [day, rows] : by_day) {
    std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      if (best_score[a] != best_score[b]) return best_score[a] > best_score[b];
      return table.patient_ids[a] < table.patient_ids[b];
    });
    days.push_back({day, std::move(rows)});
  }
  const double T = static_cast<double>(days.size());

  constexpr int kGrid = 20;
  std::vector<int> grid_K(kGrid);
  for (int j = 0; j < kGrid; ++j) grid_K[static_cast<std::size_t>(j)] = capacity_for(N, j + 1, kGrid);
  const int k25 = capacity_for(N, 1, 4);  // equals grid_K[4]

  // ATT at each capacity from one pass per day. A day's capacity is capped at
  // its row count (days with fewer rows than K cannot dilute the estimate),
  // and a tie block straddling the cutoff contributes its mean pro rata, so
  // tied scores are averaged over instead of arbitrarily ordered. `mult` is
  // null for the point estimate and carries patient multiplicities for a
  // bootstrap replicate (a day left empty by the redraw contributes 0, T
  // stays fixed).
  std::vector<long> tie_size;
  std::vector<double> tie_sum;
  auto curve_pass = [&](const std::vector<int>* mult, std::vector<double>& att_out,
                        double& att25_out) {
    std::fill(att_out.begin(), att_out.end(), 0.0);
    for (const auto& g : days) {
      tie_size.assign(1, 0);
      tie_sum.assign(1, 0.0);
      double block_score = 0.0;
      bool in_block = false;
      long block_size = 0;
      double block_sum = 0.0;
      for (const std::size_t r : g.rows) {
        const int m =
            mult == nullptr ? 1 : (*mult)[static_cast<std::size_t>(dense[table.patient_ids[r]])];
        if (in_block && best_score[r] != block_score) {
          if (block_size > 0) {
            tie_size.push_back(tie_size.back() + block_size);
            tie_sum.push_back(tie_sum.back() + block_sum);
          }
          block_size = 0;
          block_sum = 0.0;
        }
        block_score = best_score[r];
        in_block = true;
        block_size += m;
        block_sum += m * best_gamma[r];
      }
      if (block_size > 0) {
        tie_size.push_back(tie_size.back() + block_size);
        tie_sum.push_back(tie_sum.back() + block_sum);
      }
      const long len = tie_size.back();
      if (len == 0) continue;
      std::size_t blk = 0;
      for (int j = 0; j < kGrid; ++j) {
        const long K_eff = std::min(static_cast<long>(grid_K[static_cast<std::size_t>(j)]), len);
        while (blk + 1 < tie_size.size() && tie_size[blk + 1] <= K_eff) ++blk;
        double taken = tie_sum[blk];
        const long remaining = K_eff - tie_size[blk];
        if (remaining > 0) {
          taken += static_cast<double>(remaining) /
                   static_cast<double>(tie_size[blk + 1] - tie_size[blk]) *
                   (tie_sum[blk + 1] - tie_sum[blk]);
        }
        att_out[static_cast<std::size_t>(j)] += taken / static_cast<double>(K_eff);
      }
    }
    for (double& v : att_out) v /= T;
    att25_out = att_out[4];  // k25 == grid_K[4] by construction
  };

  auto autoc_of = [&](const std::vector<double>& att) {
    const double mix = att.back();  // K/N = 1: the ATE of the chosen-action mix
    double area = 0.0;
    for (int j = 0; j + 1 < kGrid; ++j) {
      area += 0.5 * ((att[static_cast<std::size_t>(j)] - mix) +
                     (att[static_cast<std::size_t>(j + 1)] - mix)) /
              kGrid;
    }
    return area;
  };

  // Displayed baseline: DR ATE of the action whose predicted ATE is highest.
  int base_action = 1;
  {
    double best_pred = -1e300;
    for (int a = 1; a < n_actions; ++a) {
      double mean = 0.0;
      for (int i = 0; i < n_rows; ++i) mean += tau_hat.at(i, a);
      mean /= static_cast<double>(n_rows);
      if (mean > best_pred) {
        best_pred = mean;
        base_action = a;
      }
    }
  }
  auto baseline_of = [&](const std::vector<int>* mult) {
    double sum = 0.0;
    long count = 0;
    for (int i = 0; i < n_rows; ++i) {
      const int m = mult == nullptr
                        ? 1
                        : (*mult)[static_cast<std::size_t>(
                              dense[table.patient_ids[static_cast<std::size_t>(i)]])];
      sum += m * table.gamma.at(i, base_action);
      count += m;
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
  };

  TocReport report;
  report.n_patients = N;
  report.bootstrap_B = B;
  report.level = level;
  report.seed = seed;
  report.k25 = k25;
  report.baseline_action = base_action;

  std::vector<double> att(kGrid);
  double att25 = 0.0;
  curve_pass(nullptr, att, att25);
  report.att25 = att25;
  report.autoc = autoc_of(att);
  report.ate_baseline = baseline_of(nullptr);
  for (int j = 0; j < kGrid; ++j) {
    TocPoint p;
    p.ratio = static_cast<double>(j + 1) / kGrid;
    p.K = grid_K[static_cast<std::size_t>(j)];
    p.att = att[static_cast<std::size_t>(j)];
    p.lo = p.hi = p.att;
    report.points.push_back(p);
  }
  report.att25_ci = {att25, att25};
  report.autoc_ci = {report.autoc, report.autoc};
  report.ate_baseline_ci = {report.ate_baseline, report.ate_baseline};
  if (B == 0) return report;

  std::vector<std::vector<double>> point_draws(kGrid, std::vector<double>(static_cast<std::size_t>(B)));
  std::vector<double> att25_draws(static_cast<std::size_t>(B));
  std::vector<double> autoc_draws(static_cast<std::size_t>(B));
  std::vector<double> baseline_draws(static_cast<std::size_t>(B));
  std::vector<int> mult(static_cast<std::size_t>(N));
  std::vector<double> att_rep(kGrid);
  for (int b = 0; b < B; ++b) {
    Rng rng(hash_stream(seed, static_cast<std::uint64_t>(b)));
    std::fill(mult.begin(), mult.end(), 0);
    for (int i = 0; i < N; ++i) ++mult[rng.uniform_int(static_cast<std::uint64_t>(N))];
    double att25_rep = 0.0;
    curve_pass(&mult, att_rep, att25_rep);
    for (int j = 0; j < kGrid; ++j) {
      point_draws[static_cast<std::size_t>(j)][static_cast<std::size_t>(b)] =
          att_rep[static_cast<std::size_t>(j)];
    }
    att25_draws[static_cast<std::size_t>(b)] = att25_rep;
    autoc_draws[static_cast<std::size_t>(b)] = autoc_of(att_rep);
    baseline_draws[static_cast<std::size_t>(b)] = baseline_of(&mult);
  }
  for (int j = 0; j < kGrid; ++j) {
    const auto ci = percentile_interval(point_draws[static_cast<std::size_t>(j)], level);
    report.points[static_cast<std::size_t>(j)].lo = ci.lo;
    report.points[static_cast<std::size_t>(j)].hi = ci.hi;
  }
  report.att25_ci = percentile_interval(std::move(att25_draws), level);
  report.autoc_ci = percentile_interval(std::move(autoc_draws), level);
  report.ate_baseline_ci = percentile_interval(std::move(baseline_draws), level);
  return report;
}

}  // namespace tir::eval
