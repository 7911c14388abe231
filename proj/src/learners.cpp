#include "tirtarget/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tirtarget/errors.hpp"
#include "tirtarget/probs.hpp"
#include "tirtarget/rng.hpp"

namespace tir::learn {

namespace {

constexpr std::uint64_t kSubOutcome = 1;
constexpr std::uint64_t kSubPropensity = 2;
constexpr std::uint64_t kSubStage2 = 3;
constexpr std::uint64_t kSubForest = 4;

void check_support(const TrainData& data) {
  std::vector<int> counts(static_cast<size_t>(data.n_classes), 0);
  for (int a : data.actions) {
    if (a < 0 || a >= data.n_classes) throw UnknownActionError("action id out of range");
    counts[static_cast<size_t>(a)]++;
  }
  for (int c = 0; c < data.n_classes; ++c) {
    if (counts[static_cast<size_t>(c)] < 5) {
      throw InsufficientSupportError("action class " + std::to_string(c) +
                                     " has fewer than 5 training rows");
    }
  }
}

Matrix subset_rows(const Matrix& X, const std::vector<size_t>& rows) {
  Matrix out(static_cast<int>(rows.size()), X.cols);
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto src = X.row(static_cast<int>(rows[i]));
    std::copy(src.begin(), src.end(), out.row(static_cast<int>(i)).begin());
  }
  return out;
}

std::vector<size_t> rows_with_action(const std::vector<int>& actions, int a) {
  std::vector<size_t> out;
  for (size_t i = 0; i < actions.size(); ++i)
    if (actions[i] == a) out.push_back(i);
  return out;
}

std::vector<double> gather(const std::vector<double>& v, const std::vector<size_t>& rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (size_t r : rows) out.push_back(v[r]);
  return out;
}

std::unique_ptr<CateModel> fit_s_learner(const TrainData& data, const LearnerConfig& cfg,
                                         std::uint64_t seed) {
  const Matrix design = nuisance::append_action_onehot(data.S, data.actions, data.n_classes);
  auto model = boost::fit_regressor(design, data.rewards, cfg.regressor, seed);
  return std::make_unique<SLearnerModel>(data.n_classes, std::move(model));
}

std::unique_ptr<CateModel> fit_t_learner(const TrainData& data, const LearnerConfig& cfg,
                                         std::uint64_t seed) {
  std::vector<boost::Regressor> per_action;
  per_action.reserve(static_cast<size_t>(data.n_classes));
  for (int a = 0; a < data.n_classes; ++a) {
    const auto rows = rows_with_action(data.actions, a);
    per_action.push_back(boost::fit_regressor(subset_rows(data.S, rows),
                                              gather(data.rewards, rows), cfg.regressor,
                                              hash_stream(seed, static_cast<std::uint64_t>(a))));
  }
  return std::make_unique<TLearnerModel>(data.n_classes, std::move(per_action));
}

std::unique_ptr<CateModel> fit_x_learner(const TrainData& data, const LearnerConfig& cfg,
                                         std::uint64_t seed) {
  const auto control_rows = rows_with_action(data.actions, 0);
  const Matrix S_control = subset_rows(data.S, control_rows);
  const auto mu0 = boost::fit_regressor(S_control, gather(data.rewards, control_rows),
                                        cfg.regressor, hash_stream(seed, kSubOutcome));

  // P(a = 0 | s) via boosted logistic on the full training slice.
  std::vector<double> is_control(data.actions.size());
  for (size_t i = 0; i < data.actions.size(); ++i) is_control[i] = data.actions[i] == 0 ? 1.0 : 0.0;
  boost::RegressorConfig prop_cfg = cfg.nuisance;
  prop_cfg.loss = boost::Loss::logistic;
  auto e0 = boost::fit_regressor(data.S, is_control, prop_cfg, hash_stream(seed, kSubPropensity));

  std::vector<boost::Regressor> g_treated(static_cast<size_t>(data.n_classes));
  std::vector<boost::Regressor> g_control(static_cast<size_t>(data.n_classes));
  for (int a = 1; a < data.n_classes; ++a) {
    const auto rows_a = rows_with_action(data.actions, a);
    const Matrix S_a = subset_rows(data.S, rows_a);

    // Imputed effects on treated rows: y_i - mu0(s_i).
    std::vector<double> d_treated(rows_a.size());
    for (size_t i = 0; i < rows_a.size(); ++i) {
      d_treated[i] = data.rewards[rows_a[i]] - mu0.predict(data.S.row(static_cast<int>(rows_a[i])));
    }
    g_treated[static_cast<size_t>(a)] =
        boost::fit_regressor(S_a, d_treated, cfg.regressor,
                             hash_stream(seed, kSubStage2, static_cast<std::uint64_t>(a) * 2));

    // Imputed effects on control rows: mu_a(s_j) - y_j.
    const auto mu_a = boost::fit_regressor(S_a, gather(data.rewards, rows_a), cfg.regressor,
                                           hash_stream(seed, kSubOutcome, static_cast<std::uint64_t>(a)));
    std::vector<double> d_control(control_rows.size());
    for (size_t j = 0; j < control_rows.size(); ++j) {
      d_control[j] =
          mu_a.predict(data.S.row(static_cast<int>(control_rows[j]))) - data.rewards[control_rows[j]];
    }
    g_control[static_cast<size_t>(a)] =
        boost::fit_regressor(S_control, d_control, cfg.regressor,
                             hash_stream(seed, kSubStage2, static_cast<std::uint64_t>(a) * 2 + 1));
  }
  return std::make_unique<XLearnerModel>(data.n_classes, std::move(g_treated),
                                         std::move(g_control), std::move(e0),
                                         cfg.propensity_floor);
}

std::unique_ptr<CateModel> fit_causal_forest(const TrainData& data, const LearnerConfig& cfg,
                                             std::uint64_t seed) {
  std::vector<forest::HonestForest> per_action(static_cast<size_t>(data.n_classes));
  for (int a = 1; a < data.n_classes; ++a) {
    std::vector<size_t> rows;
    for (size_t i = 0; i < data.actions.size(); ++i)
      if (data.actions[i] == 0 || data.actions[i] == a) rows.push_back(i);
    const Matrix S_pair = subset_rows(data.S, rows);
    const std::vector<double> y_pair = gather(data.rewards, rows);

    // Center outcomes and treatment indicators before partitioning.
    const auto m_hat = boost::fit_regressor(S_pair, y_pair, cfg.nuisance,
                                            hash_stream(seed, kSubOutcome, static_cast<std::uint64_t>(a)));
    std::vector<double> treated(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) treated[i] = data.actions[rows[i]] == a ? 1.0 : 0.0;
    boost::RegressorConfig prop_cfg = cfg.nuisance;
    prop_cfg.loss = boost::Loss::logistic;
    const auto e_hat = boost::fit_regressor(S_pair, treated, prop_cfg,
                                            hash_stream(seed, kSubPropensity, static_cast<std::uint64_t>(a)));

    std::vector<double> y_tilde(rows.size()), w_tilde(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
      const auto s = S_pair.row(static_cast<int>(i));
      y_tilde[i] = y_pair[i] - m_hat.predict(s);
      w_tilde[i] = treated[i] - e_hat.predict_proba(s);
    }
    per_action[static_cast<size_t>(a)] =
        forest::fit_causal_forest(S_pair, y_tilde, w_tilde, cfg.forest,
                                  hash_stream(seed, kSubForest, static_cast<std::uint64_t>(a)));
  }
  return std::make_unique<CausalForestModel>(data.n_classes, std::move(per_action));
}

std::unique_ptr<CateModel> fit_dr_forest(const TrainData& data, const LearnerConfig& cfg,
                                         std::uint64_t seed) {
  auto outcome = nuisance::fit_outcome(data.S, data.actions, data.rewards, data.n_classes,
                                       hash_stream(seed, kSubOutcome), cfg.nuisance);
  auto propensity = nuisance::fit_propensity(data.S, data.actions, data.n_classes,
                                             cfg.propensity_floor,
                                             hash_stream(seed, kSubPropensity));

  const size_t n = data.actions.size();
  std::vector<std::vector<double>> e(n);
  for (size_t i = 0; i < n; ++i) e[i] = propensity.probs(data.S.row(static_cast<int>(i)));

  std::vector<forest::HonestForest> per_action(static_cast<size_t>(data.n_classes));
  std::vector<double> target_means(static_cast<size_t>(data.n_classes), 0.0);
  std::vector<double> gamma(n);
  for (int a = 1; a < data.n_classes; ++a) {
    for (size_t i = 0; i < n; ++i) {
      const auto s = data.S.row(static_cast<int>(i));
      const int obs = data.actions[i];
      const double r_hat_a = outcome.predict(s, a);
      const double r_hat_0 = outcome.predict(s, 0);
      const double r_hat_obs = outcome.predict(s, obs);
      const double ind_a = obs == a ? 1.0 / e[i][static_cast<size_t>(a)] : 0.0;
      const double ind_0 = obs == 0 ? 1.0 / e[i][0] : 0.0;
      gamma[i] = (r_hat_a - r_hat_0) + (data.rewards[i] - r_hat_obs) * (ind_a - ind_0);
    }
    target_means[static_cast<size_t>(a)] =
        std::accumulate(gamma.begin(), gamma.end(), 0.0) / static_cast<double>(n);
    per_action[static_cast<size_t>(a)] =
        forest::fit_regression_forest(data.S, gamma, cfg.forest,
                                      hash_stream(seed, kSubForest, static_cast<std::uint64_t>(a)));
  }
  return std::make_unique<DrForestModel>(data.n_classes, std::move(per_action),
                                         std::move(target_means), std::move(outcome),
                                         std::move(propensity));
}

}  // namespace

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = {"s_learner",     "t_learner", "x_learner",
                                                 "causal_forest", "dr_forest", "ensemble"};
  return names;
}

Method method_from_name(const std::string& name) {
  const auto& names = method_names();
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<Method>(i);
  throw ConfigError("unknown CATE method: " + name);
}

const std::string& method_name(Method m) {
  return method_names()[static_cast<size_t>(m)];
}

double SLearnerModel::predict_impl(std::span<const double> s, int action) const {
  std::vector<double> row(s.size() + static_cast<size_t>(n_classes_), 0.0);
  std::copy(s.begin(), s.end(), row.begin());
  row[s.size() + static_cast<size_t>(action)] = 1.0;
  const double with_action = model_.predict(row);
  row[s.size() + static_cast<size_t>(action)] = 0.0;
  row[s.size()] = 1.0;
  return with_action - model_.predict(row);
}

double TLearnerModel::predict_impl(std::span<const double> s, int action) const {
  return per_action_[static_cast<size_t>(action)].predict(s) - per_action_[0].predict(s);
}

double XLearnerModel::control_probability(std::span<const double> s) const {
  return std::clamp(control_propensity_.predict_proba(s), floor_, 1.0 - floor_);
}

double XLearnerModel::predict_impl(std::span<const double> s, int action) const {
  const double e0 = control_probability(s);
  return e0 * g_treated_[static_cast<size_t>(action)].predict(s) +
         (1.0 - e0) * g_control_[static_cast<size_t>(action)].predict(s);
}

double CausalForestModel::predict_impl(std::span<const double> s, int action) const {
  return per_action_[static_cast<size_t>(action)].predict(s);
}

double DrForestModel::predict_impl(std::span<const double> s, int action) const {
  return per_action_[static_cast<size_t>(action)].predict(s);
}

double EnsembleModel::predict_impl(std::span<const double> s, int action) const {
  double out = 0;
  for (size_t j = 0; j < candidates_.size(); ++j) {
    out += weights_[j] * candidates_[j]->predict(s, action);
  }
  return out;
}

std::unique_ptr<CateModel> fit_cate(Method method, const TrainData& data,
                                    const LearnerConfig& cfg, std::uint64_t seed) {
  if (static_cast<size_t>(data.S.rows) != data.actions.size() ||
      data.actions.size() != data.rewards.size()) {
    throw InconsistentInputError("training slice sizes differ");
  }
  check_support(data);
  switch (method) {
    case Method::s_learner:
      return fit_s_learner(data, cfg, seed);
    case Method::t_learner:
      return fit_t_learner(data, cfg, seed);
    case Method::x_learner:
      return fit_x_learner(data, cfg, seed);
    case Method::causal_forest:
      return fit_causal_forest(data, cfg, seed);
    case Method::dr_forest:
      return fit_dr_forest(data, cfg, seed);
    case Method::ensemble:
      throw ConfigError("the ensemble is fit from candidates via fit_ensemble");
  }
  throw ConfigError("unknown CATE method id");
}

std::vector<double> project_to_simplex(std::vector<double> v) {
  // Euclidean projection (Held et al.): shift so the largest feasible
  // support sums to 1, clamp the rest to zero.
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0;
  double theta = 0;
  int support = 0;
  for (size_t i = 0; i < u.size(); ++i) {
    cum += u[i];
    const double t = (cum - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0) {
      theta = t;
      support = static_cast<int>(i + 1);
    }
  }
  (void)support;
  for (auto& x : v) x = std::max(0.0, x - theta);
  return v;
}

std::unique_ptr<CateModel> fit_ensemble(
    std::vector<std::shared_ptr<const CateModel>> candidates, const Matrix& S_val,
    const Matrix& dr_targets) {
  if (candidates.empty()) throw InconsistentInputError("ensemble needs at least one candidate");
  const int n_classes = candidates[0]->n_classes();
  for (const auto& c : candidates) {
    if (c->n_classes() != n_classes)
      throw InconsistentInputError("ensemble candidates disagree on the action set");
  }
  if (dr_targets.rows != S_val.rows || dr_targets.cols != n_classes)
    throw InconsistentInputError("DR target matrix shape mismatch");

  const size_t J = candidates.size();
  const size_t M = static_cast<size_t>(S_val.rows) * static_cast<size_t>(n_classes - 1);

  // Precompute candidate predictions over (row, non-control action) pairs.
  std::vector<std::vector<double>> P(J, std::vector<double>(M));
  std::vector<double> target(M);
  size_t m = 0;
  for (int r = 0; r < S_val.rows; ++r) {
    const auto s = S_val.row(r);
    for (int a = 1; a < n_classes; ++a, ++m) {
      target[m] = dr_targets.at(r, a);
      for (size_t j = 0; j < J; ++j) P[j][m] = candidates[j]->predict(s, a);
    }
  }

  std::vector<double> w(J, 1.0 / static_cast<double>(J));
  std::vector<double> grad(J);
  std::vector<double> resid(M);
  constexpr int kSteps = 500;
  constexpr double kStep = 0.05;
  for (int step = 0; step < kSteps; ++step) {
    for (size_t i = 0; i < M; ++i) {
      double pred = 0;
      for (size_t j = 0; j < J; ++j) pred += w[j] * P[j][i];
      resid[i] = pred - target[i];
    }
    for (size_t j = 0; j < J; ++j) {
      double g = 0;
      for (size_t i = 0; i < M; ++i) g += resid[i] * P[j][i];
      grad[j] = 2.0 * g / static_cast<double>(M);
    }
    for (size_t j = 0; j < J; ++j) w[j] -= kStep * grad[j];
    w = project_to_simplex(std::move(w));
  }
  return std::make_unique<EnsembleModel>(n_classes, std::move(candidates), std::move(w));
}

}  // namespace tir::learn
