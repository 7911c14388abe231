#include "tirtarget/nuisance.hpp"

#include <algorithm>
#include <cmath>

#include "tirtarget/errors.hpp"
#include "tirtarget/probs.hpp"
#include "tirtarget/rng.hpp"

namespace tir::nuisance {

std::vector<double> PropensityModel::probs(std::span<const double> x) const {
  // Softmax over per-class log-probabilities, not raw log-odds: the latter
  // overweights the majority class whenever its rate is far from 0.5.
  std::vector<double> z(static_cast<size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c)
    z[static_cast<size_t>(c)] = std::log(per_class[static_cast<size_t>(c)].predict_proba(x));
  softmax_inplace(z);
  clip_and_renormalize(z, clip_floor);
  return z;
}

PropensityModel fit_propensity(const Matrix& X, const std::vector<int>& actions, int n_classes,
                               double clip_floor, std::uint64_t seed) {
  if (static_cast<size_t>(X.rows) != actions.size())
    throw InconsistentInputError("X and actions row counts differ");
  if (n_classes < 2) throw ConfigError("propensity model needs at least 2 classes");

  std::vector<int> counts(static_cast<size_t>(n_classes), 0);
  for (int a : actions) {
    if (a < 0 || a >= n_classes) throw UnknownActionError("action id out of range");
    counts[static_cast<size_t>(a)]++;
  }
  for (int c = 0; c < n_classes; ++c) {
    if (counts[static_cast<size_t>(c)] < 5) {
      throw InsufficientSupportError("action class " + std::to_string(c) +
                                     " has fewer than 5 training rows");
    }
  }

  PropensityModel model;
  model.n_classes = n_classes;
  model.clip_floor = clip_floor;
  model.per_class.reserve(static_cast<size_t>(n_classes));

  boost::RegressorConfig cfg;
  cfg.loss = boost::Loss::logistic;
  cfg.grid = {{100, 2, 0.1}};  // single point: no CV needed for the nuisance
  std::vector<double> y(actions.size());
  for (int c = 0; c < n_classes; ++c) {
    for (size_t i = 0; i < actions.size(); ++i) y[i] = actions[i] == c ? 1.0 : 0.0;
    model.per_class.push_back(
        boost::fit_regressor(X, y, cfg, hash_stream(seed, static_cast<std::uint64_t>(c))));
  }
  return model;
}

Matrix append_action_onehot(const Matrix& X, const std::vector<int>& actions, int n_classes) {
  Matrix out(X.rows, X.cols + n_classes);
  for (int r = 0; r < X.rows; ++r) {
    const auto src = X.row(r);
    auto dst = out.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
    dst[static_cast<size_t>(X.cols + actions[static_cast<size_t>(r)])] = 1.0;
  }
  return out;
}

double OutcomeModel::predict(std::span<const double> x, int action) const {
  if (action < 0 || action >= n_classes) throw UnknownActionError("action id out of range");
  std::vector<double> row(x.size() + static_cast<size_t>(n_classes), 0.0);
  std::copy(x.begin(), x.end(), row.begin());
  row[x.size() + static_cast<size_t>(action)] = 1.0;
  return model.predict(row);
}

OutcomeModel fit_outcome(const Matrix& X, const std::vector<int>& actions,
                         const std::vector<double>& rewards, int n_classes, std::uint64_t seed,
                         const boost::RegressorConfig& cfg) {
  if (static_cast<size_t>(X.rows) != actions.size() || actions.size() != rewards.size())
    throw InconsistentInputError("X, actions, rewards sizes differ");
  OutcomeModel model;
  model.n_classes = n_classes;
  const Matrix design = append_action_onehot(X, actions, n_classes);
  model.model = boost::fit_regressor(design, rewards, cfg, seed);
  return model;
}

}  // namespace tir::nuisance
