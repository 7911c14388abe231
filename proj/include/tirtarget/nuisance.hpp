#pragma once

#include <cstdint>
#include <vector>

#include "tirtarget/boosting.hpp"
#include "tirtarget/matrix.hpp"

namespace tir::nuisance {

// Multiclass propensity model: one boosted one-vs-rest classifier per class,
// raw scores softmaxed, then floored and renormalized.
struct PropensityModel {
  int n_classes = 0;
  double clip_floor = 0.01;
  std::vector<boost::Regressor> per_class;  // raw log-odds scores

  std::vector<double> probs(std::span<const double> x) const;
};

PropensityModel fit_propensity(const Matrix& X, const std::vector<int>& actions, int n_classes,
                               double clip_floor, std::uint64_t seed);

// Outcome model r̂(x, a): one boosted regressor on [x, one-hot action].
struct OutcomeModel {
  int n_classes = 0;
  boost::Regressor model;

  double predict(std::span<const double> x, int action) const;
};

OutcomeModel fit_outcome(const Matrix& X, const std::vector<int>& actions,
                         const std::vector<double>& rewards, int n_classes, std::uint64_t seed,
                         const boost::RegressorConfig& cfg = {});

// [x, one-hot(action)] design matrix shared by the outcome model and the
// S-learner.
Matrix append_action_onehot(const Matrix& X, const std::vector<int>& actions, int n_classes);

}  // namespace tir::nuisance
