#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tirtarget/boosting.hpp"
#include "tirtarget/forest.hpp"
#include "tirtarget/matrix.hpp"
#include "tirtarget/nuisance.hpp"

namespace tir::learn {

enum class Method { s_learner, t_learner, x_learner, causal_forest, dr_forest, ensemble };

const std::vector<std::string>& method_names();
Method method_from_name(const std::string& name);
const std::string& method_name(Method m);

// Fitted CATE estimator. predict() pins tau(s, 0) to exactly 0 for every
// method; subclasses only ever see non-control actions.
class CateModel {
 public:
  virtual ~CateModel() = default;

  double predict(std::span<const double> s, int action) const {
    return action == 0 ? 0.0 : predict_impl(s, action);
  }

  std::vector<double> predict_all(std::span<const double> s) const {
    std::vector<double> out(static_cast<size_t>(n_classes_), 0.0);
    for (int a = 1; a < n_classes_; ++a) out[static_cast<size_t>(a)] = predict_impl(s, a);
    return out;
  }

  int n_classes() const { return n_classes_; }
  virtual Method method() const = 0;

 protected:
  explicit CateModel(int n_classes) : n_classes_(n_classes) {}
  virtual double predict_impl(std::span<const double> s, int action) const = 0;

  int n_classes_;
};

// Training slice: one state row per logged decision, its action class id,
// and its realized reward.
struct TrainData {
  Matrix S;
  std::vector<int> actions;
  std::vector<double> rewards;
  int n_classes = 5;
};

struct LearnerConfig {
  boost::RegressorConfig regressor;    // grid searched
  boost::RegressorConfig nuisance;     // single-point, used for internal models
  forest::ForestConfig forest;
  double propensity_floor = 0.01;

  LearnerConfig() { nuisance.grid = {{150, 3, 0.1}}; }
};

std::unique_ptr<CateModel> fit_cate(Method method, const TrainData& data,
                                    const LearnerConfig& cfg, std::uint64_t seed);

// Validation-weighted ensemble: convex weights minimizing the MSE between
// the blended tau and per-row DR scores on the validation split. dr_targets
// has one column per action class (column 0 ignored).
class EnsembleModel;
std::unique_ptr<CateModel> fit_ensemble(
    std::vector<std::shared_ptr<const CateModel>> candidates, const Matrix& S_val,
    const Matrix& dr_targets);

// Concrete model classes are exposed for serialization and white-box tests.

class SLearnerModel : public CateModel {
 public:
  SLearnerModel(int n_classes, boost::Regressor model)
      : CateModel(n_classes), model_(std::move(model)) {}
  Method method() const override { return Method::s_learner; }
  const boost::Regressor& regressor() const { return model_; }

 protected:
  double predict_impl(std::span<const double> s, int action) const override;

 private:
  friend struct ModelCodec;
  boost::Regressor model_;
};

class TLearnerModel : public CateModel {
 public:
  TLearnerModel(int n_classes, std::vector<boost::Regressor> per_action)
      : CateModel(n_classes), per_action_(std::move(per_action)) {}
  Method method() const override { return Method::t_learner; }
  const std::vector<boost::Regressor>& per_action() const { return per_action_; }

 protected:
  double predict_impl(std::span<const double> s, int action) const override;

 private:
  friend struct ModelCodec;
  std::vector<boost::Regressor> per_action_;  // index = class id, [0] = control
};

class XLearnerModel : public CateModel {
 public:
  XLearnerModel(int n_classes, std::vector<boost::Regressor> g_treated,
                std::vector<boost::Regressor> g_control, boost::Regressor control_propensity,
                double floor)
      : CateModel(n_classes),
        g_treated_(std::move(g_treated)),
        g_control_(std::move(g_control)),
        control_propensity_(std::move(control_propensity)),
        floor_(floor) {}
  Method method() const override { return Method::x_learner; }
  double control_probability(std::span<const double> s) const;

 protected:
  double predict_impl(std::span<const double> s, int action) const override;

 private:
  friend struct ModelCodec;
  std::vector<boost::Regressor> g_treated_;   // index = class id, [0] unused
  std::vector<boost::Regressor> g_control_;
  boost::Regressor control_propensity_;       // logistic: P(a = 0 | s)
  double floor_ = 0.01;
};

class CausalForestModel : public CateModel {
 public:
  CausalForestModel(int n_classes, std::vector<forest::HonestForest> per_action)
      : CateModel(n_classes), per_action_(std::move(per_action)) {}
  Method method() const override { return Method::causal_forest; }
  const std::vector<forest::HonestForest>& per_action() const { return per_action_; }

 protected:
  double predict_impl(std::span<const double> s, int action) const override;

 private:
  friend struct ModelCodec;
  std::vector<forest::HonestForest> per_action_;  // [0] unused
};

class DrForestModel : public CateModel {
 public:
  DrForestModel(int n_classes, std::vector<forest::HonestForest> per_action,
                std::vector<double> target_means, nuisance::OutcomeModel outcome,
                nuisance::PropensityModel propensity)
      : CateModel(n_classes),
        per_action_(std::move(per_action)),
        target_means_(std::move(target_means)),
        outcome_(std::move(outcome)),
        propensity_(std::move(propensity)) {}
  Method method() const override { return Method::dr_forest; }
  // Mean of the DR-score training targets per action (diagnostic contract:
  // equals the DR ATE computed from the exposed nuisances on the same data).
  const std::vector<double>& target_means() const { return target_means_; }
  const nuisance::OutcomeModel& outcome() const { return outcome_; }
  const nuisance::PropensityModel& propensity() const { return propensity_; }

 protected:
  double predict_impl(std::span<const double> s, int action) const override;

 private:
  friend struct ModelCodec;
  std::vector<forest::HonestForest> per_action_;
  std::vector<double> target_means_;
  nuisance::OutcomeModel outcome_;
  nuisance::PropensityModel propensity_;
};

class EnsembleModel : public CateModel {
 public:
  EnsembleModel(int n_classes, std::vector<std::shared_ptr<const CateModel>> candidates,
                std::vector<double> weights)
      : CateModel(n_classes), candidates_(std::move(candidates)), weights_(std::move(weights)) {}
  Method method() const override { return Method::ensemble; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<std::shared_ptr<const CateModel>>& candidates() const { return candidates_; }

 protected:
  double predict_impl(std::span<const double> s, int action) const override;

 private:
  friend struct ModelCodec;
  std::vector<std::shared_ptr<const CateModel>> candidates_;
  std::vector<double> weights_;
};

// Euclidean projection onto the probability simplex (w >= 0, sum w = 1).
std::vector<double> project_to_simplex(std::vector<double> v);

}  // namespace tir::learn
