#include "tirtarget/representations.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tirtarget/boosting.hpp"
#include "tirtarget/errors.hpp"
#include "tirtarget/rng.hpp"

namespace tir::rep {

namespace {

constexpr std::uint64_t kProjectionStream = 0x9807;
constexpr std::uint64_t kKmeansStream = 0x4b3e;
constexpr std::uint64_t kImportanceStream = 0x13b0;

double dist2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

const std::vector<std::string>& state_mode_names() {
  static const std::vector<std::string> names = {"full", "tide", "ml_subset", "blackbox"};
  return names;
}

StateMode state_mode_from_name(const std::string& name) {
  const auto& names = state_mode_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<StateMode>(i);
  }
  throw ConfigError("unknown state mode '" + name + "'");
}

const std::string& state_mode_name(StateMode mode) {
  return state_mode_names()[static_cast<std::size_t>(mode)];
}

const std::vector<std::string>& action_scheme_names() {
  static const std::vector<std::string> names = {"clinical_rules", "kmeans"};
  return names;
}

ActionScheme action_scheme_from_name(const std::string& name) {
  const auto& names = action_scheme_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<ActionScheme>(i);
  }
  throw ConfigError("unknown action scheme '" + name + "'");
}

const std::string& action_scheme_name(ActionScheme scheme) {
  return action_scheme_names()[static_cast<std::size_t>(scheme)];
}

Projection fit_projection(std::uint64_t seed, int out_dim) {
  if (out_dim < 1) throw ConfigError("projection dimension must be >= 1");
  Projection proj;
  proj.out_dim = out_dim;
  proj.seed = seed;
  proj.weights = Matrix(out_dim, cgm::kWindowSlots);
  Rng rng(hash_stream(seed, kProjectionStream));
  const double scale = 1.0 / std::sqrt(static_cast<double>(cgm::kWindowSlots));
  for (int i = 0; i < out_dim; ++i) {
    for (int j = 0; j < cgm::kWindowSlots; ++j) proj.weights.at(i, j) = scale * rng.normal();
  }
  return proj;
}

StateRep state_representation(const cgm::ClinicalFeatures& f, StateMode mode,
                              const StateArtifacts* artifacts) {
  StateRep rep;
  rep.mode = mode;
  switch (mode) {
    case StateMode::full:
      rep.feature_names = cgm::clinical_feature_names();
      rep.values = cgm::feature_vector(f);
      return rep;
    case StateMode::tide:
      rep.feature_names = cgm::tide_feature_names();
      break;
    case StateMode::ml_subset:
      if (artifacts == nullptr || artifacts->ml_subset.empty()) {
        throw ConfigError("ml_subset mode needs a stored feature subset");
      }
      rep.feature_names = artifacts->ml_subset;
      break;
    case StateMode::blackbox:
      throw ConfigError("blackbox mode projects the raw trace window, not the feature battery");
  }
  rep.values.reserve(rep.feature_names.size());
  for (const auto& name : rep.feature_names) rep.values.push_back(cgm::feature_value(f, name));
  return rep;
}

StateRep state_representation(const cgm::CgmTrace& trace, int day_index,
                              const Projection& projection) {
  if (projection.weights.rows != projection.out_dim ||
      projection.weights.cols != cgm::kWindowSlots || projection.out_dim < 1) {
    throw ConfigError("blackbox mode needs a fitted projection");
  }
  if (day_index < cgm::kWindowDays || day_index > trace.days()) {
    throw WindowTooShortError("projection window does not fit inside the trace");
  }

  const std::size_t begin = static_cast<std::size_t>(day_index - cgm::kWindowDays) *
                            static_cast<std::size_t>(cgm::kSlotsPerDay);
  double mean = 0.0;
  long present = 0;
  for (int k = 0; k < cgm::kWindowSlots; ++k) {
    const double g = trace.readings[begin + static_cast<std::size_t>(k)];
    if (!std::isnan(g)) {
      mean += g;
      ++present;
    }
  }
  if (present == 0) throw UndefinedFeatureError("projection window has no present readings");
  mean /= static_cast<double>(present);

  StateRep rep;
  rep.mode = StateMode::blackbox;
  rep.values.assign(static_cast<std::size_t>(projection.out_dim), 0.0);
  for (int i = 0; i < projection.out_dim; ++i) {
    double s = 0.0;
    for (int k = 0; k < cgm::kWindowSlots; ++k) {
      const double g = trace.readings[begin + static_cast<std::size_t>(k)];
      s += projection.weights.at(i, k) * (std::isnan(g) ? mean : g);
    }
    rep.values[static_cast<std::size_t>(i)] = s;
    rep.feature_names.push_back("proj_" + std::to_string(i));
  }
  return rep;
}

std::vector<std::string> state_feature_names(StateMode mode, const StateArtifacts& artifacts) {
  switch (mode) {
    case StateMode::full:
      return cgm::clinical_feature_names();
    case StateMode::tide:
      return cgm::tide_feature_names();
    case StateMode::ml_subset:
      if (artifacts.ml_subset.empty()) {
        throw ConfigError("ml_subset mode needs a stored feature subset");
      }
      return artifacts.ml_subset;
    case StateMode::blackbox: {
      if (artifacts.projection.out_dim < 1) {
        throw ConfigError("blackbox mode needs a fitted projection");
      }
      std::vector<std::string> names;
      for (int i = 0; i < artifacts.projection.out_dim; ++i) {
        names.push_back("proj_" + std::to_string(i));
      }
      return names;
    }
  }
  throw ConfigError("unknown state mode");
}

Matrix state_matrix(const sim::LoggedPanel& panel, const std::vector<std::size_t>& rows,
                    StateMode mode, const StateArtifacts& artifacts) {
  Matrix S(0, 0);
  for (const std::size_t r : rows) {
    if (r >= panel.rows.size()) throw InconsistentInputError("panel row index out of range");
    const auto& row = panel.rows[r];
    StateRep rep;
    if (mode == StateMode::blackbox) {
      const auto pid = static_cast<std::size_t>(row.patient_id);
      if (pid >= panel.traces.size()) throw InconsistentInputError("panel row without a trace");
      rep = state_representation(panel.traces[pid], row.day, artifacts.projection);
    } else {
      rep = state_representation(row.features, mode, &artifacts);
    }
    S.push_row(rep.values);
  }
  return S;
}

std::vector<std::string> select_state_features(const sim::LoggedPanel& panel,
                                               const std::vector<std::size_t>& rows, int top_k,
                                               std::uint64_t seed) {
  const auto& names = cgm::clinical_feature_names();
  const int d = static_cast<int>(names.size());
  if (top_k < 1 || top_k > d) throw ConfigError("top_k must be in [1, feature count]");

  Matrix X(0, 0);
  std::vector<double> y;
  for (const std::size_t r : rows) {
    if (r >= panel.rows.size()) throw InconsistentInputError("panel row index out of range");
    X.push_row(cgm::feature_vector(panel.rows[r].features));
    y.push_back(panel.rows[r].reward);
  }

  boost::RegressorConfig cfg;
  cfg.grid = {{150, 3, 0.1}};  // importance ranking does not need the CV'd grid
  const auto model = boost::fit_regressor(X, y, cfg, seed);

  const auto base_pred = model.predict(X);
  double base_mse = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = base_pred[i] - y[i];
    base_mse += e * e;
  }

  // MSE increase when one column is shuffled, holding everything else fixed.
  Matrix X_work = X;
  std::vector<double> importance(static_cast<std::size_t>(d), 0.0);
  std::vector<int> order(y.size());
  for (int j = 0; j < d; ++j) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(hash_stream(seed, kImportanceStream, static_cast<std::uint64_t>(j)));
    rng.shuffle(order);
    for (int i = 0; i < X.rows; ++i) {
      X_work.at(i, j) = X.at(order[static_cast<std::size_t>(i)], j);
    }
    const auto pred = model.predict(X_work);
    double mse = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double e = pred[i] - y[i];
      mse += e * e;
    }
    importance[static_cast<std::size_t>(j)] = mse - base_mse;
    for (int i = 0; i < X.rows; ++i) X_work.at(i, j) = X.at(i, j);
  }

  std::vector<int> rank(static_cast<std::size_t>(d));
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(), [&](int a, int b) {
    return importance[static_cast<std::size_t>(a)] > importance[static_cast<std::size_t>(b)];
  });

  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(top_k));
  for (int j = 0; j < top_k; ++j) {
    out.push_back(names[static_cast<std::size_t>(rank[static_cast<std::size_t>(j)])]);
  }
  return out;
}

ActionClass clinical_rules_class(const MessageLabels& labels) {
  const bool lows = labels.recommendations_target_low_glucose;
  const bool highs = labels.recommendations_target_high_glucose_or_low_time_in_range ||
                     labels.recommends_more_correction_doses || labels.reminds_patient_to_bolus;
  if (lows && highs) return ActionClass::highs_and_lows;
  if (highs) return ActionClass::highs_only;
  if (lows) return ActionClass::lows_only;
  return ActionClass::other;
}

ActionClass clinical_action_class(const RawAction& action) {
  if (action.is_control()) return ActionClass::control;
  return clinical_rules_class(action.labels);
}

KMeansModel fit_kmeans(const Matrix& embeddings, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (embeddings.cols < 1) throw InconsistentInputError("embeddings need at least one column");
  const int n = embeddings.rows;
  const int d = embeddings.cols;
  if (n < k) throw InsufficientSupportError("k-means needs at least k points");

  Rng rng(hash_stream(seed, kKmeansStream));

  // k-means++ seeding: next center drawn proportional to squared distance.
  Matrix C(k, d);
  auto copy_center = [&](int c, int row) {
    for (int j = 0; j < d; ++j) C.at(c, j) = embeddings.at(row, j);
  };
  copy_center(0, static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n),
                         std::numeric_limits<double>::infinity());
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const double dd = dist2(embeddings.row(i), C.row(c - 1));
      auto& best = d2[static_cast<std::size_t>(i)];
      if (dd < best) best = dd;
      total += best;
    }
    int pick = 0;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double cum = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        cum += d2[static_cast<std::size_t>(i)];
        if (cum > r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
    }
    copy_center(c, pick);
  }

  KMeansModel model;
  model.seed = seed;
  model.centroids = std::move(C);

  std::vector<int> owner(static_cast<std::size_t>(n), 0);
  Matrix next(k, d);
  std::vector<long> count(static_cast<std::size_t>(k), 0);
  for (int iter = 0; iter < 50; ++iter) {
    double inertia = 0.0;
    std::fill(next.data.begin(), next.data.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = dist2(embeddings.row(i), model.centroids.row(0));
      for (int c = 1; c < k; ++c) {
        const double dd = dist2(embeddings.row(i), model.centroids.row(c));
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      owner[static_cast<std::size_t>(i)] = best;
      inertia += best_d;
      ++count[static_cast<std::size_t>(best)];
      for (int j = 0; j < d; ++j) next.at(best, j) += embeddings.at(i, j);
    }
    model.inertia_path.push_back(inertia);

    double max_shift2 = 0.0;
    for (int c = 0; c < k; ++c) {
      if (count[static_cast<std::size_t>(c)] == 0) {
        // Empty cluster keeps its previous centroid.
        for (int j = 0; j < d; ++j) next.at(c, j) = model.centroids.at(c, j);
      } else {
        for (int j = 0; j < d; ++j) {
          next.at(c, j) /= static_cast<double>(count[static_cast<std::size_t>(c)]);
        }
      }
      max_shift2 = std::max(max_shift2, dist2(next.row(c), model.centroids.row(c)));
    }
    std::swap(model.centroids.data, next.data);
    if (max_shift2 < 1e-12) break;  // centroid shift below 1e-6
  }

  double inertia = 0.0;
  for (int i = 0; i < n; ++i) {
    double best_d = dist2(embeddings.row(i), model.centroids.row(0));
    for (int c = 1; c < k; ++c) {
      best_d = std::min(best_d, dist2(embeddings.row(i), model.centroids.row(c)));
    }
    inertia += best_d;
  }
  model.inertia = inertia;
  return model;
}

int assign_cluster(const KMeansModel& model, std::span<const double> embedding) {
  if (model.centroids.rows < 1) throw ConfigError("k-means model is not fitted");
  if (static_cast<int>(embedding.size()) != model.centroids.cols) {
    throw InconsistentInputError("embedding dimension does not match the centroids");
  }
  int best = 0;
  double best_d = dist2(embedding, model.centroids.row(0));
  for (int c = 1; c < model.centroids.rows; ++c) {
    const double dd = dist2(embedding, model.centroids.row(c));
    if (dd < best_d) {
      best_d = dd;
      best = c;
    }
  }
  return best;
}

int kmeans_action_class(const KMeansModel& model, const RawAction& action) {
  if (action.is_control()) return 0;
  return assign_cluster(model, action.embedding) + 1;
}

}  // namespace tir::rep
