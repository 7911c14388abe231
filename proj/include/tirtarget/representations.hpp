#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tirtarget/actions.hpp"
#include "tirtarget/features.hpp"
#include "tirtarget/matrix.hpp"
#include "tirtarget/sim.hpp"

namespace tir::rep {

enum class StateMode { full, tide, ml_subset, blackbox };
enum class ActionScheme { clinical_rules, kmeans };

const std::vector<std::string>& state_mode_names();
StateMode state_mode_from_name(const std::string& name);
const std::string& state_mode_name(StateMode mode);

const std::vector<std::string>& action_scheme_names();
ActionScheme action_scheme_from_name(const std::string& name);
const std::string& action_scheme_name(ActionScheme scheme);

// Seeded Gaussian projection of the two-week trace window; missing slots are
// imputed with the window mean before projecting.
struct Projection {
  int out_dim = 0;
  std::uint64_t seed = 0;
  Matrix weights;  // out_dim x cgm::kWindowSlots
};

Projection fit_projection(std::uint64_t seed, int out_dim = 8);

struct StateRep {
  StateMode mode = StateMode::full;
  std::vector<std::string> feature_names;
  std::vector<double> values;
};

// Fitted inputs for the data-dependent modes.
struct StateArtifacts {
  std::vector<std::string> ml_subset;  // from select_state_features, ordered
  Projection projection;
};

// full / tide / ml_subset reindex the feature battery. Requesting ml_subset
// without a stored subset, or blackbox through this overload, throws
// ConfigError.
StateRep state_representation(const cgm::ClinicalFeatures& f, StateMode mode,
                              const StateArtifacts* artifacts = nullptr);

// blackbox: projects the window ending at day_index.
StateRep state_representation(const cgm::CgmTrace& trace, int day_index,
                              const Projection& projection);

std::vector<std::string> state_feature_names(StateMode mode, const StateArtifacts& artifacts);

// One state row per entry of `rows` (indices into panel.rows), in order.
Matrix state_matrix(const sim::LoggedPanel& panel, const std::vector<std::size_t>& rows,
                    StateMode mode, const StateArtifacts& artifacts);

// Permutation importance of the full battery for predicting the logged
// rewards: fit a boosted regressor, then rank features by the MSE increase
// when their column is shuffled. Returns top_k names, most important first;
// deterministic given seed.
std::vector<std::string> select_state_features(const sim::LoggedPanel& panel,
                                               const std::vector<std::size_t>& rows,
                                               int top_k = 14, std::uint64_t seed = 0);

// Boolean rules over the message labels; assumes a message was sent.
ActionClass clinical_rules_class(const MessageLabels& labels);

// phi(control) = 0; every message goes through the boolean rules.
ActionClass clinical_action_class(const RawAction& action);

struct KMeansModel {
  Matrix centroids;  // k x dim
  std::uint64_t seed = 0;
  double inertia = 0;               // with the final centroids
  std::vector<double> inertia_path;  // per Lloyd iteration, pre-update

  int k() const { return centroids.rows; }
};

// k-means++ seeding, Lloyd's algorithm with at most 50 iterations, stopping
// when the largest centroid shift drops below 1e-6. The caller excludes
// control rows from `embeddings`.
KMeansModel fit_kmeans(const Matrix& embeddings, int k, std::uint64_t seed);

// Nearest centroid by Euclidean distance, ties to the lowest index.
int assign_cluster(const KMeansModel& model, std::span<const double> embedding);

// Cluster ids shift to 1..k so control keeps class 0.
int kmeans_action_class(const KMeansModel& model, const RawAction& action);

}  // namespace tir::rep
