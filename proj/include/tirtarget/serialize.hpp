#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "tirtarget/learners.hpp"
#include "tirtarget/representations.hpp"

namespace tir::learn {

// Versioned JSON encoding for every fitted model kind. Trees are nested
// arrays; doubles round-trip exactly, so decoded models predict bitwise
// identically. Malformed or version-mismatched JSON throws ConfigError.
struct ModelCodec {
  static constexpr int kFormatVersion = 1;

  static nlohmann::json encode(const boost::Regressor& model);
  static boost::Regressor decode_regressor(const nlohmann::json& j);

  static nlohmann::json encode(const forest::HonestForest& model);
  static forest::HonestForest decode_forest(const nlohmann::json& j);

  static nlohmann::json encode(const nuisance::OutcomeModel& model);
  static nuisance::OutcomeModel decode_outcome(const nlohmann::json& j);

  static nlohmann::json encode(const nuisance::PropensityModel& model);
  static nuisance::PropensityModel decode_propensity(const nlohmann::json& j);

  static nlohmann::json encode(const CateModel& model);
  static std::unique_ptr<CateModel> decode(const nlohmann::json& j);
};

}  // namespace tir::learn

namespace tir::io {

nlohmann::json encode(const Matrix& m);
Matrix decode_matrix(const nlohmann::json& j);

nlohmann::json encode(const rep::Projection& projection);
rep::Projection decode_projection(const nlohmann::json& j);

nlohmann::json encode(const rep::KMeansModel& model);
rep::KMeansModel decode_kmeans(const nlohmann::json& j);

nlohmann::json encode(const rep::StateArtifacts& artifacts);
rep::StateArtifacts decode_state_artifacts(const nlohmann::json& j);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace tir::io
