#include "tirtarget/serialize.hpp"

#include <fstream>
#include <sstream>

#include "tirtarget/errors.hpp"

namespace tir::learn {

namespace {

using nlohmann::json;

void require_version(const json& j, const char* kind) {
  if (!j.is_object() || j.value("kind", std::string()) != kind) {
    throw ConfigError(std::string("artifact is not a '") + kind + "'");
  }
  if (j.value("format_version", -1) != ModelCodec::kFormatVersion) {
    throw ConfigError("unsupported artifact format version");
  }
}

json encode_tree(const boost::Tree& tree) {
  json nodes = json::array();
  for (const auto& n : tree.nodes) {
    nodes.push_back({n.feature, static_cast<int>(n.split_bin), n.threshold, n.value, n.left,
                     n.right});
  }
  return nodes;
}

boost::Tree decode_tree(const json& j) {
  boost::Tree tree;
  for (const auto& n : j) {
    boost::TreeNode node;
    node.feature = n.at(0).get<int>();
    node.split_bin = static_cast<std::uint8_t>(n.at(1).get<int>());
    node.threshold = n.at(2).get<double>();
    node.value = n.at(3).get<double>();
    node.left = n.at(4).get<int>();
    node.right = n.at(5).get<int>();
    tree.nodes.push_back(node);
  }
  return tree;
}

json encode_forest_tree(const forest::ForestTree& tree) {
  json nodes = json::array();
  for (const auto& n : tree.nodes) {
    nodes.push_back({n.feature, n.threshold, n.value, n.left, n.right});
  }
  return nodes;
}

forest::ForestTree decode_forest_tree(const json& j) {
  forest::ForestTree tree;
  for (const auto& n : j) {
    forest::ForestNode node;
    node.feature = n.at(0).get<int>();
    node.threshold = n.at(1).get<double>();
    node.value = n.at(2).get<double>();
    node.left = n.at(3).get<int>();
    node.right = n.at(4).get<int>();
    tree.nodes.push_back(node);
  }
  return tree;
}

template <typename Fn>
auto guarded(const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed ") + what + " artifact: " + e.what());
  }
}

}  // namespace

json ModelCodec::encode(const boost::Regressor& model) {
  json j;
  j["kind"] = "regressor";
  j["format_version"] = kFormatVersion;
  j["base_score"] = model.base_score;
  j["learning_rate"] = model.learning_rate;
  j["loss"] = model.loss == boost::Loss::squared ? "squared" : "logistic";
  j["bins"] = model.mapper.upper_bounds;
  j["chosen"] = {model.chosen.n_trees, model.chosen.max_depth, model.chosen.learning_rate};
  json trees = json::array();
  for (const auto& t : model.trees) trees.push_back(encode_tree(t));
  j["trees"] = std::move(trees);
  return j;
}

boost::Regressor ModelCodec::decode_regressor(const json& j) {
  require_version(j, "regressor");
  return guarded("regressor", [&] {
    boost::Regressor model;
    model.base_score = j.at("base_score").get<double>();
    model.learning_rate = j.at("learning_rate").get<double>();
    model.loss =
        j.at("loss").get<std::string>() == "squared" ? boost::Loss::squared : boost::Loss::logistic;
    model.mapper.upper_bounds = j.at("bins").get<std::vector<std::vector<double>>>();
    model.chosen.n_trees = j.at("chosen").at(0).get<int>();
    model.chosen.max_depth = j.at("chosen").at(1).get<int>();
    model.chosen.learning_rate = j.at("chosen").at(2).get<double>();
    for (const auto& t : j.at("trees")) model.trees.push_back(decode_tree(t));
    return model;
  });
}

json ModelCodec::encode(const forest::HonestForest& model) {
  json j;
  j["kind"] = "honest_forest";
  j["format_version"] = kFormatVersion;
  j["leaf_kind"] = model.kind == forest::LeafKind::regression ? "regression" : "causal";
  json trees = json::array();
  for (const auto& t : model.trees) trees.push_back(encode_forest_tree(t));
  j["trees"] = std::move(trees);
  return j;
}

forest::HonestForest ModelCodec::decode_forest(const json& j) {
  require_version(j, "honest_forest");
  return guarded("honest_forest", [&] {
    forest::HonestForest model;
    model.kind = j.at("leaf_kind").get<std::string>() == "regression"
                     ? forest::LeafKind::regression
                     : forest::LeafKind::causal;
    for (const auto& t : j.at("trees")) model.trees.push_back(decode_forest_tree(t));
    return model;
  });
}

json ModelCodec::encode(const nuisance::OutcomeModel& model) {
  json j;
  j["kind"] = "outcome_model";
  j["format_version"] = kFormatVersion;
  j["n_classes"] = model.n_classes;
  j["model"] = encode(model.model);
  return j;
}

nuisance::OutcomeModel ModelCodec::decode_outcome(const json& j) {
  require_version(j, "outcome_model");
  return guarded("outcome_model", [&] {
    nuisance::OutcomeModel model;
    model.n_classes = j.at("n_classes").get<int>();
    model.model = decode_regressor(j.at("model"));
    return model;
  });
}

json ModelCodec::encode(const nuisance::PropensityModel& model) {
  json j;
  j["kind"] = "propensity_model";
  j["format_version"] = kFormatVersion;
  j["n_classes"] = model.n_classes;
  j["clip_floor"] = model.clip_floor;
  json per_class = json::array();
  for (const auto& m : model.per_class) per_class.push_back(encode(m));
  j["per_class"] = std::move(per_class);
  return j;
}

nuisance::PropensityModel ModelCodec::decode_propensity(const json& j) {
  require_version(j, "propensity_model");
  return guarded("propensity_model", [&] {
    nuisance::PropensityModel model;
    model.n_classes = j.at("n_classes").get<int>();
    model.clip_floor = j.at("clip_floor").get<double>();
    for (const auto& m : j.at("per_class")) model.per_class.push_back(decode_regressor(m));
    return model;
  });
}

json ModelCodec::encode(const CateModel& model) {
  json j;
  j["kind"] = "cate_model";
  j["format_version"] = kFormatVersion;
  j["method"] = method_name(model.method());
  j["n_classes"] = model.n_classes();
  switch (model.method()) {
    case Method::s_learner: {
      const auto& m = dynamic_cast<const SLearnerModel&>(model);
      j["model"] = encode(m.model_);
      break;
    }
    case Method::t_learner: {
      const auto& m = dynamic_cast<const TLearnerModel&>(model);
      json arr = json::array();
      for (const auto& r : m.per_action_) arr.push_back(encode(r));
      j["per_action"] = std::move(arr);
      break;
    }
    case Method::x_learner: {
      const auto& m = dynamic_cast<const XLearnerModel&>(model);
      json treated = json::array();
      json control = json::array();
      for (const auto& r : m.g_treated_) treated.push_back(encode(r));
      for (const auto& r : m.g_control_) control.push_back(encode(r));
      j["g_treated"] = std::move(treated);
      j["g_control"] = std::move(control);
      j["control_propensity"] = encode(m.control_propensity_);
      j["floor"] = m.floor_;
      break;
    }
    case Method::causal_forest: {
      const auto& m = dynamic_cast<const CausalForestModel&>(model);
      json arr = json::array();
      for (const auto& f : m.per_action_) arr.push_back(encode(f));
      j["per_action"] = std::move(arr);
      break;
    }
    case Method::dr_forest: {
      const auto& m = dynamic_cast<const DrForestModel&>(model);
      json arr = json::array();
      for (const auto& f : m.per_action_) arr.push_back(encode(f));
      j["per_action"] = std::move(arr);
      j["target_means"] = m.target_means_;
      j["outcome"] = encode(m.outcome_);
      j["propensity"] = encode(m.propensity_);
      break;
    }
    case Method::ensemble: {
      const auto& m = dynamic_cast<const EnsembleModel&>(model);
      json arr = json::array();
      for (const auto& c : m.candidates_) arr.push_back(encode(*c));
      j["candidates"] = std::move(arr);
      j["weights"] = m.weights_;
      break;
    }
  }
  return j;
}

std::unique_ptr<CateModel> ModelCodec::decode(const json& j) {
  require_version(j, "cate_model");
  return guarded("cate_model", [&]() -> std::unique_ptr<CateModel> {
    const Method method = method_from_name(j.at("method").get<std::string>());
    const int n_classes = j.at("n_classes").get<int>();
    switch (method) {
      case Method::s_learner:
        return std::make_unique<SLearnerModel>(n_classes, decode_regressor(j.at("model")));
      case Method::t_learner: {
        std::vector<boost::Regressor> per_action;
        for (const auto& r : j.at("per_action")) per_action.push_back(decode_regressor(r));
        return std::make_unique<TLearnerModel>(n_classes, std::move(per_action));
      }
      case Method::x_learner: {
        std::vector<boost::Regressor> treated;
        std::vector<boost::Regressor> control;
        for (const auto& r : j.at("g_treated")) treated.push_back(decode_regressor(r));
        for (const auto& r : j.at("g_control")) control.push_back(decode_regressor(r));
        return std::make_unique<XLearnerModel>(n_classes, std::move(treated), std::move(control),
                                               decode_regressor(j.at("control_propensity")),
                                               j.at("floor").get<double>());
      }
      case Method::causal_forest: {
        std::vector<forest::HonestForest> per_action;
        for (const auto& f : j.at("per_action")) per_action.push_back(decode_forest(f));
        return std::make_unique<CausalForestModel>(n_classes, std::move(per_action));
      }
      case Method::dr_forest: {
        std::vector<forest::HonestForest> per_action;
        for (const auto& f : j.at("per_action")) per_action.push_back(decode_forest(f));
        return std::make_unique<DrForestModel>(
            n_classes, std::move(per_action), j.at("target_means").get<std::vector<double>>(),
            decode_outcome(j.at("outcome")), decode_propensity(j.at("propensity")));
      }
      case Method::ensemble: {
        std::vector<std::shared_ptr<const CateModel>> candidates;
        for (const auto& c : j.at("candidates")) candidates.emplace_back(decode(c));
        return std::make_unique<EnsembleModel>(n_classes, std::move(candidates),
                                               j.at("weights").get<std::vector<double>>());
      }
    }
    throw ConfigError("unknown cate method in artifact");
  });
}

}  // namespace tir::learn

namespace tir::io {

using nlohmann::json;
using learn::ModelCodec;

namespace {

void require_kind(const json& j, const char* kind) {
  if (!j.is_object() || j.value("kind", std::string()) != kind) {
    throw ConfigError(std::string("artifact is not a '") + kind + "'");
  }
  if (j.value("format_version", -1) != ModelCodec::kFormatVersion) {
    throw ConfigError("unsupported artifact format version");
  }
}

}  // namespace

json encode(const Matrix& m) {
  return {{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

Matrix decode_matrix(const json& j) {
  Matrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
  m.data = j.at("data").get<std::vector<double>>();
  if (m.data.size() != static_cast<std::size_t>(m.rows) * static_cast<std::size_t>(m.cols)) {
    throw ConfigError("matrix artifact has inconsistent shape");
  }
  return m;
}

json encode(const rep::Projection& projection) {
  json j;
  j["kind"] = "projection";
  j["format_version"] = ModelCodec::kFormatVersion;
  j["out_dim"] = projection.out_dim;
  j["seed"] = projection.seed;
  j["weights"] = encode(projection.weights);
  return j;
}

rep::Projection decode_projection(const json& j) {
  require_kind(j, "projection");
  rep::Projection p;
  p.out_dim = j.at("out_dim").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.weights = decode_matrix(j.at("weights"));
  return p;
}

json encode(const rep::KMeansModel& model) {
  json j;
  j["kind"] = "kmeans";
  j["format_version"] = ModelCodec::kFormatVersion;
  j["seed"] = model.seed;
  j["inertia"] = model.inertia;
  j["inertia_path"] = model.inertia_path;
  j["centroids"] = encode(model.centroids);
  return j;
}

rep::KMeansModel decode_kmeans(const json& j) {
  require_kind(j, "kmeans");
  rep::KMeansModel m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.inertia = j.at("inertia").get<double>();
  m.inertia_path = j.at("inertia_path").get<std::vector<double>>();
  m.centroids = decode_matrix(j.at("centroids"));
  return m;
}

json encode(const rep::StateArtifacts& artifacts) {
  json j;
  j["kind"] = "state_artifacts";
  j["format_version"] = ModelCodec::kFormatVersion;
  j["ml_subset"] = artifacts.ml_subset;
  j["projection"] =
      artifacts.projection.out_dim > 0 ? encode(artifacts.projection) : json(nullptr);
  return j;
}

rep::StateArtifacts decode_state_artifacts(const json& j) {
  require_kind(j, "state_artifacts");
  rep::StateArtifacts a;
  a.ml_subset = j.at("ml_subset").get<std::vector<std::string>>();
  if (!j.at("projection").is_null()) a.projection = decode_projection(j.at("projection"));
  return a;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw ConfigError("failed writing '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace tir::io
