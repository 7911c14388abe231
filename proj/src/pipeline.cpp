#include "tirtarget/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <utility>

#include "tirtarget/errors.hpp"
#include "tirtarget/policy.hpp"
#include "tirtarget/rng.hpp"
#include "tirtarget/serialize.hpp"

namespace tir::pipeline {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kArtifactVersion = 1;
constexpr int kTocGridSize = 20;

const std::vector<std::string> kSliceFeatures = {"in_range_7dr", "in_range_7dr_7d_delta",
                                                 "g_7dr", "using_pump"};

std::uint64_t fnv64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---- config (de)serialization -------------------------------------------

const char* effect_kind_name(sim::EffectSpec::Kind kind) {
  switch (kind) {
    case sim::EffectSpec::Kind::formula:
      return "formula";
    case sim::EffectSpec::Kind::constant_per_action:
      return "constant_per_action";
    case sim::EffectSpec::Kind::step_high:
      return "step_high";
  }
  throw ConfigError("unknown effect kind");
}

sim::EffectSpec::Kind effect_kind_from_name(const std::string& name) {
  if (name == "formula") return sim::EffectSpec::Kind::formula;
  if (name == "constant_per_action") return sim::EffectSpec::Kind::constant_per_action;
  if (name == "step_high") return sim::EffectSpec::Kind::step_high;
  throw ConfigError("unknown effect kind: " + name);
}

json encode_sim(const sim::SimConfig& c) {
  json effect{{"kind", effect_kind_name(c.effect.kind)},
              {"c_highs", c.effect.c_highs},
              {"c_lows", c.effect.c_lows},
              {"c_other", c.effect.c_other},
              {"constants", c.effect.constants},
              {"step_value", c.effect.step_value},
              {"step_threshold", c.effect.step_threshold}};
  return json{{"seed", c.seed},
              {"n_patients", c.n_patients},
              {"days", c.days},
              {"confounding_strength", c.confounding_strength},
              {"message_bias", c.message_bias},
              {"propensity_floor", c.propensity_floor},
              {"reward_noise_sd", c.reward_noise_sd},
              {"rtm_coef", c.rtm_coef},
              {"lockout_days", c.lockout_days},
              {"min_wear", c.min_wear},
              {"embedding_noise_sd", c.embedding_noise_sd},
              {"embedding_signal", c.embedding_signal},
              {"effect", effect}};
}

sim::SimConfig decode_sim(const json& j) {
  sim::SimConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.n_patients = j.at("n_patients").get<int>();
  c.days = j.at("days").get<int>();
  c.confounding_strength = j.at("confounding_strength").get<double>();
  c.message_bias = j.at("message_bias").get<double>();
  c.propensity_floor = j.at("propensity_floor").get<double>();
  c.reward_noise_sd = j.at("reward_noise_sd").get<double>();
  c.rtm_coef = j.at("rtm_coef").get<double>();
  c.lockout_days = j.at("lockout_days").get<int>();
  c.min_wear = j.at("min_wear").get<double>();
  c.embedding_noise_sd = j.at("embedding_noise_sd").get<double>();
  c.embedding_signal = j.at("embedding_signal").get<double>();
  const json& e = j.at("effect");
  c.effect.kind = effect_kind_from_name(e.at("kind").get<std::string>());
  c.effect.c_highs = e.at("c_highs").get<double>();
  c.effect.c_lows = e.at("c_lows").get<double>();
  c.effect.c_other = e.at("c_other").get<double>();
  const auto constants = e.at("constants").get<std::vector<double>>();
  if (constants.size() != kNumActionClasses) throw ConfigError("effect constants need 5 entries");
  std::copy(constants.begin(), constants.end(), c.effect.constants.begin());
  c.effect.step_value = e.at("step_value").get<double>();
  c.effect.step_threshold = e.at("step_threshold").get<double>();
  return c;
}

// Requested capacity ratios must sit on the canonical 20-point grid so they
// can be read off the computed curve.
int ratio_grid_index(double ratio) {
  const int idx = static_cast<int>(std::lround(ratio * kTocGridSize)) - 1;
  if (idx < 0 || idx >= kTocGridSize ||
      std::abs(ratio - static_cast<double>(idx + 1) / kTocGridSize) > 1e-9) {
    throw ConfigError("kn_grid ratio " + fmt_num(ratio) + " is not a multiple of 0.05 in (0, 1]");
  }
  return idx;
}

// ---- artifact files -------------------------------------------------------

json read_json_file(const fs::path& path) {
  try {
    return json::parse(io::read_text(path.string()));
  } catch (const json::exception& e) {
    throw ConfigError("malformed artifact " + path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  io::write_text(path.string(), j.dump(2) + "\n");
}

void write_text_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  io::write_text(path.string(), text);
}

void need_kind(const json& j, const std::string& kind, const fs::path& path) {
  if (!j.is_object() || j.value("kind", "") != kind ||
      j.value("format_version", -1) != kArtifactVersion) {
    throw ConfigError(path.string() + " is not a version-" + std::to_string(kArtifactVersion) +
                      " " + kind + " artifact");
  }
}

// Loads a cached artifact when its digest matches; returns a null json when
// the artifact is missing or stale.
json load_cached(const fs::path& path, const std::string& kind, const std::string& digest) {
  if (!fs::exists(path)) return json();
  const json j = read_json_file(path);
  need_kind(j, kind, path);
  if (j.value("digest", "") != digest) return json();
  return j;
}

json require_artifact(const fs::path& path, const std::string& kind, const std::string& digest,
                      const std::string& producer) {
  if (!fs::exists(path)) {
    throw ConfigError("missing " + path.string() + "; run the " + producer + " stage first");
  }
  const json j = read_json_file(path);
  need_kind(j, kind, path);
  if (j.value("digest", "") != digest) {
    throw ConfigError(path.string() + " was produced by a different config; rerun " + producer);
  }
  return j;
}

// ---- stage-scoped digests -------------------------------------------------
// Each artifact is keyed by a digest over exactly the config fields it
// depends on, so editing e.g. the bootstrap size never invalidates the panel.

json learner_point_key(const boost::GridPoint& p) {
  return json{{"n_trees", p.n_trees}, {"max_depth", p.max_depth}, {"learning_rate", p.learning_rate}};
}

json panel_key(const RunConfig& c) { return encode_sim(c.sim); }

json frame_key(const RunConfig& c) {
  return json{{"panel", panel_key(c)}, {"history_weeks", c.history_weeks}};
}

json split_key(const RunConfig& c) {
  return json{{"n_patients", c.sim.n_patients}, {"seed", c.split_seed}};
}

json state_key(const RunConfig& c, rep::StateMode mode) {
  json j{{"frame", frame_key(c)},
         {"split", split_key(c)},
         {"fit_seed", c.fit_seed},
         {"mode", rep::state_mode_name(mode)}};
  if (mode == rep::StateMode::ml_subset) j["ml_top_k"] = c.ml_top_k;
  if (mode == rep::StateMode::blackbox) j["blackbox_dim"] = c.blackbox_dim;
  return j;
}

json scheme_key(const RunConfig& c, rep::ActionScheme scheme) {
  json j{{"frame", frame_key(c)},
         {"split", split_key(c)},
         {"fit_seed", c.fit_seed},
         {"scheme", rep::action_scheme_name(scheme)}};
  if (scheme == rep::ActionScheme::kmeans) j["kmeans_k"] = c.kmeans_k;
  return j;
}

json cell_key(const RunConfig& c, const CellSpec& cell) {
  json j{{"state", state_key(c, cell.state)},
         {"scheme", scheme_key(c, cell.scheme)},
         {"method", learn::method_name(cell.method)},
         {"learner", learner_point_key(c.learner_point)}};
  // The ensemble stacks the other configured methods on validation DR scores,
  // so its fit depends on them and on the evaluation row selection.
  if (cell.method == learn::Method::ensemble) {
    json base = json::array();
    for (const auto m : c.methods) {
      if (m != learn::Method::ensemble) base.push_back(learn::method_name(m));
    }
    j["base_methods"] = base;
    j["day_stride"] = c.day_stride;
  }
  return j;
}

json eval_key(const RunConfig& c, const CellSpec& cell) {
  return json{{"cell", cell_key(c, cell)},
              {"day_stride", c.day_stride},
              {"bootstrap_B", c.bootstrap_B},
              {"level", c.level},
              {"eval_seed", c.eval_seed}};
}

std::string digest_of(const json& key) {
  return fnv64_hex(key.dump());
}

// ---- paths ----------------------------------------------------------------

struct Paths {
  fs::path out;

  fs::path config() const { return out / "config.json"; }
  fs::path panel() const { return out / "panel.json"; }
  fs::path frame() const { return out / "frame.json"; }
  fs::path split() const { return out / "split.json"; }
  fs::path state_dir(rep::StateMode m) const { return out / "states" / rep::state_mode_name(m); }
  fs::path state(rep::StateMode m) const { return state_dir(m) / "artifacts.json"; }
  fs::path scheme_dir(rep::ActionScheme s) const {
    return out / "schemes" / rep::action_scheme_name(s);
  }
  fs::path scheme(rep::ActionScheme s) const { return scheme_dir(s) / "nuisance.json"; }
  fs::path cell_dir(const CellSpec& c) const { return out / "cells" / c.name(); }
  fs::path model(const CellSpec& c) const { return cell_dir(c) / "model.json"; }
  fs::path validation(const CellSpec& c) const { return cell_dir(c) / "validation.json"; }
  fs::path validation_csv(const CellSpec& c) const { return cell_dir(c) / "validation.csv"; }
  fs::path validation_svg(const CellSpec& c) const { return cell_dir(c) / "validation.svg"; }
  fs::path run_report() const { return out / "run_report.json"; }
};

// ---- shared stage context ---------------------------------------------

sim::LoggedPanel load_panel(const RunConfig& config, const Paths& paths) {
  const std::string digest = digest_of(panel_key(config));
  const json j = require_artifact(paths.panel(), "panel", digest, "simulate");
  sim::LoggedPanel panel = sim::simulate_panel(decode_sim(j.at("sim")));
  if (static_cast<long>(panel.rows.size()) != j.at("n_rows").get<long>()) {
    throw ConfigError("panel.json row count does not match the regenerated panel");
  }
  return panel;
}

json encode_frame(const eval::ControlFrame& f) {
  return json{{"column_names", f.column_names},
              {"x", io::encode(f.X)},
              {"patient_ids", f.patient_ids},
              {"days", f.days},
              {"actions", f.actions},
              {"rewards", f.rewards},
              {"panel_row", f.panel_row},
              {"dropped_rows", f.dropped_rows},
              {"history_weeks", f.history_weeks}};
}

eval::ControlFrame decode_frame(const json& j) {
  eval::ControlFrame f;
  f.column_names = j.at("column_names").get<std::vector<std::string>>();
  f.X = io::decode_matrix(j.at("x"));
  f.patient_ids = j.at("patient_ids").get<std::vector<int>>();
  f.days = j.at("days").get<std::vector<int>>();
  f.actions = j.at("actions").get<std::vector<int>>();
  f.rewards = j.at("rewards").get<std::vector<double>>();
  f.panel_row = j.at("panel_row").get<std::vector<std::size_t>>();
  f.dropped_rows = j.at("dropped_rows").get<long>();
  f.history_weeks = j.at("history_weeks").get<int>();
  return f;
}

eval::ControlFrame load_frame(const RunConfig& config, const Paths& paths) {
  const json j =
      require_artifact(paths.frame(), "control_frame", digest_of(frame_key(config)), "featurize");
  return decode_frame(j.at("frame"));
}

eval::SplitIndex load_split(const RunConfig& config, const Paths& paths) {
  const json j = require_artifact(paths.split(), "split", digest_of(split_key(config)), "split");
  eval::SplitIndex split;
  split.train = j.at("train").get<std::vector<int>>();
  split.validation = j.at("validation").get<std::vector<int>>();
  split.test = j.at("test").get<std::vector<int>>();
  return split;
}

rep::StateArtifacts load_state(const RunConfig& config, const Paths& paths, rep::StateMode mode) {
  const json j = require_artifact(paths.state(mode), "state_artifacts",
                                  digest_of(state_key(config, mode)), "fit");
  return io::decode_state_artifacts(j.at("artifacts"));
}

// Everything an evaluation needs about one action representation.
struct SchemeContext {
  rep::ActionScheme scheme = rep::ActionScheme::clinical_rules;
  int n_classes = kNumActionClasses;
  std::vector<int> class_to_true;  // scheme class -> simulator class, for oracle lookups
  rep::KMeansModel kmeans;
  nuisance::PropensityModel propensity;
  nuisance::OutcomeModel outcome;
};

SchemeContext load_scheme(const RunConfig& config, const Paths& paths, rep::ActionScheme scheme) {
  const json j = require_artifact(paths.scheme(scheme), "scheme_nuisance",
                                  digest_of(scheme_key(config, scheme)), "fit");
  SchemeContext sc;
  sc.scheme = scheme;
  sc.n_classes = j.at("n_classes").get<int>();
  sc.class_to_true = j.at("class_to_true").get<std::vector<int>>();
  if (!j.at("kmeans").is_null()) sc.kmeans = io::decode_kmeans(j.at("kmeans"));
  sc.propensity = learn::ModelCodec::decode_propensity(j.at("propensity"));
  sc.outcome = learn::ModelCodec::decode_outcome(j.at("outcome"));
  return sc;
}

// Per-frame-row action ids in the scheme's class space.
std::vector<int> scheme_actions(const SchemeContext& sc, const sim::LoggedPanel& panel,
                                const eval::ControlFrame& frame) {
  std::vector<int> actions(frame.actions.size());
  for (std::size_t i = 0; i < frame.actions.size(); ++i) {
    if (sc.scheme == rep::ActionScheme::clinical_rules) {
      actions[i] = frame.actions[i];
    } else {
      actions[i] = rep::kmeans_action_class(sc.kmeans, panel.rows[frame.panel_row[i]].action);
    }
  }
  return actions;
}

std::vector<std::size_t> panel_rows_of(const eval::ControlFrame& frame,
                                       const std::vector<std::size_t>& frame_rows) {
  std::vector<std::size_t> rows;
  rows.reserve(frame_rows.size());
  for (const std::size_t r : frame_rows) rows.push_back(frame.panel_row[r]);
  return rows;
}

// Day-subsampled evaluation rows for one patient subset.
std::vector<std::size_t> eval_rows_for(const eval::ControlFrame& frame,
                                       const std::vector<int>& patients, int stride) {
  const auto by_patient = eval::rows_for_patients(frame, patients);
  const auto by_day = eval::rows_every_kth_day(frame, stride);
  std::vector<std::size_t> rows;
  std::set_intersection(by_patient.begin(), by_patient.end(), by_day.begin(), by_day.end(),
                        std::back_inserter(rows));
  return rows;
}

std::uint64_t name_stream(const std::string& name) { return fnv64(name); }

int resolve_workers(const RunConfig& config) {
  if (config.workers > 0) return config.workers;
  if (const char* env = std::getenv("TIRTARGET_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

// Runs fn(0..n-1) on up to `workers` threads; rethrows the first failure.
void run_parallel(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t pool_size = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  if (pool_size <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < pool_size; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

template <typename Fn>
auto stage_guard(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

// ---- cell fitting helpers ---------------------------------------------

learn::LearnerConfig make_learner_config(const RunConfig& config) {
  learn::LearnerConfig lcfg;
  lcfg.regressor.grid = {config.learner_point};
  return lcfg;
}

learn::TrainData cell_train_data(const sim::LoggedPanel& panel, const eval::ControlFrame& frame,
                                 const std::vector<std::size_t>& train_rows,
                                 const std::vector<int>& actions_all, const CellSpec& cell,
                                 const rep::StateArtifacts& artifacts) {
  learn::TrainData data;
  data.S = rep::state_matrix(panel, panel_rows_of(frame, train_rows), cell.state, artifacts);
  data.actions.reserve(train_rows.size());
  data.rewards.reserve(train_rows.size());
  for (const std::size_t r : train_rows) {
    data.actions.push_back(actions_all[r]);
    data.rewards.push_back(frame.rewards[r]);
  }
  return data;
}

// DR scores for one scheme on one row subset, plus the tau-hat design inputs.
struct EvalSlice {
  eval::ControlFrame frame;           // selected rows, actions in scheme space
  eval::DrScoreTable table;
  std::vector<std::size_t> panel_rows;
};

EvalSlice make_eval_slice(const sim::LoggedPanel& panel, const eval::ControlFrame& frame,
                          const SchemeContext& sc, const std::vector<std::size_t>& rows,
                          const char* what) {
  if (rows.empty()) {
    throw InconsistentInputError(std::string("no evaluation rows for ") + what);
  }
  EvalSlice slice;
  slice.frame = eval::select_rows(frame, rows);
  slice.frame.actions = scheme_actions(sc, panel, slice.frame);
  slice.panel_rows = slice.frame.panel_row;
  slice.table = eval::dr_scores(slice.frame, eval::outcome_fn(sc.outcome, slice.frame),
                                eval::propensity_fn(sc.propensity, slice.frame));
  return slice;
}

Matrix tau_matrix(const learn::CateModel& model, const Matrix& S) {
  Matrix tau(S.rows, model.n_classes());
  for (int i = 0; i < S.rows; ++i) {
    const auto row = model.predict_all(S.row(i));
    for (int a = 0; a < model.n_classes(); ++a) tau.at(i, a) = row[static_cast<std::size_t>(a)];
  }
  return tau;
}

// Oracle regret of the induced policy at capacity K, both sides evaluated on
// the same rows with the hidden effects. Scheme classes are translated to
// simulator classes before the oracle lookup.
double cell_oracle_regret(const sim::LoggedPanel& panel, const EvalSlice& slice, const Matrix& tau,
                          const std::vector<int>& class_to_true, int K) {
  std::vector<int> ids;
  std::map<int, int> dense;
  for (const int pid : slice.frame.patient_ids) {
    if (dense.emplace(pid, 0).second) ids.push_back(pid);
  }
  std::sort(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) dense[ids[i]] = static_cast<int>(i);

  const int n = static_cast<int>(ids.size());
  Matrix summed_tau(n, tau.cols);
  Matrix summed_true(n, kNumActionClasses);
  for (int r = 0; r < tau.rows; ++r) {
    const int i = dense[slice.frame.patient_ids[static_cast<std::size_t>(r)]];
    for (int a = 0; a < tau.cols; ++a) summed_tau.at(i, a) += tau.at(r, a);
    const auto& effects = panel.rows[slice.panel_rows[static_cast<std::size_t>(r)]].oracle.effects;
    for (int a = 0; a < static_cast<int>(kNumActionClasses); ++a) {
      summed_true.at(i, a) += effects[static_cast<std::size_t>(a)];
    }
  }

  sim::LoggedPanel eval_panel;
  eval_panel.config = panel.config;
  eval_panel.cohort = panel.cohort;
  for (const std::size_t r : slice.panel_rows) eval_panel.rows.push_back(panel.rows[r]);

  const auto induced = policy::induce_policy(summed_tau, ids, K);
  std::vector<ActionClass> induced_actions(panel.cohort.size(), ActionClass::control);
  for (const auto& entry : induced.entries) {
    if (entry.action == 0) continue;
    induced_actions[static_cast<std::size_t>(entry.patient_id)] =
        action_class_from_int(class_to_true[static_cast<std::size_t>(entry.action)]);
  }
  const auto optimal = policy::optimal_policy(summed_true, ids, K);
  const auto optimal_actions = policy::to_action_vector(optimal, static_cast<int>(panel.cohort.size()));

  return sim::oracle_att(eval_panel, optimal_actions, K) -
         sim::oracle_att(eval_panel, induced_actions, K);
}

// ---- toc/cell result (de)serialization ----------------------------------

json encode_interval(const eval::Interval& iv) { return json{{"lo", iv.lo}, {"hi", iv.hi}}; }

eval::Interval decode_interval(const json& j) {
  return {j.at("lo").get<double>(), j.at("hi").get<double>()};
}

json encode_cell_spec(const CellSpec& cell) {
  return json{{"state", rep::state_mode_name(cell.state)},
              {"scheme", rep::action_scheme_name(cell.scheme)},
              {"method", learn::method_name(cell.method)}};
}

CellSpec decode_cell_spec(const json& j) {
  CellSpec cell;
  cell.state = rep::state_mode_from_name(j.at("state").get<std::string>());
  cell.scheme = rep::action_scheme_from_name(j.at("scheme").get<std::string>());
  cell.method = learn::method_from_name(j.at("method").get<std::string>());
  return cell;
}

json encode_cell_result(const CellResult& r, const std::string& digest, const std::string& split) {
  return json{{"kind", "cell_eval"},
              {"format_version", kArtifactVersion},
              {"digest", digest},
              {"cell", encode_cell_spec(r.spec)},
              {"split", split},
              {"n_train_rows", r.n_train_rows},
              {"n_eval_rows", r.n_eval_rows},
              {"oracle_regret", r.oracle_regret},
              {"toc", encode_toc(r.toc)},
              {"splits_read", json::array({split})}};
}

CellResult decode_cell_result(const json& j) {
  CellResult r;
  r.spec = decode_cell_spec(j.at("cell"));
  r.n_train_rows = j.at("n_train_rows").get<int>();
  r.n_eval_rows = j.at("n_eval_rows").get<int>();
  r.oracle_regret = j.at("oracle_regret").get<double>();
  r.toc = decode_toc(j.at("toc"));
  return r;
}

// ---- svg ------------------------------------------------------------------

struct Canvas {
  double width = 640, height = 420;
  double left = 70, right = 610, top = 46, bottom = 370;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;

  double sx(double x) const { return left + (x - x_min) / (x_max - x_min) * (right - left); }
  double sy(double y) const { return bottom - (y - y_min) / (y_max - y_min) * (bottom - top); }
};

void pad_y_range(Canvas& canvas) {
  if (canvas.y_max <= canvas.y_min) {
    canvas.y_min -= 0.5;
    canvas.y_max += 0.5;
  }
  const double pad = 0.08 * (canvas.y_max - canvas.y_min);
  canvas.y_min -= pad;
  canvas.y_max += pad;
}

std::string svg_open(const Canvas& c, const std::string& title) {
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt_num(c.width) + "\" height=\"" +
       fmt_num(c.height) + "\" viewBox=\"0 0 " + fmt_num(c.width) + " " + fmt_num(c.height) +
       "\" font-family=\"sans-serif\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt_num((c.left + c.right) / 2) +
       "\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">" + title + "</text>\n";
  return s;
}

void svg_axes(std::string& s, const Canvas& c, const std::string& x_label,
              const std::string& y_label) {
  s += "<line x1=\"" + fmt_num(c.left) + "\" y1=\"" + fmt_num(c.bottom) + "\" x2=\"" +
       fmt_num(c.right) + "\" y2=\"" + fmt_num(c.bottom) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt_num(c.left) + "\" y1=\"" + fmt_num(c.top) + "\" x2=\"" +
       fmt_num(c.left) + "\" y2=\"" + fmt_num(c.bottom) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = c.y_min + (c.y_max - c.y_min) * i / 4.0;
    s += "<line x1=\"" + fmt_num(c.left - 4) + "\" y1=\"" + fmt_num(c.sy(y)) + "\" x2=\"" +
         fmt_num(c.left) + "\" y2=\"" + fmt_num(c.sy(y)) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + fmt_num(c.left - 8) + "\" y=\"" + fmt_num(c.sy(y) + 4) +
         "\" font-size=\"10\" text-anchor=\"end\">" + fmt_num(y) + "</text>\n";
  }
  s += "<text x=\"" + fmt_num((c.left + c.right) / 2) + "\" y=\"" + fmt_num(c.height - 8) +
       "\" font-size=\"12\" text-anchor=\"middle\">" + x_label + "</text>\n";
  s += "<text x=\"16\" y=\"" + fmt_num((c.top + c.bottom) / 2) +
       "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       fmt_num((c.top + c.bottom) / 2) + ")\">" + y_label + "</text>\n";
}

void svg_x_ticks(std::string& s, const Canvas& c, const std::vector<double>& ticks) {
  for (const double x : ticks) {
    s += "<line x1=\"" + fmt_num(c.sx(x)) + "\" y1=\"" + fmt_num(c.bottom) + "\" x2=\"" +
         fmt_num(c.sx(x)) + "\" y2=\"" + fmt_num(c.bottom + 4) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + fmt_num(c.sx(x)) + "\" y=\"" + fmt_num(c.bottom + 16) +
         "\" font-size=\"10\" text-anchor=\"middle\">" + fmt_num(x) + "</text>\n";
  }
}

std::string svg_path(const Canvas& c, const std::vector<double>& xs, const std::vector<double>& ys) {
  std::string d;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    d += (i == 0 ? "M" : "L");
    d += fmt_num(c.sx(xs[i])) + " " + fmt_num(c.sy(ys[i]));
  }
  return d;
}

}  // namespace

// ---- public helpers ---------------------------------------------------

std::string fnv64_hex(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv64(bytes)));
  return buf;
}

std::string CellSpec::name() const {
  return rep::state_mode_name(state) + "+" + rep::action_scheme_name(scheme) + "+" +
         learn::method_name(method);
}

std::vector<CellSpec> RunConfig::cells() const {
  std::vector<CellSpec> out;
  for (const auto state : state_modes) {
    for (const auto scheme : action_schemes) {
      for (const auto method : methods) out.push_back({state, scheme, method});
    }
  }
  return out;
}

RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  static const std::set<std::string> known = {
      "seed",        "split_seed",     "fit_seed",    "eval_seed",   "n_patients",
      "days",        "confounding_strength",          "history_weeks",
      "day_stride",  "state_modes",    "action_schemes",             "methods",
      "kmeans_k",    "ml_top_k",       "blackbox_dim", "kn_grid",    "bootstrap_B",
      "level",       "learner",        "output_dir",  "workers",     "effect_kind"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) throw ConfigError("unknown config key: " + key);
  }
  if (!j.contains("seed")) throw ConfigError("config requires an explicit \"seed\"");

  RunConfig c;
  try {
    c.sim.seed = j.at("seed").get<std::uint64_t>();
    c.split_seed = j.value("split_seed", c.split_seed);
    c.fit_seed = j.value("fit_seed", c.fit_seed);
    c.eval_seed = j.value("eval_seed", c.eval_seed);
    c.sim.n_patients = j.value("n_patients", c.sim.n_patients);
    c.sim.days = j.value("days", c.sim.days);
    c.sim.confounding_strength = j.value("confounding_strength", c.sim.confounding_strength);
    if (j.contains("effect_kind")) {
      c.sim.effect.kind = effect_kind_from_name(j.at("effect_kind").get<std::string>());
    }
    c.history_weeks = j.value("history_weeks", c.history_weeks);
    c.day_stride = j.value("day_stride", c.day_stride);
    if (j.contains("state_modes")) {
      c.state_modes.clear();
      for (const auto& name : j.at("state_modes")) {
        c.state_modes.push_back(rep::state_mode_from_name(name.get<std::string>()));
      }
    }
    if (j.contains("action_schemes")) {
      c.action_schemes.clear();
      for (const auto& name : j.at("action_schemes")) {
        c.action_schemes.push_back(rep::action_scheme_from_name(name.get<std::string>()));
      }
    }
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& name : j.at("methods")) {
        c.methods.push_back(learn::method_from_name(name.get<std::string>()));
      }
    }
    c.kmeans_k = j.value("kmeans_k", c.kmeans_k);
    c.ml_top_k = j.value("ml_top_k", c.ml_top_k);
    c.blackbox_dim = j.value("blackbox_dim", c.blackbox_dim);
    if (j.contains("kn_grid")) c.kn_grid = j.at("kn_grid").get<std::vector<double>>();
    c.bootstrap_B = j.value("bootstrap_B", c.bootstrap_B);
    c.level = j.value("level", c.level);
    if (j.contains("learner")) {
      const json& p = j.at("learner");
      c.learner_point.n_trees = p.value("n_trees", c.learner_point.n_trees);
      c.learner_point.max_depth = p.value("max_depth", c.learner_point.max_depth);
      c.learner_point.learning_rate = p.value("learning_rate", c.learner_point.learning_rate);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    c.workers = j.value("workers", c.workers);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }

  if (c.kn_grid.empty()) c.kn_grid = {0.1, 0.25, 0.5, 1.0};
  for (const double r : c.kn_grid) ratio_grid_index(r);
  if (c.sim.n_patients < 3) throw ConfigError("n_patients must be >= 3");
  if (c.sim.days < 7 * c.history_weeks + 2) {
    throw ConfigError("days too short for the requested history_weeks");
  }
  if (c.history_weeks < 2 || c.history_weeks > 4) throw ConfigError("history_weeks must be 2..4");
  if (c.day_stride < 1) throw ConfigError("day_stride must be >= 1");
  if (c.bootstrap_B != 0 && c.bootstrap_B < 100) throw ConfigError("bootstrap_B must be 0 or >= 100");
  if (c.level <= 0.0 || c.level >= 1.0) throw ConfigError("level must be in (0, 1)");
  if (c.state_modes.empty() || c.action_schemes.empty() || c.methods.empty()) {
    throw ConfigError("state_modes, action_schemes, and methods must be non-empty");
  }
  {
    const auto cells = c.cells();
    std::set<std::string> seen;
    for (const auto& cell : cells) {
      if (!seen.insert(cell.name()).second) {
        throw ConfigError("duplicate sweep cell: " + cell.name());
      }
    }
  }
  if (c.kmeans_k < 1) throw ConfigError("kmeans_k must be >= 1");
  if (c.ml_top_k < 1) throw ConfigError("ml_top_k must be >= 1");
  if (c.blackbox_dim < 1) throw ConfigError("blackbox_dim must be >= 1");
  if (c.learner_point.n_trees < 1 || c.learner_point.max_depth < 1 ||
      c.learner_point.learning_rate <= 0.0) {
    throw ConfigError("learner point must have positive trees, depth, and rate");
  }
  if (c.workers < 0) throw ConfigError("workers must be >= 0");
  if (c.output_dir.empty()) throw ConfigError("output_dir must be non-empty");
  const bool has_base = std::any_of(c.methods.begin(), c.methods.end(),
                                    [](learn::Method m) { return m != learn::Method::ensemble; });
  if (!has_base) throw ConfigError("the ensemble needs at least one base method in methods");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

nlohmann::json encode(const RunConfig& c) {
  json state_modes = json::array();
  for (const auto m : c.state_modes) state_modes.push_back(rep::state_mode_name(m));
  json schemes = json::array();
  for (const auto s : c.action_schemes) schemes.push_back(rep::action_scheme_name(s));
  json methods = json::array();
  for (const auto m : c.methods) methods.push_back(learn::method_name(m));
  return json{{"seed", c.sim.seed},
              {"split_seed", c.split_seed},
              {"fit_seed", c.fit_seed},
              {"eval_seed", c.eval_seed},
              {"n_patients", c.sim.n_patients},
              {"days", c.sim.days},
              {"confounding_strength", c.sim.confounding_strength},
              {"effect_kind", effect_kind_name(c.sim.effect.kind)},
              {"history_weeks", c.history_weeks},
              {"day_stride", c.day_stride},
              {"state_modes", state_modes},
              {"action_schemes", schemes},
              {"methods", methods},
              {"kmeans_k", c.kmeans_k},
              {"ml_top_k", c.ml_top_k},
              {"blackbox_dim", c.blackbox_dim},
              {"kn_grid", c.kn_grid},
              {"bootstrap_B", c.bootstrap_B},
              {"level", c.level},
              {"learner", learner_point_key(c.learner_point)},
              {"output_dir", c.output_dir},
              {"workers", c.workers}};
}

std::string config_digest(const RunConfig& config) { return digest_of(encode(config)); }

nlohmann::json encode_toc(const eval::TocReport& r) {
  json points = json::array();
  for (const auto& p : r.points) {
    points.push_back(json{
        {"ratio", p.ratio}, {"K", p.K}, {"att", p.att}, {"lo", p.lo}, {"hi", p.hi}});
  }
  return json{{"points", points},
              {"att25", r.att25},
              {"att25_ci", encode_interval(r.att25_ci)},
              {"k25", r.k25},
              {"autoc", r.autoc},
              {"autoc_ci", encode_interval(r.autoc_ci)},
              {"ate_baseline", r.ate_baseline},
              {"ate_baseline_ci", encode_interval(r.ate_baseline_ci)},
              {"baseline_action", r.baseline_action},
              {"n_patients", r.n_patients},
              {"bootstrap_B", r.bootstrap_B},
              {"level", r.level},
              {"seed", r.seed}};
}

eval::TocReport decode_toc(const nlohmann::json& j) {
  eval::TocReport r;
  try {
    for (const auto& p : j.at("points")) {
      r.points.push_back({p.at("ratio").get<double>(), p.at("K").get<int>(),
                          p.at("att").get<double>(), p.at("lo").get<double>(),
                          p.at("hi").get<double>()});
    }
    r.att25 = j.at("att25").get<double>();
    r.att25_ci = decode_interval(j.at("att25_ci"));
    r.k25 = j.at("k25").get<int>();
    r.autoc = j.at("autoc").get<double>();
    r.autoc_ci = decode_interval(j.at("autoc_ci"));
    r.ate_baseline = j.at("ate_baseline").get<double>();
    r.ate_baseline_ci = decode_interval(j.at("ate_baseline_ci"));
    r.baseline_action = j.at("baseline_action").get<int>();
    r.n_patients = j.at("n_patients").get<int>();
    r.bootstrap_B = j.at("bootstrap_B").get<int>();
    r.level = j.at("level").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed toc report: ") + e.what());
  }
  return r;
}

// ---- stages -----------------------------------------------------------

void stage_simulate(const RunConfig& config) {
  stage_guard("simulate", [&] {
    const Paths paths{config.output_dir};
    write_json_file(paths.config(), encode(config));
    const std::string digest = digest_of(panel_key(config));
    if (!load_cached(paths.panel(), "panel", digest).is_null()) return;
    const sim::LoggedPanel panel = sim::simulate_panel(config.sim);
    write_json_file(paths.panel(), json{{"kind", "panel"},
                                        {"format_version", kArtifactVersion},
                                        {"digest", digest},
                                        {"sim", encode_sim(config.sim)},
                                        {"n_patients", config.sim.n_patients},
                                        {"n_rows", panel.rows.size()},
                                        {"dropped_rows", panel.dropped_rows},
                                        {"splits_read", json::array()}});
  });
}

void stage_featurize(const RunConfig& config) {
  stage_guard("featurize", [&] {
    const Paths paths{config.output_dir};
    const std::string digest = digest_of(frame_key(config));
    if (!load_cached(paths.frame(), "control_frame", digest).is_null()) return;
    const sim::LoggedPanel panel = load_panel(config, paths);
    const eval::ControlFrame frame = eval::build_control_covariates(panel, config.history_weeks);
    if (frame.X.rows == 0) throw InconsistentInputError("featurize produced no usable rows");
    write_json_file(paths.frame(), json{{"kind", "control_frame"},
                                        {"format_version", kArtifactVersion},
                                        {"digest", digest},
                                        {"frame", encode_frame(frame)},
                                        {"splits_read", json::array()}});
  });
}

void stage_split(const RunConfig& config) {
  stage_guard("split", [&] {
    const Paths paths{config.output_dir};
    const std::string digest = digest_of(split_key(config));
    if (!load_cached(paths.split(), "split", digest).is_null()) return;
    const eval::SplitIndex split = eval::split_by_patient(config.sim.n_patients, config.split_seed);
    write_json_file(paths.split(), json{{"kind", "split"},
                                        {"format_version", kArtifactVersion},
                                        {"digest", digest},
                                        {"seed", config.split_seed},
                                        {"n_patients", config.sim.n_patients},
                                        {"train", split.train},
                                        {"validation", split.validation},
                                        {"test", split.test},
                                        {"splits_read", json::array()}});
  });
}

void stage_fit(const RunConfig& config) {
  stage_guard("fit", [&] {
    const Paths paths{config.output_dir};
    const int workers = resolve_workers(config);
    const sim::LoggedPanel panel = load_panel(config, paths);
    const eval::ControlFrame frame = load_frame(config, paths);
    const eval::SplitIndex split = load_split(config, paths);
    eval::require_disjoint_patients(split.train, split.validation);
    eval::require_disjoint_patients(split.train, split.test);
    const auto train_rows = eval::rows_for_patients(frame, split.train);
    if (train_rows.empty()) throw InconsistentInputError("no training rows");
    const auto train_panel_rows = panel_rows_of(frame, train_rows);

    // State artifacts per mode.
    for (const auto mode : config.state_modes) {
      const std::string digest = digest_of(state_key(config, mode));
      if (!load_cached(paths.state(mode), "state_artifacts", digest).is_null()) continue;
      rep::StateArtifacts artifacts;
      if (mode == rep::StateMode::ml_subset) {
        artifacts.ml_subset = rep::select_state_features(
            panel, train_panel_rows, config.ml_top_k,
            hash_stream(config.fit_seed, name_stream("ml_subset")));
      } else if (mode == rep::StateMode::blackbox) {
        artifacts.projection = rep::fit_projection(
            hash_stream(config.fit_seed, name_stream("blackbox")), config.blackbox_dim);
      }
      write_json_file(paths.state(mode), json{{"kind", "state_artifacts"},
                                              {"format_version", kArtifactVersion},
                                              {"digest", digest},
                                              {"mode", rep::state_mode_name(mode)},
                                              {"seed", config.fit_seed},
                                              {"artifacts", io::encode(artifacts)},
                                              {"splits_read", json::array({"train"})}});
    }

    // Nuisances (and the action clustering) per scheme, trained on all
    // training-patient rows.
    for (const auto scheme : config.action_schemes) {
      const std::string digest = digest_of(scheme_key(config, scheme));
      if (!load_cached(paths.scheme(scheme), "scheme_nuisance", digest).is_null()) continue;
      SchemeContext sc;
      sc.scheme = scheme;
      if (scheme == rep::ActionScheme::kmeans) {
        Matrix E(0, kEmbeddingDim);
        std::vector<int> true_class;
        for (const std::size_t r : train_panel_rows) {
          const RawAction& action = panel.rows[r].action;
          if (action.is_control()) continue;
          E.push_row(std::vector<double>(action.embedding.begin(), action.embedding.end()));
          true_class.push_back(to_int(action.class_label));
        }
        sc.kmeans = rep::fit_kmeans(E, config.kmeans_k,
                                    hash_stream(config.fit_seed, name_stream("kmeans")));
        sc.n_classes = config.kmeans_k + 1;
        // Majority simulator class per cluster; an empty cluster falls back
        // to "other", whose true effect is the smallest.
        sc.class_to_true.assign(static_cast<std::size_t>(sc.n_classes), to_int(ActionClass::other));
        sc.class_to_true[0] = 0;
        std::vector<std::array<int, kNumActionClasses>> votes(
            static_cast<std::size_t>(config.kmeans_k));
        for (auto& v : votes) v.fill(0);
        for (int i = 0; i < E.rows; ++i) {
          const int cluster = rep::assign_cluster(sc.kmeans, E.row(i));
          votes[static_cast<std::size_t>(cluster)][static_cast<std::size_t>(true_class[static_cast<std::size_t>(i)])]++;
        }
        for (int cl = 0; cl < config.kmeans_k; ++cl) {
          const auto& v = votes[static_cast<std::size_t>(cl)];
          int best = to_int(ActionClass::other), best_count = 0;
          for (int a = 1; a < static_cast<int>(kNumActionClasses); ++a) {
            if (v[static_cast<std::size_t>(a)] > best_count) {
              best = a;
              best_count = v[static_cast<std::size_t>(a)];
            }
          }
          sc.class_to_true[static_cast<std::size_t>(cl) + 1] = best;
        }
      } else {
        sc.n_classes = kNumActionClasses;
        sc.class_to_true.resize(kNumActionClasses);
        for (int a = 0; a < static_cast<int>(kNumActionClasses); ++a) sc.class_to_true[static_cast<std::size_t>(a)] = a;
      }

      eval::ControlFrame train_frame = eval::select_rows(frame, train_rows);
      train_frame.actions = scheme_actions(sc, panel, train_frame);
      const std::uint64_t seed =
          hash_stream(config.fit_seed, name_stream("nuisance+" + rep::action_scheme_name(scheme)));
      sc.propensity = nuisance::fit_propensity(train_frame.X, train_frame.actions, sc.n_classes,
                                               0.01, hash_stream(seed, 0));
      boost::RegressorConfig outcome_cfg;
      outcome_cfg.grid = {config.learner_point};
      sc.outcome = nuisance::fit_outcome(train_frame.X, train_frame.actions, train_frame.rewards,
                                         sc.n_classes, hash_stream(seed, 1), outcome_cfg);

      write_json_file(paths.scheme(scheme),
                      json{{"kind", "scheme_nuisance"},
                           {"format_version", kArtifactVersion},
                           {"digest", digest},
                           {"scheme", rep::action_scheme_name(scheme)},
                           {"n_classes", sc.n_classes},
                           {"class_to_true", sc.class_to_true},
                           {"kmeans", scheme == rep::ActionScheme::kmeans ? io::encode(sc.kmeans)
                                                                          : json()},
                           {"propensity", learn::ModelCodec::encode(sc.propensity)},
                           {"outcome", learn::ModelCodec::encode(sc.outcome)},
                           {"splits_read", json::array({"train"})}});
    }

    // CATE models per cell. Base methods first (in parallel), then ensembles,
    // which stack the sibling base models of the same state x scheme on
    // validation DR scores.
    const learn::LearnerConfig lcfg = make_learner_config(config);
    std::map<std::string, rep::StateArtifacts> states;
    std::map<std::string, SchemeContext> schemes;
    for (const auto mode : config.state_modes) {
      states.emplace(rep::state_mode_name(mode), load_state(config, paths, mode));
    }
    for (const auto scheme : config.action_schemes) {
      schemes.emplace(rep::action_scheme_name(scheme), load_scheme(config, paths, scheme));
    }

    const auto all_cells = config.cells();
    std::vector<CellSpec> base_cells, ensemble_cells;
    for (const auto& cell : all_cells) {
      (cell.method == learn::Method::ensemble ? ensemble_cells : base_cells).push_back(cell);
    }

    const auto fit_base_cell = [&](std::size_t i) {
      const CellSpec& cell = base_cells[i];
      const std::string digest = digest_of(cell_key(config, cell));
      if (!load_cached(paths.model(cell), "cell_model", digest).is_null()) return;
      const auto& artifacts = states.at(rep::state_mode_name(cell.state));
      const auto& sc = schemes.at(rep::action_scheme_name(cell.scheme));
      const auto actions_all = scheme_actions(sc, panel, frame);
      learn::TrainData data =
          cell_train_data(panel, frame, train_rows, actions_all, cell, artifacts);
      data.n_classes = sc.n_classes;
      const auto model = learn::fit_cate(cell.method, data, lcfg,
                                         hash_stream(config.fit_seed, name_stream(cell.name())));
      write_json_file(paths.model(cell), json{{"kind", "cell_model"},
                                              {"format_version", kArtifactVersion},
                                              {"digest", digest},
                                              {"cell", encode_cell_spec(cell)},
                                              {"n_train_rows", data.S.rows},
                                              {"model", learn::ModelCodec::encode(*model)},
                                              {"splits_read", json::array({"train"})}});
    };
    run_parallel(base_cells.size(), workers, fit_base_cell);

    const auto fit_ensemble_cell = [&](std::size_t i) {
      const CellSpec& cell = ensemble_cells[i];
      const std::string digest = digest_of(cell_key(config, cell));
      if (!load_cached(paths.model(cell), "cell_model", digest).is_null()) return;
      const auto& artifacts = states.at(rep::state_mode_name(cell.state));
      const auto& sc = schemes.at(rep::action_scheme_name(cell.scheme));

      std::vector<std::shared_ptr<const learn::CateModel>> candidates;
      for (const auto method : config.methods) {
        if (method == learn::Method::ensemble) continue;
        CellSpec base = cell;
        base.method = method;
        const json mj = require_artifact(paths.model(base), "cell_model",
                                         digest_of(cell_key(config, base)), "fit");
        candidates.emplace_back(learn::ModelCodec::decode(mj.at("model")));
      }

      const auto val_rows = eval_rows_for(frame, split.validation, config.day_stride);
      const EvalSlice slice = make_eval_slice(panel, frame, sc, val_rows, "the validation split");
      const Matrix S_val =
          rep::state_matrix(panel, slice.panel_rows, cell.state, artifacts);
      const auto model = learn::fit_ensemble(candidates, S_val, slice.table.gamma);
      write_json_file(paths.model(cell),
                      json{{"kind", "cell_model"},
                           {"format_version", kArtifactVersion},
                           {"digest", digest},
                           {"cell", encode_cell_spec(cell)},
                           {"n_train_rows", S_val.rows},
                           {"model", learn::ModelCodec::encode(*model)},
                           {"splits_read", json::array({"train", "validation"})}});
    };
    run_parallel(ensemble_cells.size(), workers, fit_ensemble_cell);
  });
}

namespace {

// Shared by the evaluate stage (validation) and the report stage (single
// test re-evaluation of the best cell).
CellResult evaluate_cell(const RunConfig& config, const Paths& paths,
                         const sim::LoggedPanel& panel, const eval::ControlFrame& frame,
                         const CellSpec& cell, const rep::StateArtifacts& artifacts,
                         const SchemeContext& sc, const std::vector<int>& patients,
                         const char* split_name) {
  const json mj =
      require_artifact(paths.model(cell), "cell_model", digest_of(cell_key(config, cell)), "fit");
  const auto model = learn::ModelCodec::decode(mj.at("model"));

  const auto rows = eval_rows_for(frame, patients, config.day_stride);
  const EvalSlice slice = make_eval_slice(panel, frame, sc, rows, split_name);
  const Matrix S = rep::state_matrix(panel, slice.panel_rows, cell.state, artifacts);
  const Matrix tau = tau_matrix(*model, S);

  CellResult result;
  result.spec = cell;
  result.n_train_rows = mj.at("n_train_rows").get<int>();
  result.n_eval_rows = static_cast<int>(rows.size());
  result.toc = eval::toc_curve(
      slice.table, tau, config.bootstrap_B,
      hash_stream(config.eval_seed, name_stream(cell.name() + "#" + split_name)), config.level);
  result.oracle_regret =
      cell_oracle_regret(panel, slice, tau, sc.class_to_true, result.toc.k25);
  return result;
}

}  // namespace

void stage_evaluate(const RunConfig& config) {
  stage_guard("evaluate", [&] {
    const Paths paths{config.output_dir};
    const int workers = resolve_workers(config);
    const sim::LoggedPanel panel = load_panel(config, paths);
    const eval::ControlFrame frame = load_frame(config, paths);
    const eval::SplitIndex split = load_split(config, paths);
    eval::require_disjoint_patients(split.train, split.validation);

    std::map<std::string, rep::StateArtifacts> states;
    std::map<std::string, SchemeContext> schemes;
    for (const auto mode : config.state_modes) {
      states.emplace(rep::state_mode_name(mode), load_state(config, paths, mode));
    }
    for (const auto scheme : config.action_schemes) {
      schemes.emplace(rep::action_scheme_name(scheme), load_scheme(config, paths, scheme));
    }

    const auto cells = config.cells();
    run_parallel(cells.size(), workers, [&](std::size_t i) {
      const CellSpec& cell = cells[i];
      const std::string digest = digest_of(eval_key(config, cell));
      if (!load_cached(paths.validation(cell), "cell_eval", digest).is_null()) return;
      const CellResult result = evaluate_cell(
          config, paths, panel, frame, cell, states.at(rep::state_mode_name(cell.state)),
          schemes.at(rep::action_scheme_name(cell.scheme)), split.validation, "validation");
      write_json_file(paths.validation(cell), encode_cell_result(result, digest, "validation"));
      write_text_file(paths.validation_csv(cell), toc_csv(result.toc));
      write_text_file(paths.validation_svg(cell),
                      toc_svg(result.toc, cell.name() + " (validation)"));
    });
  });
}

RunReport stage_report(const RunConfig& config) {
  return stage_guard("report", [&] {
    const Paths paths{config.output_dir};
    const sim::LoggedPanel panel = load_panel(config, paths);
    const eval::ControlFrame frame = load_frame(config, paths);
    const eval::SplitIndex split = load_split(config, paths);

    RunReport report;
    report.digest = config_digest(config);

    const auto cells = config.cells();
    json stage_audit = json::array();
    for (const auto& cell : cells) {
      const json j = require_artifact(paths.validation(cell), "cell_eval",
                                      digest_of(eval_key(config, cell)), "evaluate");
      report.cells.push_back(decode_cell_result(j));
      stage_audit.push_back(json{{"file", paths.validation(cell).lexically_relative(paths.out).generic_string()},
                                 {"splits_read", j.at("splits_read")}});
    }
    for (std::size_t i = 0; i < report.cells.size(); ++i) {
      if (report.best_cell < 0 ||
          report.cells[i].toc.att25 >
              report.cells[static_cast<std::size_t>(report.best_cell)].toc.att25) {
        report.best_cell = static_cast<int>(i);
      }
    }

    // Audit: no stage artifact may have read the test split; the single
    // read below is the only one in the pipeline.
    for (const auto& p : {paths.panel(), paths.frame(), paths.split()}) {
      const json j = read_json_file(p);
      stage_audit.push_back(json{{"file", p.lexically_relative(paths.out).generic_string()},
                                 {"splits_read", j.at("splits_read")}});
    }
    for (const auto mode : config.state_modes) {
      const json j = read_json_file(paths.state(mode));
      stage_audit.push_back(json{{"file", paths.state(mode).lexically_relative(paths.out).generic_string()},
                                 {"splits_read", j.at("splits_read")}});
    }
    for (const auto scheme : config.action_schemes) {
      const json j = read_json_file(paths.scheme(scheme));
      stage_audit.push_back(json{{"file", paths.scheme(scheme).lexically_relative(paths.out).generic_string()},
                                 {"splits_read", j.at("splits_read")}});
    }
    for (const auto& cell : cells) {
      const json j = read_json_file(paths.model(cell));
      stage_audit.push_back(json{{"file", paths.model(cell).lexically_relative(paths.out).generic_string()},
                                 {"splits_read", j.at("splits_read")}});
    }
    for (const auto& entry : stage_audit) {
      for (const auto& s : entry.at("splits_read")) {
        if (s.get<std::string>() == "test") {
          throw InconsistentInputError("stage artifact " + entry.at("file").get<std::string>() +
                                       " read the test split");
        }
      }
    }

    // The one and only test-split read: re-evaluate the selected cell.
    const CellSpec best = report.cells[static_cast<std::size_t>(report.best_cell)].spec;
    eval::require_disjoint_patients(split.train, split.test);
    eval::require_disjoint_patients(split.validation, split.test);
    report.test_split_reads++;
    report.test = evaluate_cell(config, paths, panel, frame, best,
                                load_state(config, paths, best.state),
                                load_scheme(config, paths, best.scheme), split.test, "test");
    if (report.test_split_reads != 1) {
      throw InconsistentInputError("the test split must be read exactly once");
    }
    write_json_file(paths.out / "best_test.json",
                    encode_cell_result(report.test, digest_of(eval_key(config, best)), "test"));
    write_text_file(paths.out / "best_test.csv", toc_csv(report.test.toc));
    write_text_file(paths.out / "best_test.svg",
                    toc_svg(report.test.toc, best.name() + " (test)"));

    // CATE slices of the best model over the validation evaluation rows.
    {
      const json mj = require_artifact(paths.model(best), "cell_model",
                                       digest_of(cell_key(config, best)), "fit");
      const auto model = learn::ModelCodec::decode(mj.at("model"));
      const auto artifacts = load_state(config, paths, best.state);
      const auto rows = eval_rows_for(frame, split.validation, config.day_stride);
      if (rows.empty()) throw InconsistentInputError("no validation rows for slices");
      const auto panel_rows = panel_rows_of(frame, rows);
      const Matrix S = rep::state_matrix(panel, panel_rows, best.state, artifacts);
      const auto tau_opt = best_action_tau(*model, S);
      for (const auto& feature : kSliceFeatures) {
        const SliceCurve curve = cate_slice(tau_opt, panel, panel_rows, feature);
        write_text_file(paths.out / "slices" / ("slice_" + feature + ".csv"), slice_csv(curve));
        write_text_file(paths.out / "slices" / ("slice_" + feature + ".svg"),
                        slice_svg(curve, best.name() + ": tau vs " + feature));
      }
    }

    // Summary table (JSON + CSV) and the per-cell ATT@25% figure.
    json summary_cells = json::array();
    std::string csv =
        "cell,state,scheme,method,n_eval_rows,att25,att25_lo,att25_hi,autoc,autoc_lo,autoc_hi,"
        "ate_baseline,baseline_lo,baseline_hi,baseline_action,k25,oracle_regret";
    for (const double r : config.kn_grid) csv += ",att@" + fmt_num(r);
    csv += "\n";
    for (const auto& cr : report.cells) {
      json row{{"cell", cr.spec.name()},
               {"state", rep::state_mode_name(cr.spec.state)},
               {"scheme", rep::action_scheme_name(cr.spec.scheme)},
               {"method", learn::method_name(cr.spec.method)},
               {"n_eval_rows", cr.n_eval_rows},
               {"att25", cr.toc.att25},
               {"att25_ci", encode_interval(cr.toc.att25_ci)},
               {"autoc", cr.toc.autoc},
               {"autoc_ci", encode_interval(cr.toc.autoc_ci)},
               {"ate_baseline", cr.toc.ate_baseline},
               {"ate_baseline_ci", encode_interval(cr.toc.ate_baseline_ci)},
               {"baseline_action", cr.toc.baseline_action},
               {"k25", cr.toc.k25},
               {"oracle_regret", cr.oracle_regret}};
      summary_cells.push_back(row);
      csv += cr.spec.name() + "," + rep::state_mode_name(cr.spec.state) + "," +
             rep::action_scheme_name(cr.spec.scheme) + "," + learn::method_name(cr.spec.method) +
             "," + std::to_string(cr.n_eval_rows) + "," + fmt_num(cr.toc.att25) + "," +
             fmt_num(cr.toc.att25_ci.lo) + "," + fmt_num(cr.toc.att25_ci.hi) + "," +
             fmt_num(cr.toc.autoc) + "," + fmt_num(cr.toc.autoc_ci.lo) + "," +
             fmt_num(cr.toc.autoc_ci.hi) + "," + fmt_num(cr.toc.ate_baseline) + "," +
             fmt_num(cr.toc.ate_baseline_ci.lo) + "," + fmt_num(cr.toc.ate_baseline_ci.hi) + "," +
             std::to_string(cr.toc.baseline_action) + "," + std::to_string(cr.toc.k25) + "," +
             fmt_num(cr.oracle_regret);
      for (const double r : config.kn_grid) {
        csv += "," + fmt_num(cr.toc.points[static_cast<std::size_t>(ratio_grid_index(r))].att);
      }
      csv += "\n";
    }
    write_json_file(paths.out / "summary.json",
                    json{{"kind", "summary"},
                         {"format_version", kArtifactVersion},
                         {"digest", report.digest},
                         {"cells", summary_cells},
                         {"best_cell", best.name()},
                         {"test_att25", report.test.toc.att25},
                         {"test_att25_ci", encode_interval(report.test.toc.att25_ci)},
                         {"test_autoc", report.test.toc.autoc},
                         {"test_oracle_regret", report.test.oracle_regret}});
    write_text_file(paths.out / "summary.csv", csv);

    {
      Canvas canvas;
      canvas.x_min = 0.5;
      canvas.x_max = static_cast<double>(report.cells.size()) + 0.5;
      canvas.y_min = report.cells.front().toc.att25_ci.lo;
      canvas.y_max = report.cells.front().toc.att25_ci.hi;
      for (const auto& cr : report.cells) {
        canvas.y_min = std::min({canvas.y_min, cr.toc.att25_ci.lo, cr.toc.ate_baseline});
        canvas.y_max = std::max({canvas.y_max, cr.toc.att25_ci.hi, cr.toc.ate_baseline});
      }
      pad_y_range(canvas);
      std::string svg = svg_open(canvas, "ATT@25% by cell (validation)");
      svg_axes(svg, canvas, "cell", "ATT@25%");
      for (std::size_t i = 0; i < report.cells.size(); ++i) {
        const auto& cr = report.cells[i];
        const double x = canvas.sx(static_cast<double>(i) + 1.0);
        svg += "<line x1=\"" + fmt_num(x) + "\" y1=\"" + fmt_num(canvas.sy(cr.toc.att25_ci.lo)) +
               "\" x2=\"" + fmt_num(x) + "\" y2=\"" + fmt_num(canvas.sy(cr.toc.att25_ci.hi)) +
               "\" stroke=\"steelblue\" stroke-width=\"2\"/>\n";
        svg += "<circle cx=\"" + fmt_num(x) + "\" cy=\"" + fmt_num(canvas.sy(cr.toc.att25)) +
               "\" r=\"4\" fill=\"steelblue\"/>\n";
        svg += "<line x1=\"" + fmt_num(x - 10) + "\" y1=\"" +
               fmt_num(canvas.sy(cr.toc.ate_baseline)) + "\" x2=\"" + fmt_num(x + 10) +
               "\" y2=\"" + fmt_num(canvas.sy(cr.toc.ate_baseline)) +
               "\" stroke=\"darkorange\" stroke-dasharray=\"4 2\"/>\n";
        svg += "<text x=\"" + fmt_num(x) + "\" y=\"" + fmt_num(canvas.bottom + 14) +
               "\" font-size=\"8\" text-anchor=\"end\" transform=\"rotate(-30 " + fmt_num(x) +
               " " + fmt_num(canvas.bottom + 14) + ")\">" + cr.spec.name() + "</text>\n";
      }
      svg += "</svg>\n";
      write_text_file(paths.out / "figure_att25.svg", svg);
    }

    // Manifest: every emitted file with a content hash; the run report
    // itself is the one file that cannot self-hash.
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(paths.out)) {
      if (!entry.is_regular_file()) continue;
      const std::string rel = entry.path().lexically_relative(paths.out).generic_string();
      if (rel == "run_report.json") continue;
      files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    json manifest = json::array();
    for (const auto& rel : files) {
      const std::string hash = fnv64_hex(io::read_text((paths.out / rel).string()));
      report.manifest.emplace_back(rel, hash);
      manifest.push_back(json{{"file", rel}, {"fnv64", hash}});
    }

    json cells_json = json::array();
    for (const auto& cr : report.cells) {
      cells_json.push_back(encode_cell_result(cr, digest_of(eval_key(config, cr.spec)),
                                              "validation"));
    }
    write_json_file(paths.run_report(),
                    json{{"kind", "run_report"},
                         {"format_version", kArtifactVersion},
                         {"digest", report.digest},
                         {"config", encode(config)},
                         {"cells", cells_json},
                         {"best_cell", best.name()},
                         {"test", encode_cell_result(report.test, digest_of(eval_key(config, best)),
                                                     "test")},
                         {"test_split_reads", report.test_split_reads},
                         {"stage_audit", stage_audit},
                         {"manifest", manifest}});
    return report;
  });
}

RunReport run_pipeline(const RunConfig& config) {
  stage_simulate(config);
  stage_featurize(config);
  stage_split(config);
  stage_fit(config);
  stage_evaluate(config);
  return stage_report(config);
}

// ---- slices -----------------------------------------------------------

std::vector<double> best_action_tau(const learn::CateModel& model, const Matrix& S) {
  std::vector<double> out(static_cast<std::size_t>(S.rows));
  for (int i = 0; i < S.rows; ++i) {
    const auto tau = model.predict_all(S.row(i));
    out[static_cast<std::size_t>(i)] = *std::max_element(tau.begin() + 1, tau.end());
  }
  return out;
}

SliceCurve cate_slice(const std::vector<double>& tau_opt, const sim::LoggedPanel& panel,
                      const std::vector<std::size_t>& panel_rows, const std::string& feature,
                      int max_bins) {
  if (tau_opt.size() != panel_rows.size()) {
    throw InconsistentInputError("tau and row counts differ");
  }
  if (panel_rows.empty()) throw InconsistentInputError("no rows to slice");
  if (max_bins < 1) throw ConfigError("max_bins must be >= 1");

  std::vector<double> values(panel_rows.size());
  for (std::size_t i = 0; i < panel_rows.size(); ++i) {
    if (panel_rows[i] >= panel.rows.size()) {
      throw InconsistentInputError("panel row index out of range");
    }
    values[i] = cgm::feature_value(panel.rows[panel_rows[i]].features, feature);
  }

  SliceCurve curve;
  curve.feature = feature;

  std::vector<std::size_t> order(values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] != values[b] ? values[a] < values[b] : a < b;
  });

  std::set<double> distinct(values.begin(), values.end());
  const bool per_value = static_cast<int>(distinct.size()) <= max_bins;
  const int n_bins = per_value ? static_cast<int>(distinct.size()) : max_bins;

  std::size_t start = 0;
  for (int b = 0; b < n_bins; ++b) {
    std::size_t stop;
    if (per_value) {
      stop = start;
      while (stop < order.size() && values[order[stop]] == values[order[start]]) ++stop;
    } else {
      stop = (static_cast<std::size_t>(b) + 1) * order.size() / static_cast<std::size_t>(n_bins);
      // Keep ties in one bin so the curve is a function of the feature.
      while (stop < order.size() && stop > start &&
             values[order[stop]] == values[order[stop - 1]]) {
        ++stop;
      }
    }
    if (stop <= start) continue;
    double x_sum = 0, y_sum = 0;
    for (std::size_t i = start; i < stop; ++i) {
      x_sum += values[order[i]];
      y_sum += tau_opt[order[i]];
    }
    const double n = static_cast<double>(stop - start);
    curve.x.push_back(x_sum / n);
    curve.y.push_back(y_sum / n);
    curve.count.push_back(static_cast<int>(stop - start));
    start = stop;
  }
  return curve;
}

// ---- renderers --------------------------------------------------------

std::string toc_csv(const eval::TocReport& report) {
  std::string csv = "ratio,K,att,lo,hi\n";
  for (const auto& p : report.points) {
    csv += fmt_num(p.ratio) + "," + std::to_string(p.K) + "," + fmt_num(p.att) + "," +
           fmt_num(p.lo) + "," + fmt_num(p.hi) + "\n";
  }
  return csv;
}

std::string toc_svg(const eval::TocReport& report, const std::string& title) {
  Canvas canvas;
  canvas.x_min = 0.0;
  canvas.x_max = 1.0;
  canvas.y_min = report.ate_baseline_ci.lo;
  canvas.y_max = report.ate_baseline_ci.hi;
  for (const auto& p : report.points) {
    canvas.y_min = std::min(canvas.y_min, p.lo);
    canvas.y_max = std::max(canvas.y_max, p.hi);
  }
  pad_y_range(canvas);

  std::string svg = svg_open(canvas, title);
  svg_axes(svg, canvas, "K / N", "ATT@K");
  svg_x_ticks(svg, canvas, {0.0, 0.25, 0.5, 0.75, 1.0});

  std::vector<double> xs, lo, hi, att;
  for (const auto& p : report.points) {
    xs.push_back(p.ratio);
    lo.push_back(p.lo);
    hi.push_back(p.hi);
    att.push_back(p.att);
  }
  if (report.bootstrap_B > 0) {
    std::string band = "M";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      band += fmt_num(canvas.sx(xs[i])) + " " + fmt_num(canvas.sy(hi[i])) + " L";
    }
    for (std::size_t i = xs.size(); i-- > 0;) {
      band += fmt_num(canvas.sx(xs[i])) + " " + fmt_num(canvas.sy(lo[i]));
      if (i > 0) band += " L";
    }
    svg += "<path d=\"" + band + " Z\" fill=\"steelblue\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
  }
  svg += "<path d=\"" + svg_path(canvas, xs, att) +
         "\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n";
  svg += "<line x1=\"" + fmt_num(canvas.left) + "\" y1=\"" + fmt_num(canvas.sy(report.ate_baseline)) +
         "\" x2=\"" + fmt_num(canvas.right) + "\" y2=\"" + fmt_num(canvas.sy(report.ate_baseline)) +
         "\" stroke=\"darkorange\" stroke-dasharray=\"5 3\"/>\n";
  svg += "<text x=\"" + fmt_num(canvas.right - 4) + "\" y=\"" +
         fmt_num(canvas.sy(report.ate_baseline) - 6) +
         "\" font-size=\"10\" text-anchor=\"end\" fill=\"darkorange\">ATE baseline</text>\n";
  svg += "</svg>\n";
  return svg;
}

std::string slice_csv(const SliceCurve& curve) {
  std::string csv = "feature,bin_center,mean_tau,count\n";
  for (std::size_t i = 0; i < curve.x.size(); ++i) {
    csv += curve.feature + "," + fmt_num(curve.x[i]) + "," + fmt_num(curve.y[i]) + "," +
           std::to_string(curve.count[i]) + "\n";
  }
  return csv;
}

std::string slice_svg(const SliceCurve& curve, const std::string& title) {
  Canvas canvas;
  canvas.x_min = curve.x.front();
  canvas.x_max = curve.x.back();
  if (canvas.x_max <= canvas.x_min) {
    canvas.x_min -= 0.5;
    canvas.x_max += 0.5;
  }
  canvas.y_min = *std::min_element(curve.y.begin(), curve.y.end());
  canvas.y_max = *std::max_element(curve.y.begin(), curve.y.end());
  pad_y_range(canvas);

  std::string svg = svg_open(canvas, title);
  svg_axes(svg, canvas, curve.feature, "mean tau of best action");
  svg_x_ticks(svg, canvas, {curve.x.front(), curve.x.back()});
  svg += "<path d=\"" + svg_path(canvas, curve.x, curve.y) +
         "\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n";
  for (std::size_t i = 0; i < curve.x.size(); ++i) {
    svg += "<circle cx=\"" + fmt_num(canvas.sx(curve.x[i])) + "\" cy=\"" +
           fmt_num(canvas.sy(curve.y[i])) + "\" r=\"3\" fill=\"steelblue\"/>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace tir::pipeline
