#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "tirtarget/evaluation.hpp"
#include "tirtarget/learners.hpp"
#include "tirtarget/representations.hpp"
#include "tirtarget/sim.hpp"

namespace tir::pipeline {

// One sweep cell: a state representation x an action representation x a
// CATE method, mirroring the evaluation grid.
struct CellSpec {
  rep::StateMode state = rep::StateMode::tide;
  rep::ActionScheme scheme = rep::ActionScheme::clinical_rules;
  learn::Method method = learn::Method::t_learner;

  std::string name() const;  // "tide+clinical_rules+t_learner"
};

struct RunConfig {
  sim::SimConfig sim;              // cohort size, days, confounding, panel seed
  std::uint64_t split_seed = 17;
  std::uint64_t fit_seed = 29;
  std::uint64_t eval_seed = 101;
  int history_weeks = 2;
  int day_stride = 7;              // evaluation rows keep every k-th day
  std::vector<rep::StateMode> state_modes{rep::StateMode::tide};
  std::vector<rep::ActionScheme> action_schemes{rep::ActionScheme::clinical_rules};
  std::vector<learn::Method> methods{learn::Method::t_learner};
  int kmeans_k = 4;                // clusters for the kmeans action scheme
  int ml_top_k = 14;               // features kept by the ml_subset selector
  int blackbox_dim = 8;
  std::vector<double> kn_grid;     // reported capacity ratios; subset of the canonical grid
  int bootstrap_B = 200;
  double level = 0.95;
  boost::GridPoint learner_point{150, 3, 0.1};
  std::string output_dir = "run_out";
  int workers = 0;                 // 0 -> $TIRTARGET_WORKERS, else 1

  std::vector<CellSpec> cells() const;  // full sweep in deterministic order
};

// Config I/O. The file format is JSON; unknown keys and malformed values
// throw ConfigError. "seed" is required so runs never default to wall-clock.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json encode(const RunConfig& config);

// FNV-1a over the canonical config dump; keys every cached stage artifact.
std::string config_digest(const RunConfig& config);
std::string fnv64_hex(const std::string& bytes);

// TocReport <-> JSON (exact double round trip).
nlohmann::json encode_toc(const eval::TocReport& report);
eval::TocReport decode_toc(const nlohmann::json& j);

struct CellResult {
  CellSpec spec;
  eval::TocReport toc;
  double oracle_regret = 0.0;
  int n_train_rows = 0;
  int n_eval_rows = 0;
};

struct RunReport {
  std::string digest;
  std::vector<CellResult> cells;       // config order
  int best_cell = -1;                  // argmax validation ATT@25%
  CellResult test;                     // best cell re-evaluated on the test split
  int test_split_reads = 0;            // asserted == 1 before the report is written
  std::vector<std::pair<std::string, std::string>> manifest;  // file -> fnv64
};

// Stage functions behind the CLI subcommands. Each one rehydrates what it
// needs from the output directory, does its work, and writes its artifacts;
// `all` is just the six in order. Failures are rethrown as StageError with
// the stage name.
void stage_simulate(const RunConfig& config);
void stage_featurize(const RunConfig& config);
void stage_split(const RunConfig& config);
void stage_fit(const RunConfig& config);
void stage_evaluate(const RunConfig& config);
RunReport stage_report(const RunConfig& config);

RunReport run_pipeline(const RunConfig& config);

// Mean CATE of the best non-control action, binned against one clinical
// feature over the given panel rows. Distinct feature values <= max_bins get
// one bin each (exact slices for flags); otherwise equal-count bins.
struct SliceCurve {
  std::string feature;
  std::vector<double> x;      // bin centers (mean feature value in bin)
  std::vector<double> y;      // mean tau of the best action in bin
  std::vector<int> count;
};

std::vector<double> best_action_tau(const learn::CateModel& model, const Matrix& S);
SliceCurve cate_slice(const std::vector<double>& tau_opt, const sim::LoggedPanel& panel,
                      const std::vector<std::size_t>& panel_rows, const std::string& feature,
                      int max_bins = 12);

// Rendering helpers shared by the report stage (also handy in tests).
std::string toc_csv(const eval::TocReport& report);
std::string toc_svg(const eval::TocReport& report, const std::string& title);
std::string slice_csv(const SliceCurve& curve);
std::string slice_svg(const SliceCurve& curve, const std::string& title);

}  // namespace tir::pipeline
