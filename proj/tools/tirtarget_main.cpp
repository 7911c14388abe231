#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "tirtarget/errors.hpp"
#include "tirtarget/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kStageError = 3;

int run_stage(const std::string& stage, const std::string& config_path) {
  tir::pipeline::RunConfig config;
  try {
    config = tir::pipeline::load_run_config(config_path);
  } catch (const tir::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  }

  try {
    if (stage == "simulate") {
      tir::pipeline::stage_simulate(config);
    } else if (stage == "featurize") {
      tir::pipeline::stage_featurize(config);
    } else if (stage == "split") {
      tir::pipeline::stage_split(config);
    } else if (stage == "fit") {
      tir::pipeline::stage_fit(config);
    } else if (stage == "evaluate") {
      tir::pipeline::stage_evaluate(config);
    } else if (stage == "report" || stage == "all") {
      const auto report = stage == "all" ? tir::pipeline::run_pipeline(config)
                                         : tir::pipeline::stage_report(config);
      const auto& best = report.cells[static_cast<std::size_t>(report.best_cell)];
      std::printf("best cell: %s\n", best.spec.name().c_str());
      std::printf("validation ATT@25%%: %.6g [%.6g, %.6g]\n", best.toc.att25,
                  best.toc.att25_ci.lo, best.toc.att25_ci.hi);
      std::printf("test ATT@25%%: %.6g [%.6g, %.6g]\n", report.test.toc.att25,
                  report.test.toc.att25_ci.lo, report.test.toc.att25_ci.hi);
      std::printf("report: %s/run_report.json\n", config.output_dir.c_str());
    }
  } catch (const tir::StageError& e) {
    std::fprintf(stderr, "stage failure: %s\n", e.what());
    return kStageError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "stage failure: %s\n", e.what());
    return kStageError;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"capacity-constrained targeting: simulate, fit, and evaluate policies"};
  app.require_subcommand(1);

  const std::vector<std::string> stages = {"simulate", "featurize", "split", "fit",
                                           "evaluate",  "report",    "all"};
  const std::vector<std::string> blurbs = {
      "generate the synthetic logged panel",
      "build control covariates from the panel",
      "split patients into train/validation/test",
      "fit representations, nuisances, and CATE models",
      "evaluate every cell on the validation split",
      "write the summary, figures, and run report",
      "run every stage in order"};

  std::string config_path;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    CLI::App* sub = app.add_subcommand(stages[i], blurbs[i]);
    sub->add_option("-c,--config", config_path, "run config JSON file")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  return run_stage(app.get_subcommands().front()->get_name(), config_path);
}
