#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#ifndef TIRTARGET_CLI
#error "TIRTARGET_CLI must point at the built binary"
#endif

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TIRTARGET_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream out(p);
  out << body;
}

std::string smoke_config(const fs::path& out_dir) {
  return std::string("{\n"
                     "  \"seed\": 5,\n"
                     "  \"n_patients\": 60,\n"
                     "  \"days\": 60,\n"
                     "  \"state_modes\": [\"tide\"],\n"
                     "  \"action_schemes\": [\"clinical_rules\"],\n"
                     "  \"methods\": [\"t_learner\"],\n"
                     "  \"bootstrap_B\": 0,\n"
                     "  \"output_dir\": \"") +
         out_dir.generic_string() + "\"\n}\n";
}

}  // namespace

TEST_CASE("all subcommand completes the smoke sweep and exits 0") {
  TempDir tmp("tirtarget_cli_all");
  const auto cfg = tmp.path / "run.json";
  write_file(cfg, smoke_config(tmp.path / "out"));
  CHECK(run_cli("all -c " + cfg.string()) == 0);
  CHECK(fs::exists(tmp.path / "out/run_report.json"));
  CHECK(fs::exists(tmp.path / "out/summary.csv"));
}

TEST_CASE("staged subcommands chain to the same result") {
  TempDir tmp("tirtarget_cli_staged");
  const auto cfg = tmp.path / "run.json";
  write_file(cfg, smoke_config(tmp.path / "out"));
  for (const std::string stage : {"simulate", "featurize", "split", "fit", "evaluate", "report"}) {
    CAPTURE(stage);
    CHECK(run_cli(stage + " -c " + cfg.string()) == 0);
  }
  CHECK(fs::exists(tmp.path / "out/run_report.json"));
}

TEST_CASE("config problems exit 2") {
  TempDir tmp("tirtarget_cli_cfg");
  CHECK(run_cli("simulate -c " + (tmp.path / "missing.json").string()) == 2);

  const auto broken = tmp.path / "broken.json";
  write_file(broken, "{ not json");
  CHECK(run_cli("simulate -c " + broken.string()) == 2);

  const auto unknown = tmp.path / "unknown.json";
  write_file(unknown, "{\"seed\": 1, \"output_dir\": \"x\", \"mystery\": true}");
  CHECK(run_cli("simulate -c " + unknown.string()) == 2);

  CHECK(run_cli("") == 2);                  // missing subcommand
  CHECK(run_cli("simulate") == 2);          // missing --config
  CHECK(run_cli("transmogrify -c x") == 2); // unknown subcommand
}

TEST_CASE("stage failures exit 3") {
  TempDir tmp("tirtarget_cli_stage");
  const auto cfg = tmp.path / "run.json";
  write_file(cfg, smoke_config(tmp.path / "out"));
  CHECK(run_cli("fit -c " + cfg.string()) == 3);  // nothing simulated yet
}
