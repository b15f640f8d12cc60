// nehari-shape <experiment> --config <file> [--out <dir>] [--seed <n>] [--jobs <n>]

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "nehari/experiments.hpp"

namespace {

int reportError(const std::string& cls, const std::string& message) {
  nehari::Json j = {{"status", "error"}, {"error", {{"class", cls}, {"message", message}}}};
  std::cerr << j.dump() << '\n';
  return cls == "ConfigError" ? 2 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Least-energy levels of p-Laplacian problems on balls and eccentric annuli"};
  std::string experiment, configPath, outDir;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  app.add_option("experiment", experiment, "experiment name")
      ->required()
      ->check(CLI::IsMember(nehari::experimentNames()));
  app.add_option("--config", configPath, "flat key = value configuration file")->required();
  app.add_option("--out", outDir, "output directory (overrides output.dir)");
  app.add_option("--seed", seed, "random seed (overrides solver.seed)");
  app.add_option("--jobs", jobs, "parallel sub-jobs (overrides solver.jobs)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return reportError("ConfigError", e.what());
  }

  try {
    nehari::RunConfig cfg = nehari::parseConfigFile(configPath);
    if (!cfg.experiment.empty() && cfg.experiment != experiment)
      nehari::fail(nehari::ErrorClass::ConfigError,
                   "config names experiment '" + cfg.experiment + "' but '" + experiment + "' was requested");
    cfg.experiment = experiment;
    if (!outDir.empty()) cfg.outDir = outDir;
    if (seed) cfg.solver.seed = *seed;
    if (jobs) cfg.solver.jobs = *jobs;
    nehari::validateConfig(cfg);

    const nehari::RunRecord rec = nehari::runExperiment(cfg);
    nehari::writeRunRecord(rec, cfg.outDir);
    std::cout << rec.record["verdicts"].dump() << '\n';
    if (!rec.ok()) {
      const auto& err = rec.record["error"];
      return reportError(err["class"].get<std::string>(), err["message"].get<std::string>());
    }
    return EXIT_SUCCESS;
  } catch (const nehari::Error& e) {
    return reportError(std::string(nehari::toString(e.errorClass())), e.what());
  } catch (const std::exception& e) {
    return reportError("IOError", e.what());
  }
}
