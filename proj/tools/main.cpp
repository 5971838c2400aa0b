#include <iostream>

#include "CLI11.hpp"
#include "runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"spinesim: spine-measure simulation and verification experiments"};
  spinesim::cli::RunRequest req;
  std::uint64_t seed = 0;
  std::string experiment;
  app.add_option("--config", req.config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--workers", req.workers, "worker threads; falls back to SPINESIM_WORKERS")->check(CLI::NonNegativeNumber);
  app.add_option("--out", req.out_dir, "output directory")->capture_default_str();
  auto* exp_opt = app.add_option("--experiment", experiment,
                                 "eigen | many2few | martingale | split-time | joint-law | survival | density-tables");
  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) req.seed = seed;
  if (*exp_opt) req.experiment = experiment;
  return spinesim::cli::run(req, std::cerr);
}
