#include <CLI11.hpp>

#include "corrspace/experiment.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::uint64_t seed = 0;
  int shots = 1;
  int jobs = 0;
  std::string out;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* shots_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;
  CLI::Option* out_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonFlags& c) {
  cmd->add_option("--config", c.config_path, "experiment config file")
      ->required()
      ->check(CLI::ExistingFile);
  c.seed_opt = cmd->add_option("--seed", c.seed, "master seed override");
  c.shots_opt = cmd->add_option("--shots", c.shots, "shot count override");
  c.jobs_opt = cmd->add_option("--jobs", c.jobs, "worker threads (0 = all cores)");
  c.out_opt = cmd->add_option("--out", c.out, "output directory override");
}

corrspace::ExperimentConfig load(const CommonFlags& c) {
  auto cfg = corrspace::parse_config_file(c.config_path);
  if (c.seed_opt->count()) {
    cfg.seed = c.seed;
    cfg.seed_set = true;
  }
  if (c.shots_opt->count()) cfg.shots = c.shots;
  if (c.jobs_opt->count()) cfg.jobs = c.jobs;
  if (c.out_opt->count()) cfg.out_dir = c.out;
  corrspace::validate_config(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"correlation-space localization toolkit", "corrspace"};
  app.require_subcommand(1);

  CommonFlags c_sim, c_loc, c_ana, c_cmp, c_orc;
  auto* sim = app.add_subcommand(
      "simulate", "sample site-by-site measurement records from a resource");
  add_common(sim, c_sim);
  auto* loc = app.add_subcommand(
      "localize", "run the localization protocol and report statistics");
  add_common(loc, c_loc);
  auto* ana = app.add_subcommand(
      "analyze", "closed-form resource diagnostics (spectra, correlators, ...)");
  add_common(ana, c_ana);
  auto* cmp = app.add_subcommand(
      "compile", "emit the adaptive measurement pattern for a target");
  add_common(cmp, c_cmp);
  auto* orc = app.add_subcommand(
      "oracle-check", "certify the simulator against dense-state oracles");
  add_common(orc, c_orc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return corrspace::run_simulate(load(c_sim));
    if (loc->parsed()) {
      auto cfg = load(c_loc);
      auto plan = corrspace::plan_localize(cfg);
      return corrspace::run_localize(plan);
    }
    if (ana->parsed()) return corrspace::run_analyze(load(c_ana));
    if (cmp->parsed()) return corrspace::run_compile(load(c_cmp));
    if (orc->parsed()) return corrspace::run_oracle_check(load(c_orc));
  } catch (const std::filesystem::filesystem_error& e) {
    fmt::print(stderr, "corrspace: config error: {}\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "corrspace: config error: {}\n", e.what());
    return 2;
  } catch (const std::domain_error& e) {
    fmt::print(stderr, "corrspace: config error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "corrspace: runtime error: {}\n", e.what());
    return 3;
  }
  return 2;
}
