#include "fbridge/app.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace fbridge;

int main(int argc, char** argv) {
  CLI::App cli{"Guided bridge samplers for partially observed diffusions"};
  cli.require_subcommand(1);

  std::string config;
  app::Overrides ov;
  std::uint64_t seed = 0;
  std::string out;
  int sweeps = 0, steps = 0;
  double rho = 0.0;

  auto add_run_options = [&](CLI::App* sub) {
    sub->add_option("--config,-c", config, "key = value configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--out,-o", out, "output directory");
    sub->add_option("--sweeps", sweeps, "number of sweeps")->check(CLI::PositiveNumber);
    sub->add_option("--rho", rho, "pCN memory in [0, 1)")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--steps-per-segment", steps, "grid cells per interval")->check(CLI::PositiveNumber);
  };
  auto* sim = cli.add_subcommand("simulate", "simulate a latent path and observations");
  auto* infer = cli.add_subcommand("infer", "run the MCMC sampler for parameters");
  auto* smooth = cli.add_subcommand("smooth", "run the sampler and summarize latent paths");
  for (auto* s : {sim, infer, smooth}) add_run_options(s);

  auto* val = cli.add_subcommand("validate", "oracle-backed self checks");
  ValidationOptions vopt;
  val->add_option("--seed", vopt.seed, "random seed");
  val->add_option("--configs", vopt.configs, "random kernel configurations")->check(CLI::PositiveNumber);
  val->add_option("--debug-r-bias", vopt.kernel.debug_r_bias, "perturb r~ (negative control)");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (val->parsed()) return app::cmd_validate(vopt, std::cout);
    CLI::App* sub = cli.get_subcommands().front();
    if (sub->count("--seed")) ov.seed = seed;
    if (sub->count("--out")) ov.out = out;
    if (sub->count("--sweeps")) ov.sweeps = sweeps;
    if (sub->count("--rho")) ov.rho = rho;
    if (sub->count("--steps-per-segment")) ov.steps = steps;
    const app::RunConfig cfg = app::load_run_config(config, ov);
    if (sim->parsed()) return app::cmd_simulate(cfg, std::cout);
    if (infer->parsed()) return app::cmd_infer(cfg, std::cout);
    return app::cmd_smooth(cfg, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const DomainError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
