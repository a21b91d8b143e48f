#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "panda/app.hpp"

// Command-line front end. A JSON config (--config) supplies the job; every
// flag below overrides the matching config field. The subcommand name selects
// the command, falling back to the config's "command" entry.

int main(int argc, char** argv) {
  CLI::App app{"noise-augmented penalized estimation"};
  app.require_subcommand(0, 1);

  std::string config, input, truth, response, output, method, noise_kind;
  std::string convergence, symmetrize;
  std::vector<double> grid;
  std::uint64_t seed = 0;
  int n_e = 0, m = 0, r = 0, max_iter = 0;
  double tau0 = 0, alpha = 0, lambda = 0, level = 0;
  bool intercept = false;

  auto* o_config = app.add_option("--config", config, "JSON config file");
  auto* o_input = app.add_option("--input", input, "input data CSV");
  auto* o_truth = app.add_option("--truth", truth, "true adjacency CSV");
  auto* o_resp = app.add_option("--response", response, "response column name");
  auto* o_output = app.add_option("--output", output, "output directory");
  auto* o_method =
      app.add_option("--method", method, "graph method: ns|cd|scio|space|gridge");
  auto* o_noise = app.add_option(
      "--noise", noise_kind, "noise kind: lasso|ridge|bridge|en|adalasso|scad|group|fused");
  auto* o_lambda = app.add_option("--lambda", lambda, "penalty magnitude");
  auto* o_grid = app.add_option("--lambda-grid", grid, "penalty grid (comma separated)")
                     ->delimiter(',');
  auto* o_seed = app.add_option("--seed", seed, "base RNG seed");
  auto* o_ne = app.add_option("--n-e", n_e, "noise rows per regression");
  auto* o_m = app.add_option("--m", m, "moving-average window");
  auto* o_tau0 = app.add_option("--tau0", tau0, "hard-threshold level");
  auto* o_r = app.add_option("--r", r, "banked iterations after convergence");
  auto* o_maxit = app.add_option("--max-iter", max_iter, "iteration budget");
  auto* o_conv = app.add_option("--convergence", convergence, "criterion: rel|ztest")
                     ->check(CLI::IsMember({"rel", "ztest"}));
  auto* o_alpha = app.add_option("--alpha", alpha, "z-test level");
  auto* o_sym = app.add_option("--symmetrize", symmetrize, "rule: intersection|union")
                    ->check(CLI::IsMember({"intersection", "union"}));
  auto* o_level = app.add_option("--level", level, "confidence level");
  auto* o_icpt = app.add_flag("--intercept", intercept, "fit an unpenalized intercept");

  std::vector<CLI::App*> subs;
  for (const char* name : {"fit-graph", "fit-glm", "infer", "simulate", "roc-bench",
                           "coverage-bench"}) {
    auto* s = app.add_subcommand(name, "");
    s->fallthrough();
    subs.push_back(s);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    panda::RunConfig rc;
    if (o_config->count()) rc = panda::load_config(config);
    for (auto* s : subs)
      if (s->parsed()) rc.command = s->get_name();
    if (o_input->count()) rc.input = input;
    if (o_truth->count()) rc.truth = truth;
    if (o_resp->count()) rc.response = response;
    if (o_output->count()) rc.output = output;
    if (o_method->count()) rc.method = method;
    if (o_noise->count()) rc.noise.kind = noise_kind;
    if (o_lambda->count()) rc.noise.lambda = lambda;
    if (o_grid->count()) rc.lambda_grid = grid;
    if (o_seed->count()) rc.engine.seed = seed;
    if (o_ne->count()) {
      rc.engine.n_e = n_e;
      rc.n_e_set = true;
    }
    if (o_m->count()) rc.engine.m = m;
    if (o_tau0->count()) rc.engine.tau0 = tau0;
    if (o_r->count()) rc.engine.r = r;
    if (o_maxit->count()) rc.engine.T = max_iter;
    if (o_conv->count())
      rc.engine.criterion = convergence == "ztest" ? panda::Convergence::ZTest
                                                   : panda::Convergence::RelChange;
    if (o_alpha->count()) rc.engine.alpha = alpha;
    if (o_sym->count())
      rc.engine.sym = symmetrize == "union" ? panda::Symmetrize::Union
                                            : panda::Symmetrize::Intersection;
    if (o_level->count()) rc.level = level;
    if (o_icpt->count()) rc.engine.intercept = intercept;

    if (rc.command.empty()) {
      std::cerr << "error: no command given (subcommand or config \"command\")\n";
      std::cerr << app.help() << "\n";
      return 1;
    }
    return panda::run(rc);
  } catch (const panda::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
