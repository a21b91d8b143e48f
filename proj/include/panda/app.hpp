#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "panda/common.hpp"
#include "panda/engine.hpp"
#include "panda/ggm.hpp"
#include "panda/inference.hpp"
#include "panda/io.hpp"
#include "panda/simgen.hpp"

// Command layer: a RunConfig describes one job (fit, inference, simulation or
// benchmark); run() executes it and writes its artifacts to the output
// directory. Exit statuses: 0 success, 2 finished without convergence
// (artifacts still written), 1 validation failure. JSON config files mirror
// RunConfig; command-line flags override individual fields.

namespace panda {

struct NoiseConfig {
  std::string kind = "lasso";  // lasso|ridge|bridge|en|adalasso|scad|group|fused
  double lambda = 0.1;
  double gamma = 1.0;
  double sigma2 = 0.0;
  double a = 3.7;
  std::vector<std::vector<int>> groups;
  std::vector<double> consistent;
  bool group_size_factor = true;
};

inline NoiseSpec to_noise_spec(const NoiseConfig& c) {
  NoiseSpec s;
  if (c.kind == "lasso") {
    s = NoiseSpec::lasso(c.lambda);
  } else if (c.kind == "ridge") {
    s = NoiseSpec::ridge(c.lambda);
  } else if (c.kind == "bridge") {
    s = NoiseSpec::bridge(c.lambda, c.gamma);
  } else if (c.kind == "en") {
    s = NoiseSpec::elastic_net(c.lambda, c.sigma2);
  } else if (c.kind == "adalasso") {
    Eigen::VectorXd pilot(static_cast<int>(c.consistent.size()));
    for (std::size_t k = 0; k < c.consistent.size(); ++k)
      pilot(static_cast<int>(k)) = c.consistent[k];
    s = NoiseSpec::adaptive_lasso(c.lambda, c.gamma, std::move(pilot));
  } else if (c.kind == "scad") {
    s = NoiseSpec::scad(c.lambda, c.a);
  } else if (c.kind == "group") {
    s = NoiseSpec::group_lasso(c.lambda, c.groups, c.group_size_factor);
  } else if (c.kind == "fused") {
    s = NoiseSpec::fused_ridge(c.lambda, c.groups);
  } else {
    throw ValidationError("unknown noise kind '" + c.kind + "'");
  }
  return s;
}

struct RunConfig {
  std::string command;  // fit-graph|fit-glm|infer|simulate|roc-bench|coverage-bench
  std::string input;
  std::string truth;     // adjacency CSV for roc-bench
  std::string response;  // response column for fit-glm / infer
  std::string output = ".";
  std::string method = "ns";  // ns|cd|scio|space|gridge
  NoiseConfig noise;
  PandaConfig engine;
  bool n_e_set = false;  // user pinned n_e (JSON or flag)
  std::vector<double> lambda_grid;
  Schema schema;

  // simulate
  AdjacencySpec graph;
  int sim_n = 100;
  double diag_dominance = 0.2;
  double edge_weight = 0.4;

  // coverage-bench scenario
  std::string scenario_family = "gaussian";
  double scenario_nb_r = 1.0;
  int scenario_n = 100;
  std::vector<double> scenario_beta;
  double scenario_x_sd = 1.0;
  bool scenario_x_uniform = false;
  double scenario_x_lo = -1.0;
  double scenario_x_hi = 1.0;
  double scenario_sigma = 1.0;
  double scenario_intercept = 0.0;
  std::uint64_t scenario_seed = 1;
  int replicates = 100;
  double level = 0.95;
};

namespace detail {

inline void apply_noise_json(NoiseConfig& c, const nlohmann::json& j) {
  c.kind = j.value("kind", c.kind);
  c.lambda = j.value("lambda", c.lambda);
  c.gamma = j.value("gamma", c.gamma);
  c.sigma2 = j.value("sigma2", c.sigma2);
  c.a = j.value("a", c.a);
  c.group_size_factor = j.value("group_size_factor", c.group_size_factor);
  if (j.contains("groups")) c.groups = j["groups"].get<std::vector<std::vector<int>>>();
  if (j.contains("consistent")) c.consistent = j["consistent"].get<std::vector<double>>();
}

inline void apply_engine_json(RunConfig& rc, const nlohmann::json& j) {
  PandaConfig& e = rc.engine;
  e.T = j.value("T", e.T);
  if (j.contains("n_e")) {
    e.n_e = j["n_e"].get<int>();
    rc.n_e_set = true;
  }
  e.m = j.value("m", e.m);
  e.tau0 = j.value("tau0", e.tau0);
  e.r = j.value("r", e.r);
  e.seed = j.value("seed", e.seed);
  if (j.contains("criterion")) {
    std::string s = j["criterion"].get<std::string>();
    if (s == "rel")
      e.criterion = Convergence::RelChange;
    else if (s == "ztest")
      e.criterion = Convergence::ZTest;
    else
      throw ValidationError("criterion must be rel or ztest");
  }
  e.rel_tau = j.value("rel_tau", e.rel_tau);
  e.alpha = j.value("alpha", e.alpha);
  if (j.contains("symmetrize")) {
    std::string s = j["symmetrize"].get<std::string>();
    if (s == "intersection")
      e.sym = Symmetrize::Intersection;
    else if (s == "union")
      e.sym = Symmetrize::Union;
    else
      throw ValidationError("symmetrize must be intersection or union");
  }
  e.multi_start = j.value("multi_start", e.multi_start);
  e.init_ridge = j.value("init_ridge", e.init_ridge);
  e.tau1 = j.value("tau1", e.tau1);
  e.cd_k = j.value("cd_k", e.cd_k);
  e.intercept = j.value("intercept", e.intercept);
}

inline Graph graph_kind(const std::string& s) {
  if (s == "scalefree") return Graph::ScaleFree;
  if (s == "lattice") return Graph::Lattice;
  if (s == "hub") return Graph::Hub;
  throw ValidationError("graph kind must be scalefree, lattice or hub");
}

}  // namespace detail

inline void apply_json(RunConfig& rc, const nlohmann::json& j) {
  rc.command = j.value("command", rc.command);
  rc.input = j.value("input", rc.input);
  rc.truth = j.value("truth", rc.truth);
  rc.response = j.value("response", rc.response);
  rc.output = j.value("output", rc.output);
  rc.method = j.value("method", rc.method);
  if (j.contains("noise")) detail::apply_noise_json(rc.noise, j["noise"]);
  if (j.contains("engine")) detail::apply_engine_json(rc, j["engine"]);
  if (j.contains("lambda_grid"))
    rc.lambda_grid = j["lambda_grid"].get<std::vector<double>>();
  if (j.contains("schema")) {
    for (auto it = j["schema"].begin(); it != j["schema"].end(); ++it) {
      ColumnSpec cs;
      if (it.value().is_string()) {
        cs.type = it.value().get<std::string>();
      } else {
        cs.type = it.value().value("type", cs.type);
        cs.nb_r = it.value().value("nb_r", cs.nb_r);
      }
      rc.schema[it.key()] = cs;
    }
  }
  if (j.contains("graph")) {
    const auto& g = j["graph"];
    if (g.contains("kind")) rc.graph.kind = detail::graph_kind(g["kind"].get<std::string>());
    rc.graph.p = g.value("p", rc.graph.p);
    rc.graph.attachment_m = g.value("attachment_m", rc.graph.attachment_m);
    rc.graph.bandwidth = g.value("bandwidth", rc.graph.bandwidth);
    rc.graph.n_hubs = g.value("n_hubs", rc.graph.n_hubs);
    rc.graph.target_edges = g.value("target_edges", rc.graph.target_edges);
    rc.graph.seed = g.value("seed", rc.graph.seed);
  }
  if (j.contains("sim")) {
    const auto& s = j["sim"];
    rc.sim_n = s.value("n", rc.sim_n);
    rc.diag_dominance = s.value("diag_dominance", rc.diag_dominance);
    rc.edge_weight = s.value("weight", rc.edge_weight);
  }
  if (j.contains("scenario")) {
    const auto& s = j["scenario"];
    rc.scenario_family = s.value("family", rc.scenario_family);
    rc.scenario_nb_r = s.value("nb_r", rc.scenario_nb_r);
    rc.scenario_n = s.value("n", rc.scenario_n);
    if (s.contains("beta")) rc.scenario_beta = s["beta"].get<std::vector<double>>();
    rc.scenario_x_sd = s.value("x_sd", rc.scenario_x_sd);
    rc.scenario_x_uniform = s.value("x_uniform", rc.scenario_x_uniform);
    rc.scenario_x_lo = s.value("x_lo", rc.scenario_x_lo);
    rc.scenario_x_hi = s.value("x_hi", rc.scenario_x_hi);
    rc.scenario_sigma = s.value("sigma", rc.scenario_sigma);
    rc.scenario_intercept = s.value("intercept_value", rc.scenario_intercept);
    rc.scenario_seed = s.value("seed", rc.scenario_seed);
  }
  rc.replicates = j.value("replicates", rc.replicates);
  rc.level = j.value("level", rc.level);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config '" + path + "'");
  RunConfig rc;
  try {
    nlohmann::json j = nlohmann::json::parse(in);
    apply_json(rc, j);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config '" + path + "': " + e.what());
  }
  return rc;
}

namespace detail {

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline void write_summary(const std::string& dir, const RunConfig& rc, bool converged) {
  auto out = open_out(join_path(dir, "summary.json"));
  out << "{\"command\":\"" << rc.command << "\",\"method\":\"" << rc.method
      << "\",\"converged\":" << (converged ? "true" : "false") << "}\n";
}

inline void require_input(const RunConfig& rc) {
  if (rc.input.empty()) throw ValidationError("input file required");
  if (!std::filesystem::exists(rc.input))
    throw ValidationError("input '" + rc.input + "' does not exist");
}

inline void require_all_gaussian(const Dataset& ds, const std::string& method) {
  for (const auto& f : ds.families)
    if (f.family != Family::Gaussian)
      throw ValidationError("method " + method + " requires all-Gaussian columns");
}

inline int run_fit_graph(const RunConfig& rc) {
  require_input(rc);
  Dataset ds = ingest_csv(rc.input, rc.schema);
  NoiseSpec spec = to_noise_spec(rc.noise);
  const std::string& d = rc.output;
  std::filesystem::create_directories(d);
  bool conv = true;

  if (rc.method == "ns") {
    GraphEstimate est = run_panda_ns(ds.data, ds.families, spec, rc.engine);
    write_matrix_csv(join_path(d, "theta.csv"), ds.names, est.theta);
    write_matrix_csv(join_path(d, "adjacency.csv"), ds.names, est.adjacency);
    write_edge_list(join_path(d, "edges.tsv"), ds.names, est.theta, est.adjacency);
    if (est.has_precision)
      write_matrix_csv(join_path(d, "precision.csv"), ds.names, est.precision);
    write_trace_jsonl(join_path(d, "trace.jsonl"), est.trace);
    conv = est.trace.converged;
  } else if (rc.method == "space") {
    require_all_gaussian(ds, rc.method);
    SpaceEstimate est = run_panda_space(ds.data, spec, rc.engine);
    write_matrix_csv(join_path(d, "theta.csv"), ds.names, est.rho);
    write_matrix_csv(join_path(d, "adjacency.csv"), ds.names, est.adjacency);
    write_edge_list(join_path(d, "edges.tsv"), ds.names, est.rho, est.adjacency);
    write_trace_jsonl(join_path(d, "trace.jsonl"), est.trace);
    conv = est.trace.converged;
  } else if (rc.method == "cd") {
    require_all_gaussian(ds, rc.method);
    LdlEstimate est = run_panda_cd(ds.data, spec, rc.engine);
    write_matrix_csv(join_path(d, "theta.csv"), ds.names, est.L);
    write_matrix_csv(join_path(d, "adjacency.csv"), ds.names, est.adjacency);
    write_matrix_csv(join_path(d, "precision.csv"), ds.names, est.omega);
    write_edge_list(join_path(d, "edges.tsv"), ds.names, est.omega, est.adjacency);
    write_trace_jsonl(join_path(d, "trace.jsonl"), est.trace);
    conv = est.trace.converged;
  } else if (rc.method == "scio") {
    require_all_gaussian(ds, rc.method);
    ScioEstimate est = run_panda_scio(ds.data, spec, rc.engine);
    write_matrix_csv(join_path(d, "adjacency.csv"), ds.names, est.adjacency);
    write_matrix_csv(join_path(d, "precision.csv"), ds.names, est.omega);
    write_edge_list(join_path(d, "edges.tsv"), ds.names, est.omega, est.adjacency);
    write_trace_jsonl(join_path(d, "trace.jsonl"), est.trace);
    conv = est.trace.converged;
  } else if (rc.method == "gridge") {
    require_all_gaussian(ds, rc.method);
    GridgeEstimate est = run_panda_gridge(ds.data, rc.noise.lambda, rc.engine);
    write_matrix_csv(join_path(d, "precision.csv"), ds.names, est.omega);
    write_trace_jsonl(join_path(d, "trace.jsonl"), est.trace);
    conv = est.trace.converged;
  } else {
    throw ValidationError("unknown method '" + rc.method + "'");
  }
  write_summary(d, rc, conv);
  return conv ? 0 : 2;
}

struct GlmJob {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  NodeFamily family = NodeFamily::gaussian();
  std::vector<std::string> coef_names;  // includes intercept when configured
  std::vector<std::string> x_names;
};

inline GlmJob split_response(const Dataset& ds, const std::string& response, bool intercept) {
  if (response.empty()) throw ValidationError("response column required");
  auto it = std::find(ds.names.begin(), ds.names.end(), response);
  if (it == ds.names.end())
    throw ValidationError("response column '" + response + "' not in data");
  const int ri = static_cast<int>(it - ds.names.begin());
  const int p = static_cast<int>(ds.names.size());
  GlmJob job;
  job.y = ds.data.col(ri);
  job.family = ds.families[ri];
  job.X.resize(ds.data.rows(), p - 1);
  int c = 0;
  for (int k = 0; k < p; ++k) {
    if (k == ri) continue;
    job.X.col(c) = ds.data.col(k);
    job.x_names.push_back(ds.names[k]);
    ++c;
  }
  if (intercept) job.coef_names.push_back("intercept");
  for (const auto& nm : job.x_names) job.coef_names.push_back(nm);
  return job;
}

inline int run_fit_glm(const RunConfig& rc, bool with_inference) {
  require_input(rc);
  Dataset ds = ingest_csv(rc.input, rc.schema);
  GlmJob job = split_response(ds, rc.response, rc.engine.intercept);
  NoiseSpec spec = to_noise_spec(rc.noise);
  PandaConfig eng = rc.engine;
  const int n = static_cast<int>(job.X.rows());
  const int q = static_cast<int>(job.X.cols()) + (eng.intercept ? 1 : 0);
  if (with_inference && !rc.n_e_set)
    eng.n_e = std::max((n + 9) / 10, q - n + 1);  // small-noise inference default

  GlmEstimate est = run_panda_glm(job.X, job.y, job.family, spec, eng);
  const std::string& d = rc.output;
  std::filesystem::create_directories(d);
  write_vector_csv(join_path(d, "theta.csv"), job.coef_names, est.theta, "estimate");
  write_trace_jsonl(join_path(d, "trace.jsonl"), est.trace);
  if (with_inference) {
    InferenceReport rep =
        run_inference(est, job.family, job.X, job.y, spec, eng, rc.level);
    write_inference_table(join_path(d, "inference.tsv"), job.coef_names, rep, est.zeroed);
  }
  write_summary(d, rc, est.trace.converged);
  return est.trace.converged ? 0 : 2;
}

inline int run_simulate(const RunConfig& rc) {
  Eigen::MatrixXi A = gen_adjacency(rc.graph);
  Eigen::MatrixXd Om = gen_precision(A, rc.diag_dominance, rc.edge_weight, rc.graph.seed);
  Eigen::MatrixXd X = sample_ggm(Om, rc.sim_n, rc.graph.seed + 1);
  std::vector<std::string> names;
  for (int j = 0; j < rc.graph.p; ++j) names.push_back("x" + std::to_string(j));
  const std::string& d = rc.output;
  std::filesystem::create_directories(d);
  write_matrix_csv(join_path(d, "data.csv"), names, X);
  write_matrix_csv(join_path(d, "truth_adjacency.csv"), names, A);
  write_matrix_csv(join_path(d, "precision_true.csv"), names, Om);
  write_summary(d, rc, true);
  return 0;
}

inline int run_roc_bench(const RunConfig& rc) {
  require_input(rc);
  if (rc.truth.empty()) throw ValidationError("truth adjacency file required");
  if (!std::filesystem::exists(rc.truth))
    throw ValidationError("truth '" + rc.truth + "' does not exist");
  if (rc.lambda_grid.size() < 2)
    throw ValidationError("lambda grid needs at least two values");
  Dataset ds = ingest_csv(rc.input, rc.schema);
  Eigen::MatrixXi truth = read_adjacency_csv(rc.truth);
  if (truth.rows() != ds.data.cols())
    throw ValidationError("truth size differs from column count");

  std::vector<Eigen::MatrixXi> fits;
  bool all_conv = true;
  for (double lam : rc.lambda_grid) {
    NoiseConfig nc = rc.noise;
    nc.lambda = lam;
    NoiseSpec spec = to_noise_spec(nc);
    if (rc.method == "ns") {
      GraphEstimate est = run_panda_ns(ds.data, ds.families, spec, rc.engine);
      fits.push_back(est.adjacency);
      all_conv = all_conv && est.trace.converged;
    } else if (rc.method == "space") {
      require_all_gaussian(ds, rc.method);
      SpaceEstimate est = run_panda_space(ds.data, spec, rc.engine);
      fits.push_back(est.adjacency);
      all_conv = all_conv && est.trace.converged;
    } else if (rc.method == "cd") {
      require_all_gaussian(ds, rc.method);
      LdlEstimate est = run_panda_cd(ds.data, spec, rc.engine);
      fits.push_back(est.adjacency);
      all_conv = all_conv && est.trace.converged;
    } else if (rc.method == "scio") {
      require_all_gaussian(ds, rc.method);
      ScioEstimate est = run_panda_scio(ds.data, spec, rc.engine);
      fits.push_back(est.adjacency);
      all_conv = all_conv && est.trace.converged;
    } else {
      throw ValidationError("method '" + rc.method + "' has no sparsity path");
    }
  }
  RocResult roc = roc_curve(rc.lambda_grid, fits, truth);
  const std::string& d = rc.output;
  std::filesystem::create_directories(d);
  write_roc_table(join_path(d, "roc.tsv"), roc);
  write_summary(d, rc, all_conv);
  return 0;
}

inline int run_coverage_bench(const RunConfig& rc) {
  GlmScenario sc;
  sc.family = family_from_type(rc.scenario_family, rc.scenario_nb_r);
  sc.n = rc.scenario_n;
  sc.beta.resize(static_cast<int>(rc.scenario_beta.size()));
  for (std::size_t k = 0; k < rc.scenario_beta.size(); ++k)
    sc.beta(static_cast<int>(k)) = rc.scenario_beta[k];
  sc.x_sd = rc.scenario_x_sd;
  sc.x_uniform = rc.scenario_x_uniform;
  sc.x_lo = rc.scenario_x_lo;
  sc.x_hi = rc.scenario_x_hi;
  sc.sigma = rc.scenario_sigma;
  sc.intercept_value = rc.scenario_intercept;
  sc.seed = rc.scenario_seed;
  NoiseSpec spec = to_noise_spec(rc.noise);

  PandaConfig eng = rc.engine;
  if (!rc.n_e_set) {
    const int q = static_cast<int>(sc.beta.size()) + (eng.intercept ? 1 : 0);
    eng.n_e = std::max((sc.n + 9) / 10, q - sc.n + 1);
  }
  CoverageResult cov = coverage_experiment(sc, spec, rc.replicates, rc.level, eng);

  const int qs = static_cast<int>(sc.beta.size());
  Eigen::VectorXd truth(qs + (eng.intercept ? 1 : 0));
  std::vector<std::string> names;
  if (eng.intercept) {
    truth(0) = sc.intercept_value;
    truth.tail(qs) = sc.beta;
    names.push_back("intercept");
  } else {
    truth = sc.beta;
  }
  for (int k = 0; k < qs; ++k) names.push_back("b" + std::to_string(k));

  const std::string& d = rc.output;
  std::filesystem::create_directories(d);
  write_coverage_table(join_path(d, "coverage.tsv"), names, truth, cov);
  write_summary(d, rc, true);
  return 0;
}

}  // namespace detail

inline int run(const RunConfig& rc) {
  if (rc.command == "fit-graph") return detail::run_fit_graph(rc);
  if (rc.command == "fit-glm") return detail::run_fit_glm(rc, false);
  if (rc.command == "infer") return detail::run_fit_glm(rc, true);
  if (rc.command == "simulate") return detail::run_simulate(rc);
  if (rc.command == "roc-bench") return detail::run_roc_bench(rc);
  if (rc.command == "coverage-bench") return detail::run_coverage_bench(rc);
  throw ValidationError("unknown command '" + rc.command + "'");
}

}  // namespace panda
