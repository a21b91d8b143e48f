#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include "panda/app.hpp"
#include "panda/io.hpp"

using namespace panda;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(PANDA_CLI_BIN) + " " + args;
  int ret = std::system(cmd.c_str());
  REQUIRE(ret != -1);
  return WEXITSTATUS(ret);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// two strongly correlated unit-variance columns
void write_correlated_csv(const fs::path& p, std::uint64_t seed) {
  Rng rng = make_stream(seed);
  std::ostringstream ss;
  ss << "a,b\n";
  for (int i = 0; i < 200; ++i) {
    double u = rnorm(rng);
    ss << u << "," << 0.8 * u + 0.6 * rnorm(rng) << "\n";
  }
  write_file(p, ss.str());
}

}  // namespace

TEST_CASE("categorical columns expand to reference-coded indicators") {
  fs::path d = fresh_dir("panda_cli_ingest");
  write_file(d / "cat.csv",
             "color,size\nred,1.2\ngreen,0.8\nblue,1.5\ngreen,2.0\nred,0.9\nblue,1.1\n");
  Schema schema;
  schema["color"] = ColumnSpec{"categorical", 1.0};
  Dataset ds = ingest_csv((d / "cat.csv").string(), schema);
  REQUIRE(ds.names.size() == 3);  // blue is the dropped reference level
  CHECK(ds.names[0] == "color=green");
  CHECK(ds.names[1] == "color=red");
  CHECK(ds.names[2] == "size");
  CHECK(ds.families[0].family == Family::Bernoulli);
  CHECK(ds.families[1].family == Family::Bernoulli);
  CHECK(ds.families[2].family == Family::Gaussian);
  Eigen::VectorXd green(6), red(6);
  green << 0, 1, 0, 1, 0, 0;
  red << 1, 0, 0, 0, 1, 0;
  CHECK(ds.data.col(0) == green);
  CHECK(ds.data.col(1) == red);
}

TEST_CASE("gaussian columns come out standardized") {
  fs::path d = fresh_dir("panda_cli_std");
  Rng rng = make_stream(77);
  std::ostringstream ss;
  ss << "u,v\n";
  for (int i = 0; i < 40; ++i)
    ss << 3.0 + 2.0 * rnorm(rng) << "," << -1.0 + 0.5 * rnorm(rng) << "\n";
  write_file(d / "g.csv", ss.str());
  Dataset ds = ingest_csv((d / "g.csv").string());
  for (int c = 0; c < 2; ++c) {
    CHECK(std::abs(ds.data.col(c).mean()) < 1e-12);
    CHECK(ds.data.col(c).squaredNorm() / 39.0 == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("ingestion errors carry row and column positions") {
  fs::path d = fresh_dir("panda_cli_err");

  write_file(d / "miss.csv", "a,b\n1.0,2.0\n3.0,\n");
  try {
    ingest_csv((d / "miss.csv").string());
    FAIL("expected a missing-value error");
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    CHECK(msg.find("row 2") != std::string::npos);
    CHECK(msg.find("column b") != std::string::npos);
  }

  write_file(d / "ragged.csv", "a,b\n1.0,2.0\n3.0\n");
  try {
    ingest_csv((d / "ragged.csv").string());
    FAIL("expected a ragged-row error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }

  write_file(d / "alpha.csv", "a,b\n1.0,oops\n");
  try {
    ingest_csv((d / "alpha.csv").string());
    FAIL("expected a non-numeric error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("oops") != std::string::npos);
  }

  // declared binary column with a fractional value
  write_file(d / "bin.csv", "y,x\n0,1.0\n0.5,2.0\n");
  Schema schema;
  schema["y"] = ColumnSpec{"bernoulli", 1.0};
  CHECK_THROWS_AS(ingest_csv((d / "bin.csv").string(), schema), ValidationError);

  // schema referencing an absent column
  Schema ghost;
  ghost["zzz"] = ColumnSpec{"gaussian", 1.0};
  write_file(d / "ok.csv", "a,b\n1.0,2.0\n3.0,4.0\n");
  CHECK_THROWS_AS(ingest_csv((d / "ok.csv").string(), ghost), ValidationError);
}

TEST_CASE("written matrices read back bit-exact") {
  fs::path d = fresh_dir("panda_cli_rt");
  Rng rng = make_stream(83);
  Eigen::MatrixXd M = rnorm_mat(rng, 7, 3);
  std::vector<std::string> names = {"x0", "x1", "x2"};
  write_matrix_csv((d / "m.csv").string(), names, M);
  NamedMatrix back = read_matrix_csv((d / "m.csv").string());
  CHECK(back.names == names);
  CHECK(back.data == M);  // 17 significant digits round-trip doubles exactly

  Eigen::MatrixXi A(3, 3);
  A << 0, 1, 0, 1, 0, 1, 0, 1, 0;
  write_matrix_csv((d / "a.csv").string(), names, A);
  CHECK(read_adjacency_csv((d / "a.csv").string()) == A);

  write_edge_list((d / "e.tsv").string(), names, M.topRows(3), A);
  auto edges = read_edge_list((d / "e.tsv").string());
  REQUIRE(edges.size() == 2);
  CHECK(edges[0].node_i == "x0");
  CHECK(edges[0].node_j == "x1");
  CHECK(edges[0].weight == M(0, 1));

  RocResult roc;
  roc.grid = {0.1, 0.2};
  roc.points = {{0.0, 0.5}, {0.25, 1.0}};
  roc.auc = 0.875;
  write_roc_table((d / "roc.tsv").string(), roc);
  RocResult rb = read_roc_table((d / "roc.tsv").string());
  CHECK(rb.grid == roc.grid);
  CHECK(rb.points == roc.points);
  CHECK(rb.auc == roc.auc);
}

TEST_CASE("fit-graph recovers the single edge of a correlated pair") {
  fs::path d = fresh_dir("panda_cli_pair");
  write_correlated_csv(d / "data.csv", 90);
  int code = run_cli("fit-graph --input " + (d / "data.csv").string() +
                     " --output " + (d / "out").string() +
                     " --method ns --noise lasso --lambda 0.005 --n-e 200" +
                     " --m 5 --r 20 --max-iter 30 --seed 5");
  CHECK(code == 0);
  auto edges = read_edge_list((d / "out" / "edges.tsv").string());
  REQUIRE(edges.size() == 1);
  CHECK(edges[0].node_i == "a");
  CHECK(edges[0].node_j == "b");
  CHECK(edges[0].weight == Catch::Approx(0.8).margin(0.15));
  CHECK(fs::exists(d / "out" / "theta.csv"));
  CHECK(fs::exists(d / "out" / "adjacency.csv"));
  CHECK(fs::exists(d / "out" / "trace.jsonl"));
  CHECK(slurp(d / "out" / "summary.json").find("\"converged\":true") != std::string::npos);
}

TEST_CASE("identical seeds give byte-identical artifacts") {
  fs::path d = fresh_dir("panda_cli_det");
  write_correlated_csv(d / "data.csv", 91);
  std::string base = "fit-graph --input " + (d / "data.csv").string() +
                     " --method ns --noise lasso --lambda 0.005 --n-e 100" +
                     " --m 3 --r 10 --max-iter 20 --seed 12 --output ";
  CHECK(run_cli(base + (d / "r1").string()) == 0);
  CHECK(run_cli(base + (d / "r2").string()) == 0);
  CHECK(slurp(d / "r1" / "edges.tsv") == slurp(d / "r2" / "edges.tsv"));
  CHECK(slurp(d / "r1" / "theta.csv") == slurp(d / "r2" / "theta.csv"));
  CHECK(slurp(d / "r1" / "trace.jsonl") == slurp(d / "r2" / "trace.jsonl"));
}

TEST_CASE("simulate writes a lattice truth with the expected edge count") {
  fs::path d = fresh_dir("panda_cli_sim");
  write_file(d / "cfg.json",
             "{\"command\":\"simulate\",\"graph\":{\"kind\":\"lattice\",\"p\":50,"
             "\"bandwidth\":1,\"seed\":4},\"sim\":{\"n\":100},\"output\":\"" +
                 (d / "out").string() + "\"}");
  CHECK(run_cli("--config " + (d / "cfg.json").string()) == 0);
  Eigen::MatrixXi truth = read_adjacency_csv((d / "out" / "truth_adjacency.csv").string());
  CHECK(edge_count(truth) == 49);
  NamedMatrix data = read_matrix_csv((d / "out" / "data.csv").string());
  CHECK(data.data.rows() == 100);
  CHECK(data.data.cols() == 50);
}

TEST_CASE("the simulate to fit to benchmark loop closes") {
  fs::path d = fresh_dir("panda_cli_loop");
  write_file(d / "sim.json",
             "{\"command\":\"simulate\",\"graph\":{\"kind\":\"lattice\",\"p\":8,"
             "\"bandwidth\":1,\"seed\":6},\"sim\":{\"n\":150},\"output\":\"" +
                 (d / "sim").string() + "\"}");
  REQUIRE(run_cli("--config " + (d / "sim.json").string()) == 0);

  int code = run_cli("roc-bench --input " + (d / "sim" / "data.csv").string() +
                     " --truth " + (d / "sim" / "truth_adjacency.csv").string() +
                     " --output " + (d / "roc").string() +
                     " --method ns --noise lasso" +
                     " --lambda-grid 0.0002,0.001,0.004,0.02,0.1" +
                     " --n-e 150 --m 1 --r 10 --max-iter 15 --seed 9");
  CHECK(code == 0);
  RocResult roc = read_roc_table((d / "roc" / "roc.tsv").string());
  REQUIRE(roc.grid.size() == 5);
  REQUIRE(roc.points.size() == 5);
  for (auto [fpr, tpr] : roc.points) {
    CHECK(fpr >= 0.0);
    CHECK(fpr <= 1.0);
    CHECK(tpr >= 0.0);
    CHECK(tpr <= 1.0);
  }
  CHECK(roc.auc >= 0.0);
  CHECK(roc.auc <= 1.0);
}

TEST_CASE("glm fitting and inference write coefficient tables") {
  fs::path d = fresh_dir("panda_cli_glm");
  Rng rng = make_stream(95);
  std::ostringstream ss;
  ss << "y,x1,x2\n";
  for (int i = 0; i < 120; ++i) {
    double x1 = rnorm(rng), x2 = rnorm(rng);
    ss << 1.5 * x1 - 0.7 * x2 + rnorm(rng) << "," << x1 << "," << x2 << "\n";
  }
  write_file(d / "data.csv", ss.str());
  // response declared non-standardized via schema in config
  write_file(d / "cfg.json",
             "{\"command\":\"infer\",\"input\":\"" + (d / "data.csv").string() +
                 "\",\"response\":\"y\",\"output\":\"" + (d / "out").string() +
                 "\",\"noise\":{\"kind\":\"lasso\",\"lambda\":1e-6}," +
                 "\"engine\":{\"T\":30,\"m\":10,\"r\":8,\"seed\":2}}");
  CHECK(run_cli("--config " + (d / "cfg.json").string()) == 0);
  std::string table = slurp(d / "out" / "inference.tsv");
  CHECK(table.find("coefficient\testimate\tse\tlower\tupper\tzeroed") != std::string::npos);
  CHECK(table.find("x1") != std::string::npos);
  CHECK(table.find("x2") != std::string::npos);
  CHECK(fs::exists(d / "out" / "theta.csv"));
}

TEST_CASE("validation failures exit with status one") {
  fs::path d = fresh_dir("panda_cli_fail");
  CHECK(run_cli("fit-graph --input " + (d / "absent.csv").string() + " --output " +
                (d / "out").string()) == 1);
  write_correlated_csv(d / "data.csv", 96);
  CHECK(run_cli("fit-graph --input " + (d / "data.csv").string() + " --output " +
                (d / "out").string() + " --method bogus") == 1);
  CHECK(run_cli("--config " + (d / "nope.json").string()) == 1);
  write_file(d / "bad.json", "{\"command\":\"fit-graph\",");
  CHECK(run_cli("--config " + (d / "bad.json").string()) == 1);
}

TEST_CASE("exhausted budgets exit with the non-convergence status") {
  fs::path d = fresh_dir("panda_cli_noconv");
  write_correlated_csv(d / "data.csv", 97);
  write_file(d / "cfg.json",
             "{\"command\":\"fit-graph\",\"method\":\"ns\",\"input\":\"" +
                 (d / "data.csv").string() + "\",\"output\":\"" + (d / "out").string() +
                 "\",\"noise\":{\"kind\":\"lasso\",\"lambda\":0.005}," +
                 "\"engine\":{\"T\":5,\"m\":1,\"r\":3,\"n_e\":200," +
                 "\"rel_tau\":1e-14,\"seed\":3}}");
  CHECK(run_cli("--config " + (d / "cfg.json").string()) == 2);
  // artifacts still present, flagged as not converged
  CHECK(fs::exists(d / "out" / "edges.tsv"));
  CHECK(slurp(d / "out" / "summary.json").find("\"converged\":false") != std::string::npos);
}

TEST_CASE("flags override config file values") {
  fs::path d = fresh_dir("panda_cli_override");
  write_correlated_csv(d / "data.csv", 98);
  write_file(d / "cfg.json",
             "{\"command\":\"fit-graph\",\"method\":\"ns\",\"input\":\"" +
                 (d / "data.csv").string() + "\",\"output\":\"" + (d / "bad").string() +
                 "\",\"noise\":{\"kind\":\"lasso\",\"lambda\":0.005}," +
                 "\"engine\":{\"T\":20,\"m\":3,\"r\":10,\"n_e\":100,\"seed\":1}}");
  // --output redirects away from the config's directory
  CHECK(run_cli("--config " + (d / "cfg.json").string() + " --output " +
                (d / "good").string()) == 0);
  CHECK(fs::exists(d / "good" / "edges.tsv"));
  CHECK_FALSE(fs::exists(d / "bad" / "edges.tsv"));
}
