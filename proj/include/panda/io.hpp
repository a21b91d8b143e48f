#pragma once

#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "panda/common.hpp"
#include "panda/engine.hpp"
#include "panda/glm.hpp"
#include "panda/inference.hpp"
#include "panda/simgen.hpp"

// Flat-file I/O: schema-driven CSV ingestion (categorical expansion,
// standardization) and the writers/readers for every artifact the command
// line emits. Numbers serialize with 17 significant digits.

namespace panda {

inline std::string fmt17(double v) {
  char b[64];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

struct ColumnSpec {
  std::string type = "gaussian";  // gaussian|bernoulli|poisson|exponential|
                                  // negbinomial|categorical
  double nb_r = 1.0;
};

using Schema = std::map<std::string, ColumnSpec>;

struct Dataset {
  Eigen::MatrixXd data;
  std::vector<NodeFamily> families;
  std::vector<std::string> names;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

inline double parse_double(const std::string& cell, int row, const std::string& col) {
  if (cell.empty())
    throw ValidationError("missing value at data row " + std::to_string(row) +
                          ", column " + col);
  char* end = nullptr;
  double v = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size())
    throw ValidationError("non-numeric value '" + cell + "' at data row " +
                          std::to_string(row) + ", column " + col);
  return v;
}

inline NodeFamily family_from_type(const std::string& type, double nb_r) {
  if (type == "gaussian") return NodeFamily::gaussian();
  if (type == "bernoulli") return NodeFamily::bernoulli();
  if (type == "poisson") return NodeFamily::poisson();
  if (type == "exponential") return NodeFamily::exponential();
  if (type == "negbinomial") return NodeFamily::negbinomial(nb_r);
  throw ValidationError("unknown column type '" + type + "'");
}

}  // namespace detail

// Read a headered CSV with declared column types. Categorical columns expand
// into k-1 Bernoulli indicators (first level in sorted order dropped);
// Gaussian columns come out standardized (mean 0, unit sample variance).
// Columns absent from the schema default to gaussian.
inline Dataset ingest_csv(const std::string& path, const Schema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty file '" + path + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header = detail::split_csv_line(line);
  const int ncol = static_cast<int>(header.size());
  for (const auto& [name, cs] : schema) {
    if (std::find(header.begin(), header.end(), name) == header.end())
      throw ValidationError("schema column '" + name + "' not in header");
    (void)cs;
  }

  std::vector<std::vector<std::string>> cells;
  int row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    auto parts = detail::split_csv_line(line);
    if (static_cast<int>(parts.size()) != ncol)
      throw ValidationError("data row " + std::to_string(row) + " has " +
                            std::to_string(parts.size()) + " cells, expected " +
                            std::to_string(ncol));
    cells.push_back(std::move(parts));
  }
  const int n = static_cast<int>(cells.size());
  if (n == 0) throw ValidationError("no data rows in '" + path + "'");

  Dataset ds;
  std::vector<Eigen::VectorXd> cols;
  for (int c = 0; c < ncol; ++c) {
    ColumnSpec cs;
    auto it = schema.find(header[c]);
    if (it != schema.end()) cs = it->second;

    if (cs.type == "categorical") {
      std::set<std::string> levels;
      for (int i = 0; i < n; ++i) {
        if (cells[i][c].empty())
          throw ValidationError("missing value at data row " + std::to_string(i + 1) +
                                ", column " + header[c]);
        levels.insert(cells[i][c]);
      }
      if (levels.size() < 2)
        throw ValidationError("categorical column " + header[c] +
                              " needs at least two levels");
      bool first = true;
      for (const auto& lv : levels) {
        if (first) {  // reference level dropped
          first = false;
          continue;
        }
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v(i) = cells[i][c] == lv ? 1.0 : 0.0;
        cols.push_back(std::move(v));
        ds.names.push_back(header[c] + "=" + lv);
        ds.families.push_back(NodeFamily::bernoulli());
      }
      continue;
    }

    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i)
      v(i) = detail::parse_double(cells[i][c], i + 1, header[c]);
    NodeFamily f = detail::family_from_type(cs.type, cs.nb_r);
    if (f.family == Family::Gaussian && n >= 2) {
      double mu = v.mean();
      v.array() -= mu;
      double sd = std::sqrt(v.squaredNorm() / (n - 1));
      if (!(sd > 0))
        throw ValidationError("constant column " + header[c] + " cannot be standardized");
      v /= sd;
    } else {
      validate_response(f, v);
    }
    cols.push_back(std::move(v));
    ds.names.push_back(header[c]);
    ds.families.push_back(f);
  }

  ds.data.resize(n, static_cast<int>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) ds.data.col(c) = cols[c];
  return ds;
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

namespace detail {
inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  return out;
}
}  // namespace detail

inline void write_matrix_csv(const std::string& path, const std::vector<std::string>& names,
                             const Eigen::MatrixXd& M) {
  if (static_cast<int>(names.size()) != M.cols())
    throw ValidationError("name count differs from column count");
  auto out = detail::open_out(path);
  for (std::size_t c = 0; c < names.size(); ++c)
    out << (c ? "," : "") << names[c];
  out << "\n";
  for (int i = 0; i < M.rows(); ++i) {
    for (int c = 0; c < M.cols(); ++c)
      out << (c ? "," : "") << fmt17(M(i, c));
    out << "\n";
  }
}

inline void write_matrix_csv(const std::string& path, const std::vector<std::string>& names,
                             const Eigen::MatrixXi& M) {
  if (static_cast<int>(names.size()) != M.cols())
    throw ValidationError("name count differs from column count");
  auto out = detail::open_out(path);
  for (std::size_t c = 0; c < names.size(); ++c)
    out << (c ? "," : "") << names[c];
  out << "\n";
  for (int i = 0; i < M.rows(); ++i) {
    for (int c = 0; c < M.cols(); ++c)
      out << (c ? "," : "") << M(i, c);
    out << "\n";
  }
}

struct NamedMatrix {
  std::vector<std::string> names;
  Eigen::MatrixXd data;
};

inline NamedMatrix read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty file '" + path + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  NamedMatrix nm;
  nm.names = detail::split_csv_line(line);
  std::vector<std::vector<double>> rows;
  int r = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++r;
    auto parts = detail::split_csv_line(line);
    if (parts.size() != nm.names.size())
      throw ValidationError("data row " + std::to_string(r) + " has " +
                            std::to_string(parts.size()) + " cells, expected " +
                            std::to_string(nm.names.size()));
    std::vector<double> vals;
    for (std::size_t c = 0; c < parts.size(); ++c)
      vals.push_back(detail::parse_double(parts[c], r, nm.names[c]));
    rows.push_back(std::move(vals));
  }
  nm.data.resize(static_cast<int>(rows.size()), static_cast<int>(nm.names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < rows[i].size(); ++c)
      nm.data(static_cast<int>(i), static_cast<int>(c)) = rows[i][c];
  return nm;
}

inline Eigen::MatrixXi read_adjacency_csv(const std::string& path) {
  NamedMatrix nm = read_matrix_csv(path);
  return nm.data.cast<int>();
}

inline void write_edge_list(const std::string& path, const std::vector<std::string>& names,
                            const Eigen::MatrixXd& weights, const Eigen::MatrixXi& adjacency) {
  auto out = detail::open_out(path);
  out << "node_i\tnode_j\tweight\n";
  for (int j = 0; j < adjacency.rows(); ++j)
    for (int k = j + 1; k < adjacency.cols(); ++k)
      if (adjacency(j, k))
        out << names[j] << "\t" << names[k] << "\t" << fmt17(weights(j, k)) << "\n";
}

struct EdgeListEntry {
  std::string node_i, node_j;
  double weight = 0.0;
};

inline std::vector<EdgeListEntry> read_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty file '" + path + "'");
  std::vector<EdgeListEntry> edges;
  int r = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++r;
    std::istringstream ss(line);
    EdgeListEntry e;
    std::string w;
    if (!(ss >> e.node_i >> e.node_j >> w))
      throw ValidationError("bad edge row " + std::to_string(r));
    e.weight = detail::parse_double(w, r, "weight");
    edges.push_back(std::move(e));
  }
  return edges;
}

inline void write_trace_jsonl(const std::string& path, const FitTrace& trace) {
  auto out = detail::open_out(path);
  for (const auto& it : trace.iters) {
    out << "{\"iter\":" << it.iter << ",\"loss\":" << fmt17(it.loss);
    if (it.has_z) out << ",\"z_stat\":" << fmt17(it.z);
    out << ",\"converged\":" << (it.converged ? "true" : "false") << "}\n";
  }
}

inline void write_inference_table(const std::string& path,
                                  const std::vector<std::string>& names,
                                  const InferenceReport& rep,
                                  const Eigen::VectorXi& zeroed) {
  const int q = static_cast<int>(rep.theta_bar.size());
  if (static_cast<int>(names.size()) != q)
    throw ValidationError("name count differs from coefficient count");
  auto out = detail::open_out(path);
  out << "coefficient\testimate\tse\tlower\tupper\tzeroed\n";
  for (int k = 0; k < q; ++k) {
    out << names[k] << "\t" << fmt17(rep.theta_bar(k)) << "\t" << fmt17(rep.se(k))
        << "\t" << fmt17(rep.intervals[k].first) << "\t"
        << fmt17(rep.intervals[k].second) << "\t"
        << (zeroed.size() == q && zeroed(k) ? 1 : 0) << "\n";
  }
}

inline void write_roc_table(const std::string& path, const RocResult& roc) {
  auto out = detail::open_out(path);
  out << "lambda\tfpr\ttpr\n";
  for (std::size_t i = 0; i < roc.grid.size(); ++i)
    out << fmt17(roc.grid[i]) << "\t" << fmt17(roc.points[i].first) << "\t"
        << fmt17(roc.points[i].second) << "\n";
  out << "auc\t" << fmt17(roc.auc) << "\n";
}

inline RocResult read_roc_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty file '" + path + "'");
  RocResult roc;
  int r = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++r;
    std::istringstream ss(line);
    std::string a, b, c;
    ss >> a >> b;
    if (a == "auc") {
      roc.auc = detail::parse_double(b, r, "auc");
      break;
    }
    if (!(ss >> c)) throw ValidationError("bad roc row " + std::to_string(r));
    roc.grid.push_back(detail::parse_double(a, r, "lambda"));
    roc.points.emplace_back(detail::parse_double(b, r, "fpr"),
                            detail::parse_double(c, r, "tpr"));
  }
  return roc;
}

inline void write_coverage_table(const std::string& path,
                                 const std::vector<std::string>& names,
                                 const Eigen::VectorXd& truth,
                                 const CoverageResult& cov) {
  const int q = static_cast<int>(cov.coverage.size());
  if (static_cast<int>(names.size()) != q)
    throw ValidationError("name count differs from coefficient count");
  auto out = detail::open_out(path);
  out << "coefficient\ttruth\tcoverage\twidth\n";
  for (int k = 0; k < q; ++k)
    out << names[k] << "\t" << fmt17(truth(k)) << "\t" << fmt17(cov.coverage(k))
        << "\t" << fmt17(cov.width(k)) << "\n";
  out << "completed\t" << cov.completed << "\n";
  out << "failed\t" << cov.failed.size() << "\n";
}

// Sorted point (FPR, TPR) rows re-sorted on read keep the written order
// because write happens post-sort; vector-valued theta serializes as a
// single-column matrix.
inline void write_vector_csv(const std::string& path, const std::vector<std::string>& names,
                             const Eigen::VectorXd& v, const std::string& value_header) {
  if (static_cast<int>(names.size()) != v.size())
    throw ValidationError("name count differs from length");
  auto out = detail::open_out(path);
  out << "coefficient," << value_header << "\n";
  for (int k = 0; k < v.size(); ++k)
    out << names[k] << "," << fmt17(v(k)) << "\n";
}

}  // namespace panda
