#include "refi/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "refi/kernels.hpp"
#include "refi/log.hpp"
#include "refi/parallel.hpp"

namespace refi {

namespace fs = std::filesystem;
using nlohmann::json;

bool Csr::has_edge(std::uint32_t i, std::uint32_t j) const {
  const auto nb = neighbors(i);
  return std::binary_search(nb.begin(), nb.end(), j);
}

std::size_t GraphBundle::anomaly_count() const {
  std::size_t c = 0;
  for (auto l : y) c += l;
  return c;
}

namespace {

Csr build_csr(std::size_t n, std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges,
              const std::string& name) {
  std::size_t self_loops = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> dir;
  dir.reserve(edges.size() * 2);
  for (auto [a, b] : edges) {
    if (a >= n || b >= n) {
      throw ValidationError("edge references node id " + std::to_string(std::max(a, b)) +
                            " outside [0," + std::to_string(n) + ")");
    }
    if (a == b) {
      ++self_loops;
      continue;
    }
    dir.emplace_back(a, b);
    dir.emplace_back(b, a);
  }
  if (self_loops > 0) {
    log::warn("dropped self-loops from input edge list",
              {{"graph", name}, {"count", std::to_string(self_loops)}});
  }
  std::sort(dir.begin(), dir.end());
  dir.erase(std::unique(dir.begin(), dir.end()), dir.end());

  Csr csr;
  csr.row_ptr.assign(n + 1, 0);
  for (const auto& [a, b] : dir) csr.row_ptr[a + 1]++;
  for (std::size_t i = 0; i < n; ++i) csr.row_ptr[i + 1] += csr.row_ptr[i];
  csr.col.resize(dir.size());
  std::vector<std::uint32_t> cursor(csr.row_ptr.begin(), csr.row_ptr.end() - 1);
  for (const auto& [a, b] : dir) csr.col[cursor[a]++] = b;
  return csr;
}

}  // namespace

GraphBundle make_bundle(std::string name, std::size_t n,
                        std::vector<std::pair<std::uint32_t, std::uint32_t>> edges, Mat x,
                        std::vector<std::uint8_t> y) {
  if (n < 1) throw ValidationError("graph needs at least one node");
  if (x.rows != n) {
    throw ValidationError("feature row count mismatch: " + std::to_string(x.rows) +
                          " rows for n=" + std::to_string(n));
  }
  if (x.cols < 1) throw ValidationError("feature dimension must be >= 1");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x.v[i])) {
      throw ValidationError("non-finite feature at row " + std::to_string(i / x.cols) +
                            " column " + std::to_string(i % x.cols));
    }
  }
  if (!y.empty()) {
    if (y.size() != n) {
      throw ValidationError("label count " + std::to_string(y.size()) + " != n=" + std::to_string(n));
    }
    for (auto l : y) {
      if (l > 1) throw ValidationError("labels must be 0 or 1");
    }
  }

  GraphBundle g;
  g.name = std::move(name);
  g.adj = build_csr(n, edges, g.name);
  g.x = std::move(x);
  g.y = std::move(y);
  if (g.has_labels() && 2 * g.anomaly_count() >= n) {
    log::warn("anomaly count is not a minority of nodes",
              {{"graph", g.name}, {"anomalies", std::to_string(g.anomaly_count())},
               {"n", std::to_string(n)}});
  }
  return g;
}

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double parse_cell(const std::string& tok, std::size_t row, std::size_t col) {
  const char* begin = tok.c_str();
  char* end = nullptr;
  const double val = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw ValidationError("non-numeric feature cell at row " + std::to_string(row) + " column " +
                          std::to_string(col) + ": '" + tok + "'");
  }
  return val;
}

Mat read_features_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open feature file: " + path.string());
  std::vector<double> values;
  std::size_t cols = 0, row = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::size_t col = 0, pos = 0;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      std::string tok = line.substr(pos, comma - pos);
      // trim surrounding spaces
      const auto a = tok.find_first_not_of(" \t\r");
      const auto b = tok.find_last_not_of(" \t\r");
      tok = (a == std::string::npos) ? std::string() : tok.substr(a, b - a + 1);
      values.push_back(parse_cell(tok, row, col));
      ++col;
      pos = comma + 1;
      if (comma == line.size()) break;
    }
    if (row == 0) {
      cols = col;
    } else if (col != cols) {
      throw ValidationError("feature CSV row " + std::to_string(row) + " has " +
                            std::to_string(col) + " columns, expected " + std::to_string(cols));
    }
    ++row;
  }
  if (row == 0 || cols == 0) throw ValidationError("empty feature file: " + path.string());
  Mat m(row, cols);
  m.v = std::move(values);
  return m;
}

bool has_rfgf_magic(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in.gcount() == 4 && std::memcmp(magic, "RFGF", 4) == 0;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> read_edges(
    const fs::path& path, const std::unordered_map<std::string, std::uint32_t>* id_map) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open edge file: " + path.string());
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    std::string a, b, extra;
    if (!(ss >> a >> b) || (ss >> extra)) {
      throw ValidationError("edge file line " + std::to_string(lineno) +
                            ": expected two node ids");
    }
    auto to_id = [&](const std::string& tok) -> std::uint32_t {
      if (id_map) {
        const auto it = id_map->find(tok);
        if (it == id_map->end()) {
          throw ValidationError("edge file line " + std::to_string(lineno) + ": id '" + tok +
                                "' not in id_map");
        }
        return it->second;
      }
      char* end = nullptr;
      const unsigned long v = std::strtoul(tok.c_str(), &end, 10);
      if (end == tok.c_str() || *end != '\0') {
        throw ValidationError("edge file line " + std::to_string(lineno) + ": bad node id '" +
                              tok + "'");
      }
      return static_cast<std::uint32_t>(v);
    };
    edges.emplace_back(to_id(a), to_id(b));
  }
  return edges;
}

std::vector<std::uint8_t> read_labels(const fs::path& path, std::size_t n) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open label file: " + path.string());
  std::vector<std::uint8_t> y;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] == '0') {
      y.push_back(0);
    } else if (line[first] == '1') {
      y.push_back(1);
    } else {
      throw ValidationError("label file: expected 0 or 1, got '" + line + "'");
    }
  }
  if (y.size() != n) {
    throw ValidationError("label file has " + std::to_string(y.size()) + " entries for n=" +
                          std::to_string(n));
  }
  return y;
}

std::unordered_map<std::string, std::uint32_t> read_id_map(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open id_map file: " + path.string());
  std::unordered_map<std::string, std::uint32_t> map;
  std::string line;
  std::uint32_t next = 0;
  while (std::getline(in, line)) {
    const auto a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    const auto b = line.find_last_not_of(" \t\r");
    map.emplace(line.substr(a, b - a + 1), next++);
  }
  return map;
}

}  // namespace

Mat read_rfgf(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open feature file: " + path.string());
  char magic[4];
  std::uint32_t n = 0, d = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&n), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  char pad[4];
  in.read(pad, 4);  // header is 16 bytes
  if (!in || std::memcmp(magic, "RFGF", 4) != 0) {
    throw ValidationError("bad RFGF header in " + path.string());
  }
  Mat m(n, d);
  std::vector<float> buf(static_cast<std::size_t>(n) * d);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (!in) throw ValidationError("truncated RFGF file: " + path.string());
  for (std::size_t i = 0; i < buf.size(); ++i) m.v[i] = static_cast<double>(buf[i]);
  return m;
}

void write_rfgf(const fs::path& path, const Mat& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write file: " + path.string());
  const std::uint32_t n = static_cast<std::uint32_t>(m.rows);
  const std::uint32_t d = static_cast<std::uint32_t>(m.cols);
  out.write("RFGF", 4);
  out.write(reinterpret_cast<const char*>(&n), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  const char pad[4] = {};
  out.write(pad, 4);
  std::vector<float> buf(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) buf[i] = static_cast<float>(m.v[i]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
}

GraphBundle load_bundle(const fs::path& manifest_path) {
  json manifest;
  try {
    manifest = json::parse(read_text(manifest_path));
  } catch (const json::exception& e) {
    throw ValidationError("bad manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!manifest.contains("edges") || !manifest.contains("features")) {
    throw ValidationError("manifest must name 'edges' and 'features' files");
  }
  const fs::path base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };

  const fs::path feat_path = resolve(manifest["features"].get<std::string>());
  if (!fs::exists(feat_path)) throw ValidationError("missing feature file: " + feat_path.string());
  Mat x = has_rfgf_magic(feat_path) ? read_rfgf(feat_path) : read_features_csv(feat_path);

  std::unordered_map<std::string, std::uint32_t> id_map;
  const bool mapped = manifest.contains("id_map");
  if (mapped) id_map = read_id_map(resolve(manifest["id_map"].get<std::string>()));

  const fs::path edge_path = resolve(manifest["edges"].get<std::string>());
  if (!fs::exists(edge_path)) throw ValidationError("missing edge file: " + edge_path.string());
  auto edges = read_edges(edge_path, mapped ? &id_map : nullptr);

  std::vector<std::uint8_t> y;
  if (manifest.contains("labels")) {
    const fs::path label_path = resolve(manifest["labels"].get<std::string>());
    if (!fs::exists(label_path)) throw ValidationError("missing label file: " + label_path.string());
    y = read_labels(label_path, x.rows);
  }

  std::string name = manifest.value("name", manifest_path.stem().string());
  return make_bundle(std::move(name), x.rows, std::move(edges), std::move(x), std::move(y));
}

void save_bundle(const GraphBundle& g, const fs::path& dir, bool binary_features) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "edges.txt");
    out << "# " << g.name << ": one undirected edge per line\n";
    for (std::uint32_t i = 0; i < g.n(); ++i) {
      for (std::uint32_t j : g.adj.neighbors(i)) {
        if (j > i) out << i << ' ' << j << '\n';
      }
    }
  }
  std::string feat_file;
  if (binary_features) {
    feat_file = "features.rfgf";
    write_rfgf(dir / feat_file, g.x);
  } else {
    feat_file = "features.csv";
    std::ofstream out(dir / feat_file);
    out.precision(17);
    for (std::size_t i = 0; i < g.x.rows; ++i) {
      for (std::size_t j = 0; j < g.x.cols; ++j) {
        if (j) out << ',';
        out << g.x.at(i, j);
      }
      out << '\n';
    }
  }
  if (g.has_labels()) {
    std::ofstream out(dir / "labels.txt");
    for (auto l : g.y) out << int(l) << '\n';
  }
  json manifest{{"name", g.name}, {"edges", "edges.txt"}, {"features", feat_file}};
  if (g.has_labels()) manifest["labels"] = "labels.txt";
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

NormalizedAdjacency normalize(const GraphBundle& g) {
  const std::size_t n = g.n();
  std::vector<double> inv_sqrt(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(g.adj.degree(i)) + 1.0);
  }
  NormalizedAdjacency out;
  out.pattern.row_ptr.assign(n + 1, 0);
  for (std::uint32_t i = 0; i < n; ++i) {
    out.pattern.row_ptr[i + 1] = out.pattern.row_ptr[i] + g.adj.degree(i) + 1;
  }
  out.pattern.col.resize(out.pattern.row_ptr[n]);
  out.val.resize(out.pattern.row_ptr[n]);
  parallel_for(0, n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      std::size_t w = out.pattern.row_ptr[i];
      bool placed_diag = false;
      for (std::uint32_t j : g.adj.neighbors(static_cast<std::uint32_t>(i))) {
        if (!placed_diag && j > i) {
          out.pattern.col[w] = static_cast<std::uint32_t>(i);
          out.val[w] = inv_sqrt[i] * inv_sqrt[i];
          ++w;
          placed_diag = true;
        }
        out.pattern.col[w] = j;
        out.val[w] = inv_sqrt[i] * inv_sqrt[j];
        ++w;
      }
      if (!placed_diag) {
        out.pattern.col[w] = static_cast<std::uint32_t>(i);
        out.val[w] = inv_sqrt[i] * inv_sqrt[i];
      }
    }
  });
  return out;
}

Mat spmm(const Csr& pattern, std::span<const double> val, const Mat& m) {
  if (pattern.n() != m.rows) throw ValidationError("spmm: operator and matrix rows differ");
  if (val.size() != pattern.nnz()) throw ValidationError("spmm: value array does not match pattern");
  Mat out(m.rows, m.cols);
  const auto& k = kernels::active();
  parallel_for(0, pattern.n(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double* oi = out.row(i);
      for (std::uint32_t e = pattern.row_ptr[i]; e < pattern.row_ptr[i + 1]; ++e) {
        k.axpy(val[e], m.row(pattern.col[e]), oi, m.cols);
      }
    }
  }, 64);
  return out;
}

}  // namespace refi
