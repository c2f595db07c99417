#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "refi/mat.hpp"

namespace refi {

// Symmetric adjacency pattern, rows sorted ascending, no duplicates.
struct Csr {
  std::vector<std::uint32_t> row_ptr;  // n+1
  std::vector<std::uint32_t> col;

  std::size_t n() const { return row_ptr.empty() ? 0 : row_ptr.size() - 1; }
  std::size_t nnz() const { return col.size(); }
  std::uint32_t degree(std::uint32_t i) const { return row_ptr[i + 1] - row_ptr[i]; }
  std::span<const std::uint32_t> neighbors(std::uint32_t i) const {
    return {col.data() + row_ptr[i], col.data() + row_ptr[i + 1]};
  }
  bool has_edge(std::uint32_t i, std::uint32_t j) const;
};

// An attributed graph: undirected unweighted adjacency (no self-loops),
// n x d features, optional 0/1 labels (1 = anomaly). Immutable once built.
struct GraphBundle {
  std::string name;
  Csr adj;
  Mat x;
  std::vector<std::uint8_t> y;

  std::size_t n() const { return x.rows; }
  std::size_t dim() const { return x.cols; }
  bool has_labels() const { return !y.empty(); }
  std::size_t anomaly_count() const;
};

// A-hat = D~^{-1/2} (A + I) D~^{-1/2}; same pattern as A plus the diagonal.
// Entry (i,j) = 1/sqrt(d~_i * d~_j) with d~ = degree + 1.
struct NormalizedAdjacency {
  Csr pattern;
  std::vector<double> val;

  std::size_t n() const { return pattern.n(); }
};

// Builds a validated bundle from raw parts: symmetrizes, deduplicates,
// drops self-loops (with a warning), checks features finite and labels 0/1.
GraphBundle make_bundle(std::string name, std::size_t n,
                        std::vector<std::pair<std::uint32_t, std::uint32_t>> edges, Mat x,
                        std::vector<std::uint8_t> y = {});

// Manifest JSON: {"name":..., "edges": path, "features": path,
//                 "labels": optional path, "id_map": optional path}.
// Edge file: two whitespace-separated ids per line, '#' comments. Features:
// CSV (n rows x d columns) or RFGF binary (magic "RFGF", u32 n, u32 d,
// float32 row-major). Labels: one 0/1 per line. Paths resolve relative to
// the manifest.
GraphBundle load_bundle(const std::filesystem::path& manifest_path);

// Writes manifest + edge/feature/label files for a bundle into dir.
void save_bundle(const GraphBundle& g, const std::filesystem::path& dir, bool binary_features = false);

NormalizedAdjacency normalize(const GraphBundle& g);

// out = op * m where op shares `pattern` with values `val`. Never builds
// anything n x n; work and memory are O(nnz * d + n * d).
Mat spmm(const Csr& pattern, std::span<const double> val, const Mat& m);
inline Mat spmm(const NormalizedAdjacency& a, const Mat& m) { return spmm(a.pattern, a.val, m); }

// RFGF float32 feature file io (shared with the fingerprint CLI output).
void write_rfgf(const std::filesystem::path& path, const Mat& m);
Mat read_rfgf(const std::filesystem::path& path);

}  // namespace refi
