#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refi/graph.hpp"

namespace refi {

// The five relational dimensions, in the fixed column order of the
// fingerprint matrix.
enum class Dim : std::uint8_t { NP = 0, ND = 1, GD = 2, Deg = 3, LC = 4 };

inline constexpr Dim kAllDims[5] = {Dim::NP, Dim::ND, Dim::GD, Dim::Deg, Dim::LC};

std::string dim_name(Dim d);
std::optional<Dim> dim_from_name(const std::string& name);

struct ContextualAttrs {
  std::vector<double> np;  // mean neighbor distance of convolved features, >= 0
  std::vector<double> nd;  // mean neighbor cosine, in [-1, 1]
  std::vector<double> gd;  // cosine to the global center, in [-1, 1]
};

struct StructuralAttrs {
  std::vector<std::uint32_t> deg;
  std::vector<double> lc;  // 2*T_i / (deg_i * (deg_i - 1)), 0 when deg < 2
};

struct ReFiMatrix {
  Mat p;                  // n x |dims|, every entry in (0, 1]
  std::vector<Dim> dims;  // active columns in canonical order
};

struct FingerprintOptions {
  std::vector<Dim> drop;                 // columns to omit
  bool row_normalize_features = false;   // l2-normalize X rows before the
                                         // edge similarity term (off: literal)
};

// Similarity-reweighted operator: same pattern as adj, entry (i,j) =
// a-hat_ij * <x_i, x_j>, computed edge-wise. Returns the value array.
std::vector<double> reweighted_values(const GraphBundle& g, const NormalizedAdjacency& adj,
                                      bool row_normalize_features = false);

// Isolated nodes: NP = 0, ND = 1. Cosine with a zero-norm vector is 0.
ContextualAttrs contextual_attributes(const GraphBundle& g, bool row_normalize_features = false);

StructuralAttrs structural_attributes(const GraphBundle& g);

// Ascending average ranks divided by n; ties share the mean of their
// positions. Output entries lie in (0, 1].
std::vector<double> rank_transform(std::span<const double> v);

ReFiMatrix build_refi(const GraphBundle& g, const FingerprintOptions& opts = {});

void write_refi_csv(const ReFiMatrix& m, const std::filesystem::path& path);
void write_refi_rfgf(const ReFiMatrix& m, const std::filesystem::path& path);

}  // namespace refi
