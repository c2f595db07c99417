#include "refi/fingerprint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "refi/kernels.hpp"
#include "refi/parallel.hpp"

namespace refi {

std::string dim_name(Dim d) {
  switch (d) {
    case Dim::NP: return "np";
    case Dim::ND: return "nd";
    case Dim::GD: return "gd";
    case Dim::Deg: return "deg";
    case Dim::LC: return "lc";
  }
  return "?";
}

std::optional<Dim> dim_from_name(const std::string& name) {
  std::string s;
  for (char c : name) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (Dim d : kAllDims) {
    if (dim_name(d) == s) return d;
  }
  if (s == "de" || s == "degree") return Dim::Deg;
  return std::nullopt;
}

namespace {

double cosine(const double* a, const double* b, std::size_t n, const kernels::Table& k) {
  const double na = k.l2sq(a, n);
  const double nb = k.l2sq(b, n);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return k.dot(a, b, n) / (std::sqrt(na) * std::sqrt(nb));
}

Mat maybe_row_normalized(const Mat& x, bool enabled) {
  if (!enabled) return x;
  const auto& k = kernels::active();
  Mat out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double nrm = std::sqrt(k.l2sq(x.row(i), x.cols));
    if (nrm == 0.0) continue;
    k.scale(1.0 / nrm, x.row(i), out.row(i), x.cols);
  }
  return out;
}

}  // namespace

std::vector<double> reweighted_values(const GraphBundle& g, const NormalizedAdjacency& adj,
                                      bool row_normalize_features) {
  const Mat xs = maybe_row_normalized(g.x, row_normalize_features);
  std::vector<double> out(adj.pattern.nnz());
  const auto& k = kernels::active();
  const std::size_t d = xs.cols;
  parallel_for(0, adj.n(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::uint32_t e = adj.pattern.row_ptr[i]; e < adj.pattern.row_ptr[i + 1]; ++e) {
        out[e] = adj.val[e] * k.dot(xs.row(i), xs.row(adj.pattern.col[e]), d);
      }
    }
  }, 64);
  return out;
}

ContextualAttrs contextual_attributes(const GraphBundle& g, bool row_normalize_features) {
  const std::size_t n = g.n();
  const std::size_t d = g.dim();
  const auto& k = kernels::active();
  const NormalizedAdjacency adj = normalize(g);

  // X-bar = (A-hat .* X X^T) X, edge-wise.
  const std::vector<double> abar = reweighted_values(g, adj, row_normalize_features);
  const Mat xbar = spmm(adj.pattern, abar, g.x);

  ContextualAttrs out;
  out.np.assign(n, 0.0);
  out.nd.assign(n, 1.0);
  out.gd.assign(n, 0.0);

  std::vector<double> xbar_norm(n);
  parallel_for(0, n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) xbar_norm[i] = std::sqrt(k.l2sq(xbar.row(i), d));
  });

  parallel_for(0, n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto nb = g.adj.neighbors(static_cast<std::uint32_t>(i));
      if (nb.empty()) continue;  // NP = 0, ND = 1 for isolated nodes
      double dist_sum = 0.0, cos_sum = 0.0;
      for (std::uint32_t j : nb) {
        dist_sum += std::sqrt(k.sqdist(xbar.row(i), xbar.row(j), d));
        if (xbar_norm[i] > 0.0 && xbar_norm[j] > 0.0) {
          cos_sum += k.dot(xbar.row(i), xbar.row(j), d) / (xbar_norm[i] * xbar_norm[j]);
        }
      }
      out.np[i] = dist_sum / static_cast<double>(nb.size());
      out.nd[i] = cos_sum / static_cast<double>(nb.size());
    }
  }, 64);

  // X-hat = A-hat (A-hat X), never forming A-hat^2.
  const Mat xhat = spmm(adj, spmm(adj, g.x));
  std::vector<double> center(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) k.axpy(1.0 / static_cast<double>(n), xhat.row(i), center.data(), d);
  parallel_for(0, n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) out.gd[i] = cosine(xhat.row(i), center.data(), d, k);
  }, 64);
  return out;
}

StructuralAttrs structural_attributes(const GraphBundle& g) {
  const std::size_t n = g.n();
  StructuralAttrs out;
  out.deg.resize(n);
  out.lc.assign(n, 0.0);
  for (std::uint32_t i = 0; i < n; ++i) out.deg[i] = g.adj.degree(i);

  parallel_for(0, n, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto ni = g.adj.neighbors(static_cast<std::uint32_t>(i));
      if (ni.size() < 2) continue;
      // Each triangle through i is counted once at each of its two other
      // vertices, so halve the total intersection count.
      std::size_t paths = 0;
      for (std::uint32_t j : ni) {
        const auto nj = g.adj.neighbors(j);
        std::size_t a = 0, b = 0;
        while (a < ni.size() && b < nj.size()) {
          if (ni[a] == nj[b]) {
            ++paths;
            ++a;
            ++b;
          } else if (ni[a] < nj[b]) {
            ++a;
          } else {
            ++b;
          }
        }
      }
      const double tri = static_cast<double>(paths) / 2.0;
      const double deg = static_cast<double>(ni.size());
      out.lc[i] = 2.0 * tri / (deg * (deg - 1.0));
    }
  }, 16);
  return out;
}

std::vector<double> rank_transform(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return v[a] < v[b]; });
  std::vector<double> out(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    // positions i..j (0-based) share the average 1-based rank
    const double avg_rank = static_cast<double>(i + j + 2) / 2.0;
    const double r = avg_rank / static_cast<double>(n);
    for (std::size_t t = i; t <= j; ++t) out[order[t]] = r;
    i = j + 1;
  }
  return out;
}

ReFiMatrix build_refi(const GraphBundle& g, const FingerprintOptions& opts) {
  std::vector<Dim> dims;
  for (Dim d : kAllDims) {
    if (std::find(opts.drop.begin(), opts.drop.end(), d) == opts.drop.end()) dims.push_back(d);
  }
  if (dims.empty()) throw ValidationError("cannot drop all five fingerprint dimensions");

  const std::size_t n = g.n();
  auto needs = [&](Dim d) { return std::find(dims.begin(), dims.end(), d) != dims.end(); };
  const bool any_contextual = needs(Dim::NP) || needs(Dim::ND) || needs(Dim::GD);

  ContextualAttrs ctx;
  if (any_contextual) ctx = contextual_attributes(g, opts.row_normalize_features);
  const StructuralAttrs str = structural_attributes(g);

  std::vector<double> deg_real(n);
  for (std::size_t i = 0; i < n; ++i) deg_real[i] = static_cast<double>(str.deg[i]);

  ReFiMatrix out;
  out.dims = dims;
  out.p = Mat(n, dims.size());
  for (std::size_t c = 0; c < dims.size(); ++c) {
    std::span<const double> raw;
    switch (dims[c]) {
      case Dim::NP: raw = ctx.np; break;
      case Dim::ND: raw = ctx.nd; break;
      case Dim::GD: raw = ctx.gd; break;
      case Dim::Deg: raw = deg_real; break;
      case Dim::LC: raw = str.lc; break;
    }
    const auto ranked = rank_transform(raw);
    for (std::size_t i = 0; i < n; ++i) out.p.at(i, c) = ranked[i];
  }
  return out;
}

void write_refi_csv(const ReFiMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write file: " + path.string());
  out << "node";
  for (Dim d : m.dims) out << ',' << dim_name(d);
  out << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < m.p.rows; ++i) {
    out << i;
    for (std::size_t c = 0; c < m.p.cols; ++c) out << ',' << m.p.at(i, c);
    out << '\n';
  }
}

void write_refi_rfgf(const ReFiMatrix& m, const std::filesystem::path& path) {
  write_rfgf(path, m.p);
}

}  // namespace refi
