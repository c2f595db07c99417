#include "refi/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "refi/dense.hpp"

namespace refi {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

std::string variant_name(BlockVariant v) {
  return v == BlockVariant::standard ? "standard" : "literal";
}

BlockVariant variant_from_name(const std::string& s) {
  if (s == "standard") return BlockVariant::standard;
  if (s == "literal") return BlockVariant::literal;
  throw ValidationError("unknown block variant '" + s + "'");
}

void EncoderHyper::validate() const {
  if (d_prime < 1) throw ValidationError("d_prime must be >= 1");
  if (layers < 1) throw ValidationError("layer count must be >= 1");
  if (heads < 1 || d_prime % heads != 0) {
    throw ValidationError("heads must divide d_prime (" + std::to_string(heads) + " vs " +
                          std::to_string(d_prime) + ")");
  }
  if (dims.empty()) throw ValidationError("at least one fingerprint dimension is required");
}

namespace {

Mat glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (double& x : m.v) x = rng.uniform(-limit, limit);
  return m;
}

}  // namespace

ModelParams ModelParams::init(const EncoderHyper& hyper, Rng& rng) {
  hyper.validate();
  const std::size_t d = hyper.d_prime;
  ModelParams p;
  p.hyper = hyper;
  p.proj_w = glorot(hyper.in_dim(), d, rng);
  p.proj_b = Mat(1, d);
  p.layers.resize(hyper.layers);
  for (auto& l : p.layers) {
    l.wq = glorot(d, d, rng);
    l.wk = glorot(d, d, rng);
    l.wv = glorot(d, d, rng);
    l.ffn_w1 = glorot(d, 4 * d, rng);
    l.ffn_b1 = Mat(1, 4 * d);
    l.ffn_w2 = glorot(4 * d, d, rng);
    l.ffn_b2 = Mat(1, d);
    if (hyper.variant == BlockVariant::standard) {
      l.ln1_scale = Mat(1, d, 1.0);
      l.ln1_shift = Mat(1, d);
      l.ln2_scale = Mat(1, d, 1.0);
      l.ln2_shift = Mat(1, d);
    }
  }
  p.snr_scale = Mat(1, 1, 1.0);
  p.snr_shift = Mat(1, 1, 0.0);
  p.w_prime = glorot(d, d, rng);
  p.temperature = Mat(1, 1, 1.0);
  return p;
}

std::vector<std::pair<std::string, Mat*>> ModelParams::named_tensors() {
  std::vector<std::pair<std::string, Mat*>> out;
  out.emplace_back("proj_w", &proj_w);
  out.emplace_back("proj_b", &proj_b);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string pre = "layer" + std::to_string(i) + ".";
    LayerParams& l = layers[i];
    out.emplace_back(pre + "wq", &l.wq);
    out.emplace_back(pre + "wk", &l.wk);
    out.emplace_back(pre + "wv", &l.wv);
    out.emplace_back(pre + "ffn_w1", &l.ffn_w1);
    out.emplace_back(pre + "ffn_b1", &l.ffn_b1);
    out.emplace_back(pre + "ffn_w2", &l.ffn_w2);
    out.emplace_back(pre + "ffn_b2", &l.ffn_b2);
    if (hyper.variant == BlockVariant::standard) {
      out.emplace_back(pre + "ln1_scale", &l.ln1_scale);
      out.emplace_back(pre + "ln1_shift", &l.ln1_shift);
      out.emplace_back(pre + "ln2_scale", &l.ln2_scale);
      out.emplace_back(pre + "ln2_shift", &l.ln2_shift);
    }
  }
  out.emplace_back("snr_scale", &snr_scale);
  out.emplace_back("snr_shift", &snr_shift);
  out.emplace_back("w_prime", &w_prime);
  out.emplace_back("temperature", &temperature);
  return out;
}

std::vector<std::pair<std::string, const Mat*>> ModelParams::named_tensors() const {
  auto mut = const_cast<ModelParams*>(this)->named_tensors();
  std::vector<std::pair<std::string, const Mat*>> out;
  out.reserve(mut.size());
  for (auto& [name, ptr] : mut) out.emplace_back(name, ptr);
  return out;
}

std::uint64_t ModelParams::checksum() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix_bytes = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (const auto& [name, mat] : named_tensors()) {
    mix_bytes(name.data(), name.size());
    mix_bytes(mat->v.data(), mat->v.size() * sizeof(double));
  }
  return h;
}

void Episode::validate(std::size_t n) const {
  if (s_n.size() != s_a.size()) throw ValidationError("episode: |S_n| must equal |S_a|");
  if (s_n.empty()) throw ValidationError("episode: support sets must be non-empty");
  if (q.empty()) throw ValidationError("episode: query set must be non-empty");
  std::unordered_set<std::uint32_t> seen;
  auto take = [&](const std::vector<std::uint32_t>& ids, const char* which) {
    for (std::uint32_t i : ids) {
      if (i >= n) throw ValidationError(std::string("episode: ") + which + " index out of range");
      if (!seen.insert(i).second) {
        throw ValidationError("episode: index sets overlap at node " + std::to_string(i));
      }
    }
  };
  take(s_n, "S_n");
  take(s_a, "S_a");
  take(q, "Q");
}

Mat build_mask(std::size_t k, std::size_t nb) {
  if (k < 1 || nb < 1) throw ValidationError("build_mask: k and n_b must be >= 1");
  const std::size_t len = 2 * k + nb;
  Mat m(len, len, kNegInf);
  for (std::size_t i = 0; i < len; ++i) {
    double* row = m.row(i);
    for (std::size_t j = 0; j < 2 * k; ++j) row[j] = 0.0;
    row[i] = 0.0;
  }
  return m;
}

ParamTensors lease(ad::Tape& tape, const ModelParams& params, bool requires_grad) {
  params.hyper.validate();
  ParamTensors pt;
  pt.hyper = params.hyper;
  pt.proj_w = tape.leaf(params.proj_w, requires_grad);
  pt.proj_b = tape.leaf(params.proj_b, requires_grad);
  for (const auto& l : params.layers) {
    ParamTensors::Layer lt;
    lt.wq = tape.leaf(l.wq, requires_grad);
    lt.wk = tape.leaf(l.wk, requires_grad);
    lt.wv = tape.leaf(l.wv, requires_grad);
    lt.ffn_w1 = tape.leaf(l.ffn_w1, requires_grad);
    lt.ffn_b1 = tape.leaf(l.ffn_b1, requires_grad);
    lt.ffn_w2 = tape.leaf(l.ffn_w2, requires_grad);
    lt.ffn_b2 = tape.leaf(l.ffn_b2, requires_grad);
    if (params.hyper.variant == BlockVariant::standard) {
      lt.ln1_scale = tape.leaf(l.ln1_scale, requires_grad);
      lt.ln1_shift = tape.leaf(l.ln1_shift, requires_grad);
      lt.ln2_scale = tape.leaf(l.ln2_scale, requires_grad);
      lt.ln2_shift = tape.leaf(l.ln2_shift, requires_grad);
    }
    pt.layers.push_back(lt);
  }
  pt.snr_scale = tape.leaf(params.snr_scale, requires_grad);
  pt.snr_shift = tape.leaf(params.snr_shift, requires_grad);
  pt.w_prime = tape.leaf(params.w_prime, requires_grad);
  pt.temperature = tape.leaf(params.temperature, requires_grad);
  return pt;
}

ad::Tensor project(ad::Tape& tape, ad::Tensor p_rows, const ParamTensors& pt) {
  if (tape.value(p_rows).cols != tape.value(pt.proj_w).rows) {
    throw ValidationError("project: fingerprint width " +
                          std::to_string(tape.value(p_rows).cols) + " does not match projector (" +
                          std::to_string(tape.value(pt.proj_w).rows) + ")");
  }
  return tape.relu(tape.add(tape.matmul(p_rows, pt.proj_w), pt.proj_b));
}

namespace {

ad::Tensor attention(ad::Tape& tape, ad::Tensor z, const ParamTensors::Layer& l, const Mat& mask,
                     std::size_t d_prime, std::size_t heads) {
  const auto q = tape.matmul(z, l.wq);
  const auto k = tape.matmul(z, l.wk);
  const auto v = tape.matmul(z, l.wv);
  if (heads == 1) {
    const auto scores = tape.scalar_mul(tape.matmul_nt(q, k), 1.0 / std::sqrt(double(d_prime)));
    return tape.matmul(tape.softmax_rows(scores, &mask), v);
  }
  const std::size_t dh = d_prime / heads;
  std::vector<ad::Tensor> ctx;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = tape.slice_cols(q, h * dh, dh);
    const auto kh = tape.slice_cols(k, h * dh, dh);
    const auto vh = tape.slice_cols(v, h * dh, dh);
    const auto scores = tape.scalar_mul(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(double(dh)));
    ctx.push_back(tape.matmul(tape.softmax_rows(scores, &mask), vh));
  }
  return tape.concat_cols(ctx);
}

ad::Tensor ffn(ad::Tape& tape, ad::Tensor x, const ParamTensors::Layer& l) {
  const auto hidden = tape.relu(tape.add(tape.matmul(x, l.ffn_w1), l.ffn_b1));
  return tape.add(tape.matmul(hidden, l.ffn_w2), l.ffn_b2);
}

ad::Tensor ln_affine(ad::Tape& tape, ad::Tensor x, ad::Tensor scale, ad::Tensor shift) {
  return tape.add(tape.hadamard(tape.layer_norm_rows(x), scale), shift);
}

}  // namespace

ad::Tensor encode(ad::Tape& tape, const ReFiMatrix& refi, const Episode& ep,
                  const ParamTensors& pt) {
  ep.validate(refi.p.rows);
  if (refi.dims != pt.hyper.dims) {
    throw ValidationError("encode: fingerprint dimensions do not match the model");
  }
  std::vector<std::uint32_t> order;
  order.reserve(ep.seq_len());
  order.insert(order.end(), ep.s_n.begin(), ep.s_n.end());
  order.insert(order.end(), ep.s_a.begin(), ep.s_a.end());
  order.insert(order.end(), ep.q.begin(), ep.q.end());

  const auto p_rows = tape.constant(gather_rows(refi.p, order));
  auto z = project(tape, p_rows, pt);

  const Mat mask = build_mask(ep.k(), ep.nb());
  for (const auto& l : pt.layers) {
    if (pt.hyper.variant == BlockVariant::literal) {
      z = ffn(tape, attention(tape, z, l, mask, pt.hyper.d_prime, pt.hyper.heads), l);
    } else {
      const auto a_in = ln_affine(tape, z, l.ln1_scale, l.ln1_shift);
      const auto z1 = tape.add(z, attention(tape, a_in, l, mask, pt.hyper.d_prime, pt.hyper.heads));
      const auto f_in = ln_affine(tape, z1, l.ln2_scale, l.ln2_shift);
      z = tape.add(z1, ffn(tape, f_in, l));
    }
  }
  return z;
}

ad::Tensor snr_refine(ad::Tape& tape, ad::Tensor h1, std::size_t k, std::size_t nb,
                      const ParamTensors& pt) {
  const Mat& v = tape.value(h1);
  if (v.rows != 2 * k + nb) throw ValidationError("snr_refine: row count does not match episode");
  ad::Tensor gated = h1;
  if (!pt.hyper.snr_disabled) {
    // normal background: S_n rows plus the query batch (Eq. 15 population)
    const std::array<ad::Tensor, 2> normal_parts{tape.slice_rows(h1, 0, k),
                                                 tape.slice_rows(h1, 2 * k, nb)};
    const auto normal_rows = tape.concat_rows(normal_parts);
    const auto h_n = tape.mean_rows(normal_rows);
    const auto h_a = tape.mean_rows(tape.slice_rows(h1, k, k));
    const auto var_n = tape.var_rows(normal_rows);
    const auto diff = tape.add(h_a, tape.scalar_mul(h_n, -1.0));
    const auto snr = tape.div(tape.hadamard(diff, diff),
                              tape.add(var_n, tape.scalar(pt.hyper.snr_eps)));
    const auto gate =
        tape.sigmoid(tape.add(tape.hadamard(snr, pt.snr_scale), pt.snr_shift));  // 1 x d'
    gated = tape.hadamard(h1, gate);
  }
  return tape.matmul_nt(gated, pt.w_prime);
}

ad::Tensor score(ad::Tape& tape, ad::Tensor h, std::size_t k, std::size_t nb,
                 const ParamTensors& pt) {
  const Mat& v = tape.value(h);
  if (v.rows != 2 * k + nb) throw ValidationError("score: row count does not match episode");
  const auto supports = tape.slice_rows(h, 0, 2 * k);
  const auto queries = tape.slice_rows(h, 2 * k, nb);
  const auto sims = tape.cosine_rows(queries, supports);            // nb x 2k
  const auto alpha = tape.softmax_rows(tape.hadamard(sims, pt.temperature));
  Mat signs(2 * k, 1, 0.5);  // +1/2 on S_a columns, -1/2 on S_n columns
  for (std::size_t j = 0; j < k; ++j) signs.v[j] = -0.5;
  const auto delta = tape.matmul(alpha, tape.constant(std::move(signs)));
  return tape.add(delta, tape.scalar(0.5));
}

ForwardResult forward_episode(const ModelParams& params, const ReFiMatrix& refi,
                              const Episode& ep, bool want_embeddings) {
  ad::Tape tape;
  const auto pt = lease(tape, params, /*requires_grad=*/false);
  const auto h1 = encode(tape, refi, ep, pt);
  const auto h = snr_refine(tape, h1, ep.k(), ep.nb(), pt);
  const auto y = score(tape, h, ep.k(), ep.nb(), pt);
  ForwardResult out;
  out.scores = tape.value(y);
  if (want_embeddings) out.h = tape.value(h);
  return out;
}

}  // namespace refi
