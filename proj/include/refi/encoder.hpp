#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "refi/autodiff.hpp"
#include "refi/fingerprint.hpp"
#include "refi/rng.hpp"

namespace refi {

enum class BlockVariant : std::uint8_t {
  standard,  // pre-layer-norm residual blocks
  literal,   // Z_{l+1} = FFN(softmax(QK^T/sqrt(d') + M) V), nothing else
};

std::string variant_name(BlockVariant v);
BlockVariant variant_from_name(const std::string& s);

struct EncoderHyper {
  std::size_t d_prime = 64;
  std::size_t layers = 4;
  std::size_t heads = 1;          // must divide d_prime
  BlockVariant variant = BlockVariant::standard;
  std::vector<Dim> dims{kAllDims, kAllDims + 5};  // active fingerprint columns
  double snr_eps = 1e-8;
  bool snr_disabled = false;      // ablation: gate forced to all-ones

  std::size_t in_dim() const { return dims.size(); }
  void validate() const;
};

struct LayerParams {
  Mat wq, wk, wv;        // d' x d'
  Mat ffn_w1, ffn_b1;    // d' x 4d', 1 x 4d'
  Mat ffn_w2, ffn_b2;    // 4d' x d', 1 x d'
  Mat ln1_scale, ln1_shift, ln2_scale, ln2_shift;  // 1 x d', standard variant only
};

struct ModelParams {
  EncoderHyper hyper;
  Mat proj_w, proj_b;    // in x d', 1 x d'
  std::vector<LayerParams> layers;
  Mat snr_scale, snr_shift;  // lambda, beta: 1 x 1
  Mat w_prime;               // d' x d'
  Mat temperature;           // tau: 1 x 1

  // Glorot-uniform weights, zero biases, lambda=1, beta=0, tau=1.
  static ModelParams init(const EncoderHyper& hyper, Rng& rng);

  std::vector<std::pair<std::string, Mat*>> named_tensors();
  std::vector<std::pair<std::string, const Mat*>> named_tensors() const;
  std::uint64_t checksum() const;  // bit-level FNV over every tensor
};

struct Episode {
  std::vector<std::uint32_t> s_n;  // k normal support nodes
  std::vector<std::uint32_t> s_a;  // k anomalous support nodes
  std::vector<std::uint32_t> q;    // query batch

  std::size_t k() const { return s_n.size(); }
  std::size_t nb() const { return q.size(); }
  std::size_t seq_len() const { return s_n.size() + s_a.size() + q.size(); }
  // Throws unless |s_n| == |s_a| >= 1, |q| >= 1, all indices < n, pairwise disjoint.
  void validate(std::size_t n) const;
};

// Eq-pattern attention mask on support positions 1..2k (1-based):
// entry (i,j) = 0 iff j <= 2k or i == j, else -inf.
Mat build_mask(std::size_t k, std::size_t nb);

// Parameters leased onto a tape for one episode.
struct ParamTensors {
  ad::Tensor proj_w, proj_b;
  struct Layer {
    ad::Tensor wq, wk, wv, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    ad::Tensor ln1_scale, ln1_shift, ln2_scale, ln2_shift;
  };
  std::vector<Layer> layers;
  ad::Tensor snr_scale, snr_shift, w_prime, temperature;
  EncoderHyper hyper;
};

ParamTensors lease(ad::Tape& tape, const ModelParams& params, bool requires_grad);

// H0 = relu(P W + b) for already-gathered fingerprint rows.
ad::Tensor project(ad::Tape& tape, ad::Tensor p_rows, const ParamTensors& pt);

// Assembles [S_n; S_a; Q] rows of the fingerprint matrix, projects them and
// applies the masked transformer stack. Returns H1, (2k+nb) x d'.
ad::Tensor encode(ad::Tape& tape, const ReFiMatrix& refi, const Episode& ep,
                  const ParamTensors& pt);

// SNR gate + output projection: rows ordered as in encode().
ad::Tensor snr_refine(ad::Tape& tape, ad::Tensor h1, std::size_t k, std::size_t nb,
                      const ParamTensors& pt);

// Query scores in [0,1]: softmax(tau * cosine(query, supports)) mass on the
// anomalous half minus the normal half, mapped affinely into [0,1].
ad::Tensor score(ad::Tape& tape, ad::Tensor h, std::size_t k, std::size_t nb,
                 const ParamTensors& pt);

// Convenience value-only forward pass (no gradients recorded).
struct ForwardResult {
  Mat scores;      // nb x 1
  Mat h;           // (2k+nb) x d' refined rows (filled when requested)
};
ForwardResult forward_episode(const ModelParams& params, const ReFiMatrix& refi,
                              const Episode& ep, bool want_embeddings = false);

// Checkpoint: [u32 header length][header JSON][blobs]. Header fields:
// format_version, d_prime, layers, heads, variant, dims_active, snr_disabled,
// created, config_hash. Each blob: u32 name length, name, u32 rows, u32 cols,
// rows*cols little-endian float64. Round-trips bit-exactly.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path,
                     const std::string& config_hash = "");
struct Checkpoint {
  ModelParams params;
  std::string config_hash;
  std::string created;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace refi
