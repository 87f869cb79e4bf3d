#pragma once

#include <optional>
#include <string>
#include <vector>

#include "clipper/params.hpp"

namespace clipper::nn {

struct AttentionConfig {
  int dim = 32;
  int heads = 2;
  bool relative_bias = false;
  int max_relative_distance = 64;
};

struct Linear {
  ad::Parameter* w = nullptr;  // in x out
  ad::Parameter* b = nullptr;  // out, absent when with_bias = false
  int in = 0, out = 0;

  Linear() = default;
  Linear(ParamStore& ps, Rng& rng, const std::string& prefix, int in, int out,
         bool with_bias = true);
  ad::Tensor forward(ad::Tape& t, ad::Tensor x) const;
};

struct LayerNorm {
  ad::Parameter* gain = nullptr;
  ad::Parameter* bias = nullptr;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& prefix, int dim);
  ad::Tensor forward(ad::Tape& t, ad::Tensor x) const;
};

// Learned per-head additive attention-logit bias indexed by the clipped
// signed distance between key and query positions. Depends only on position
// differences, so uniformly shifting all positions leaves it unchanged.
struct RelPosBias {
  ad::Parameter* table = nullptr;  // heads x (2*max_dist + 1)
  int heads = 0;
  int max_dist = 0;

  RelPosBias() = default;
  RelPosBias(ParamStore& ps, Rng& rng, const std::string& prefix, int heads,
             int max_dist);
  ad::Tensor logits(ad::Tape& t, const std::vector<int>& pos_q,
                    const std::vector<int>& pos_k, int head) const;
};

struct MultiHeadAttention {
  AttentionConfig cfg;
  Linear wq, wk, wv, wo;
  std::optional<RelPosBias> bias;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& ps, Rng& rng, const std::string& prefix,
                     AttentionConfig cfg);
  // q: m x D, k/v: n x D. Positions are required iff relative_bias is set and
  // must then cover both sides (self-attention uses the same vector twice).
  ad::Tensor forward(ad::Tape& t, ad::Tensor q, ad::Tensor k, ad::Tensor v,
                     const std::vector<int>* pos_q = nullptr,
                     const std::vector<int>* pos_k = nullptr) const;
};

struct TransformerLayer {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Linear ff1, ff2;

  TransformerLayer() = default;
  TransformerLayer(ParamStore& ps, Rng& rng, const std::string& prefix,
                   AttentionConfig cfg, int ffn_hidden);
  ad::Tensor forward(ad::Tape& t, ad::Tensor x,
                     const std::vector<int>* positions = nullptr) const;
};

struct EncoderConfig {
  int layers = 4;
  int dim = 32;
  int heads = 2;
  int ffn_hidden = 64;
  bool relative_bias = false;
  int max_relative_distance = 64;
};

// Pre-norm self-attention stack with a final layer norm.
struct TransformerEncoder {
  std::vector<TransformerLayer> layers;
  LayerNorm final_ln;

  TransformerEncoder() = default;
  TransformerEncoder(ParamStore& ps, Rng& rng, const std::string& prefix,
                     EncoderConfig cfg);
  ad::Tensor forward(ad::Tape& t, ad::Tensor x,
                     const std::vector<int>* positions = nullptr) const;
};

// Exactly two affine layers with a nonlinearity between.
struct MlpHead {
  Linear l1, l2;

  MlpHead() = default;
  MlpHead(ParamStore& ps, Rng& rng, const std::string& prefix, int in,
          int hidden, int out);
  ad::Tensor forward(ad::Tape& t, ad::Tensor x) const;
};

}  // namespace clipper::nn
