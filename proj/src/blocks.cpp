#include "clipper/blocks.hpp"

#include <algorithm>
#include <cmath>

#include "clipper/error.hpp"

namespace clipper::nn {

using ad::Shape;
using ad::Tape;
using ad::Tensor;

Linear::Linear(ParamStore& ps, Rng& rng, const std::string& prefix, int in_dim,
               int out_dim, bool with_bias)
    : in(in_dim), out(out_dim) {
  w = &ps.create_trunc_normal(prefix + ".w", Shape{in_dim, out_dim}, rng);
  if (with_bias) b = &ps.create_fill(prefix + ".b", Shape{out_dim}, 0.0);
}

Tensor Linear::forward(Tape& t, Tensor x) const {
  if (x.shape().rank() != 2 || x.shape().dim(1) != in)
    throw ShapeError("linear '" + w->name + "': input " + x.shape().str() +
                     " does not match in_dim " + std::to_string(in));
  Tensor y = matmul(x, t.use(*w));
  return b ? add_rowvec(y, t.use(*b)) : y;
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, int dim) {
  gain = &ps.create_fill(prefix + ".gain", Shape{dim}, 1.0);
  bias = &ps.create_fill(prefix + ".bias", Shape{dim}, 0.0);
}

Tensor LayerNorm::forward(Tape& t, Tensor x) const {
  return ad::layer_norm(x, t.use(*gain), t.use(*bias), eps);
}

RelPosBias::RelPosBias(ParamStore& ps, Rng& rng, const std::string& prefix,
                       int n_heads, int max_distance)
    : heads(n_heads), max_dist(max_distance) {
  table = &ps.create_trunc_normal(prefix + ".table",
                                  Shape{n_heads, 2 * max_distance + 1}, rng);
}

Tensor RelPosBias::logits(Tape& t, const std::vector<int>& pos_q,
                          const std::vector<int>& pos_k, int head) const {
  const int m = static_cast<int>(pos_q.size());
  const int n = static_cast<int>(pos_k.size());
  const int width = 2 * max_dist + 1;
  std::vector<std::size_t> idx(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      int d = std::clamp(pos_k[static_cast<std::size_t>(j)] -
                             pos_q[static_cast<std::size_t>(i)],
                         -max_dist, max_dist);
      idx[static_cast<std::size_t>(i) * n + j] =
          static_cast<std::size_t>(head) * width +
          static_cast<std::size_t>(d + max_dist);
    }
  return gather_flat(t.use(*table), std::move(idx), Shape{m, n});
}

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, Rng& rng,
                                       const std::string& prefix,
                                       AttentionConfig config)
    : cfg(config) {
  if (cfg.dim % cfg.heads != 0)
    throw ConfigError("attention dim " + std::to_string(cfg.dim) +
                      " not divisible by heads " + std::to_string(cfg.heads));
  wq = Linear(ps, rng, prefix + ".wq", cfg.dim, cfg.dim);
  // a key bias shifts every logit in a softmax row equally, so it is omitted
  wk = Linear(ps, rng, prefix + ".wk", cfg.dim, cfg.dim, false);
  wv = Linear(ps, rng, prefix + ".wv", cfg.dim, cfg.dim);
  wo = Linear(ps, rng, prefix + ".wo", cfg.dim, cfg.dim);
  if (cfg.relative_bias)
    bias = RelPosBias(ps, rng, prefix + ".relbias", cfg.heads,
                      cfg.max_relative_distance);
}

Tensor MultiHeadAttention::forward(Tape& t, Tensor q, Tensor k, Tensor v,
                                   const std::vector<int>* pos_q,
                                   const std::vector<int>* pos_k) const {
  if (q.shape().dim(1) != cfg.dim || k.shape().dim(1) != cfg.dim ||
      v.shape().dim(1) != cfg.dim)
    throw ShapeError("attention: inputs must have model dim " +
                     std::to_string(cfg.dim));
  if (k.shape().dim(0) != v.shape().dim(0))
    throw ShapeError("attention: key/value length mismatch " +
                     k.shape().str() + " vs " + v.shape().str());
  if (bias && (!pos_q || !pos_k))
    throw ContractError("attention: relative bias requires positions");
  if (!bias && (pos_q || pos_k))
    throw ContractError("attention: positions given but relative bias is off");
  const int dh = cfg.dim / cfg.heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor qp = wq.forward(t, q);
  Tensor kp = wk.forward(t, k);
  Tensor vp = wv.forward(t, v);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(cfg.heads));
  for (int h = 0; h < cfg.heads; ++h) {
    Tensor qh = slice(qp, 1, h * dh, dh);
    Tensor kh = slice(kp, 1, h * dh, dh);
    Tensor vh = slice(vp, 1, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), att_scale);
    if (bias) scores = add(scores, bias->logits(t, *pos_q, *pos_k, h));
    Tensor attn = softmax(scores, 1);
    heads.push_back(matmul(attn, vh));
  }
  return wo.forward(t, concat(heads, 1));
}

TransformerLayer::TransformerLayer(ParamStore& ps, Rng& rng,
                                   const std::string& prefix,
                                   AttentionConfig cfg, int ffn_hidden) {
  ln1 = LayerNorm(ps, prefix + ".ln1", cfg.dim);
  ln2 = LayerNorm(ps, prefix + ".ln2", cfg.dim);
  attn = MultiHeadAttention(ps, rng, prefix + ".attn", cfg);
  ff1 = Linear(ps, rng, prefix + ".ff1", cfg.dim, ffn_hidden);
  ff2 = Linear(ps, rng, prefix + ".ff2", ffn_hidden, cfg.dim);
}

Tensor TransformerLayer::forward(Tape& t, Tensor x,
                                 const std::vector<int>* positions) const {
  Tensor h = ln1.forward(t, x);
  Tensor a = attn.forward(t, h, h, h, positions, positions);
  Tensor x1 = add(x, a);
  Tensor f = ff2.forward(t, gelu(ff1.forward(t, ln2.forward(t, x1))));
  return add(x1, f);
}

TransformerEncoder::TransformerEncoder(ParamStore& ps, Rng& rng,
                                       const std::string& prefix,
                                       EncoderConfig cfg) {
  AttentionConfig acfg{cfg.dim, cfg.heads, cfg.relative_bias,
                       cfg.max_relative_distance};
  for (int l = 0; l < cfg.layers; ++l)
    layers.emplace_back(ps, rng, prefix + ".layer" + std::to_string(l), acfg,
                        cfg.ffn_hidden);
  final_ln = LayerNorm(ps, prefix + ".final_ln", cfg.dim);
}

Tensor TransformerEncoder::forward(Tape& t, Tensor x,
                                   const std::vector<int>* positions) const {
  for (const auto& layer : layers) x = layer.forward(t, x, positions);
  return final_ln.forward(t, x);
}

MlpHead::MlpHead(ParamStore& ps, Rng& rng, const std::string& prefix, int in,
                 int hidden, int out) {
  l1 = Linear(ps, rng, prefix + ".l1", in, hidden);
  l2 = Linear(ps, rng, prefix + ".l2", hidden, out);
}

Tensor MlpHead::forward(Tape& t, Tensor x) const {
  return l2.forward(t, gelu(l1.forward(t, x)));
}

}  // namespace clipper::nn
