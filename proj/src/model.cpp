#include "clipper/model.hpp"

#include <cmath>

#include "clipper/error.hpp"

namespace clipper::nn {

using ad::Shape;
using ad::Tape;
using ad::Tensor;

void ModelConfig::validate() const {
  if (dim < 1 || heads < 1 || dim % heads != 0)
    throw ConfigError("model dim must be positive and divisible by heads");
  if (dual_layers < 1 || ctx_layers < 1 || mme_blocks < 1)
    throw ConfigError("encoder depths must be >= 1");
  if (frame_dim < 1 || vocab < 1 || max_text_len < 1)
    throw ConfigError("frame_dim, vocab and max_text_len must be >= 1");
  if (clips < 1 || frames < 1)
    throw ConfigError("clips and frames must be >= 1");
  if (max_rel_dist < 1) throw ConfigError("max_rel_dist must be >= 1");
  if (!(sigma_init > 0.0)) throw ConfigError("sigma_init must be > 0");
}

Temperature::Temperature(ParamStore& ps, const std::string& name,
                         double sigma_init) {
  log_sigma = &ps.create(name, Shape{1}, {std::log(sigma_init)});
}

Tensor Temperature::inv_sigma(Tape& t) const {
  return ad::exp(ad::scale(t.use(*log_sigma), -1.0));
}

double Temperature::sigma() const { return std::exp(log_sigma->value[0]); }

VideoEncoder::VideoEncoder(ParamStore& ps, Rng& rng, const std::string& prefix,
                           const ModelConfig& cfg)
    : frame_dim(cfg.frame_dim) {
  proj = Linear(ps, rng, prefix + ".proj", cfg.frame_dim, cfg.dim);
  EncoderConfig ecfg{cfg.dual_layers, cfg.dim, cfg.heads,
                     cfg.ffn_mult * cfg.dim, false, cfg.max_rel_dist};
  temporal = TransformerEncoder(ps, rng, prefix + ".temporal", ecfg);
}

Tensor VideoEncoder::forward(Tape& t, Tensor frames) const {
  if (frames.shape().rank() != 2 || frames.shape().dim(1) != frame_dim)
    throw ShapeError("video encoder: frames must be F x " +
                     std::to_string(frame_dim) + ", got " +
                     frames.shape().str());
  return temporal.forward(t, proj.forward(t, frames));
}

TextEncoder::TextEncoder(ParamStore& ps, Rng& rng, const std::string& prefix,
                         const ModelConfig& cfg)
    : vocab(cfg.vocab), dim(cfg.dim), max_len(cfg.max_text_len) {
  tokens = &ps.create_trunc_normal(prefix + ".tokens",
                                   Shape{cfg.vocab, cfg.dim}, rng);
  cls = &ps.create_trunc_normal(prefix + ".cls", Shape{1, cfg.dim}, rng);
  pos = &ps.create_trunc_normal(prefix + ".pos",
                                Shape{cfg.max_text_len + 1, cfg.dim}, rng);
  EncoderConfig ecfg{cfg.dual_layers, cfg.dim, cfg.heads,
                     cfg.ffn_mult * cfg.dim, false, cfg.max_rel_dist};
  enc = TransformerEncoder(ps, rng, prefix + ".enc", ecfg);
}

TextEncoder::Output TextEncoder::forward(Tape& t,
                                         std::span<const int> ids) const {
  if (ids.empty()) throw ContractError("text encoder: empty token sequence");
  if (static_cast<int>(ids.size()) > max_len)
    throw ContractError("text encoder: sequence length " +
                        std::to_string(ids.size()) + " exceeds max " +
                        std::to_string(max_len));
  const std::size_t d = static_cast<std::size_t>(dim);
  std::vector<std::size_t> idx(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab)
      throw ContractError("text encoder: token id " + std::to_string(ids[i]) +
                          " outside vocabulary of size " +
                          std::to_string(vocab));
    for (std::size_t j = 0; j < d; ++j)
      idx[i * d + j] = static_cast<std::size_t>(ids[i]) * d + j;
  }
  Tensor emb = gather_flat(t.use(*tokens), std::move(idx),
                           Shape{static_cast<int>(ids.size()), dim});
  Tensor seq = concat(t.use(*cls), emb, 0);
  Tensor positions = slice(t.use(*pos), 0, 0, static_cast<int>(ids.size()) + 1);
  Tensor encoded = enc.forward(t, add(seq, positions));
  return {encoded, slice(encoded, 0, 0, 1)};
}

MultiModalEncoder::MultiModalEncoder(ParamStore& ps, Rng& rng,
                                     const std::string& prefix,
                                     const ModelConfig& cfg) {
  AttentionConfig acfg{cfg.dim, cfg.heads, false, cfg.max_rel_dist};
  for (int i = 0; i < cfg.mme_blocks; ++i) {
    const std::string p = prefix + ".block" + std::to_string(i);
    Block b;
    b.ln_self = LayerNorm(ps, p + ".ln_self", cfg.dim);
    b.ln_cross = LayerNorm(ps, p + ".ln_cross", cfg.dim);
    b.ln_ffn = LayerNorm(ps, p + ".ln_ffn", cfg.dim);
    b.self_attn = MultiHeadAttention(ps, rng, p + ".self", acfg);
    b.cross_attn = MultiHeadAttention(ps, rng, p + ".cross", acfg);
    b.ff1 = Linear(ps, rng, p + ".ff1", cfg.dim, cfg.ffn_mult * cfg.dim);
    b.ff2 = Linear(ps, rng, p + ".ff2", cfg.ffn_mult * cfg.dim, cfg.dim);
    blocks.push_back(std::move(b));
  }
  final_ln = LayerNorm(ps, prefix + ".final_ln", cfg.dim);
}

Tensor MultiModalEncoder::forward(Tape& t, Tensor frames,
                                  Tensor text_seq) const {
  Tensor x = frames;
  for (const auto& b : blocks) {
    Tensor hs = b.ln_self.forward(t, x);
    x = add(x, b.self_attn.forward(t, hs, hs, hs));
    Tensor hc = b.ln_cross.forward(t, x);
    x = add(x, b.cross_attn.forward(t, hc, text_seq, text_seq));
    Tensor hf = b.ln_ffn.forward(t, x);
    x = add(x, b.ff2.forward(t, gelu(b.ff1.forward(t, hf))));
  }
  return final_ln.forward(t, x);
}

CopFusion::CopFusion(ParamStore& ps, Rng& rng, const std::string& prefix,
                     const ModelConfig& cfg) {
  ln = LayerNorm(ps, prefix + ".ln", cfg.dim);
  AttentionConfig acfg{cfg.dim, cfg.heads, false, cfg.max_rel_dist};
  cross = MultiHeadAttention(ps, rng, prefix + ".cross", acfg);
}

Tensor CopFusion::fuse(Tape& t, Tensor v_ctx_full, Tensor t_ctx_full) const {
  Tensor h = ln.forward(t, v_ctx_full);
  return add(v_ctx_full, cross.forward(t, h, t_ctx_full, t_ctx_full));
}

Tensor CopFusion::clip_reps(Tensor fused, int clips, int frames) {
  const int d = fused.shape().dim(1);
  if (fused.shape().dim(0) != clips * frames)
    throw ShapeError("clip_reps: fused shape " + fused.shape().str() +
                     " does not match clips*frames");
  // row-major (C*F) x D is exactly C x (F*D)
  return reshape(fused, Shape{clips, frames * d});
}

Model::Model(ModelConfig config, std::uint64_t seed) : cfg(config) {
  cfg.validate();
  Rng rng = Rng::derive(seed, 0x1717ull);
  video_enc = VideoEncoder(params, rng, "video_enc", cfg);
  text_enc = TextEncoder(params, rng, "text_enc", cfg);
  EncoderConfig vctx{cfg.ctx_layers, cfg.dim, cfg.heads,
                     cfg.ffn_mult * cfg.dim, true, cfg.max_rel_dist};
  video_ctx_enc = TransformerEncoder(params, rng, "video_ctx", vctx);
  EncoderConfig tctx{cfg.ctx_layers, cfg.dim, cfg.heads,
                     cfg.ffn_mult * cfg.dim, false, cfg.max_rel_dist};
  text_ctx_enc = TransformerEncoder(params, rng, "text_ctx", tctx);
  mme = MultiModalEncoder(params, rng, "mme", cfg);
  fusion = CopFusion(params, rng, "cop_fusion", cfg);
  ftm_head = MlpHead(params, rng, "ftm_head", cfg.dim, cfg.ffn_mult * cfg.dim, 1);
  cop_clip_head = MlpHead(params, rng, "cop_clip_head", cfg.frames * cfg.dim,
                          cfg.ffn_mult * cfg.dim, cfg.clips);
  cop_text_head = MlpHead(params, rng, "cop_text_head", cfg.dim,
                          cfg.ffn_mult * cfg.dim, cfg.clips);
  temperature = Temperature(params, "temperature.log_sigma", cfg.sigma_init);
}

Tensor Model::video_context(Tape& t, Tensor frames_full,
                            const std::vector<int>& positions) const {
  if (!cfg.context_encoders) return frames_full;
  if (static_cast<int>(positions.size()) != frames_full.shape().dim(0))
    throw ShapeError("video_context: positions size mismatch");
  return video_ctx_enc.forward(t, frames_full, &positions);
}

Tensor Model::text_context(Tape& t, Tensor cls_seq) const {
  if (!cfg.context_encoders) return cls_seq;
  return text_ctx_enc.forward(t, cls_seq);
}

EmbeddingBatch Model::encode_batch(Tape& t, const BatchInput& batch,
                                   bool with_context) const {
  EmbeddingBatch out;
  out.B = static_cast<int>(batch.videos.size());
  if (out.B == 0) throw ContractError("encode_batch: empty batch");
  out.C = static_cast<int>(batch.videos[0].clips.size());
  out.F = batch.videos[0].clips.empty() ? 0 : batch.videos[0].clips[0].frames;
  out.D = cfg.dim;
  for (const auto& vid : batch.videos) {
    if (static_cast<int>(vid.clips.size()) != out.C)
      throw ContractError("encode_batch: ragged clip counts");
    std::vector<Tensor> clip_frames;
    std::vector<Tensor> clip_cls;
    for (const auto& clip : vid.clips) {
      if (clip.frames != out.F)
        throw ContractError("encode_batch: ragged frame counts");
      Tensor raw = t.constant(Shape{clip.frames, cfg.frame_dim},
                              clip.frame_features);
      Tensor v = video_enc.forward(t, raw);
      auto txt = text_enc.forward(t, clip.tokens);
      out.v.push_back(v);
      out.t.push_back(txt.cls);
      out.t_seq.push_back(txt.seq);
      clip_frames.push_back(v);
      clip_cls.push_back(txt.cls);
    }
    Tensor v_full = concat(clip_frames, 0);
    out.v_full.push_back(v_full);
    if (with_context) {
      std::vector<int> positions(static_cast<std::size_t>(out.C) * out.F);
      for (std::size_t i = 0; i < positions.size(); ++i)
        positions[i] = static_cast<int>(i);
      Tensor vc = video_context(t, v_full, positions);
      Tensor tc = text_context(t, concat(clip_cls, 0));
      out.v_ctx_full.push_back(vc);
      out.t_ctx_full.push_back(tc);
      for (int i = 0; i < out.C; ++i) {
        out.v_ctx.push_back(slice(vc, 0, i * out.F, out.F));
        out.t_ctx.push_back(slice(tc, 0, i, 1));
      }
    }
  }
  return out;
}

}  // namespace clipper::nn
