#pragma once

#include <span>
#include <string>
#include <vector>

#include "clipper/blocks.hpp"

namespace clipper::nn {

struct ModelConfig {
  int dim = 32;         // shared embedding width D
  int heads = 2;
  int dual_layers = 2;  // clip-level video/text encoder depth
  int ctx_layers = 4;   // context encoder depth
  int mme_blocks = 2;   // multimodal encoder depth (self+cross pairs)
  int ffn_mult = 2;
  int max_rel_dist = 64;
  int max_text_len = 32;
  int frame_dim = 16;  // raw per-frame feature width
  int vocab = 60;
  int clips = 8;   // C, sizes the order-prediction heads
  int frames = 4;  // F, sizes the clip-rep order head
  bool context_encoders = true;  // off: contextual embeddings = base
  double sigma_init = 0.07;

  void validate() const;
};

// Learnable similarity temperature, kept strictly positive through an
// exponential parameterization of a free scalar.
struct Temperature {
  ad::Parameter* log_sigma = nullptr;

  Temperature() = default;
  Temperature(ParamStore& ps, const std::string& name, double sigma_init);
  ad::Tensor inv_sigma(ad::Tape& t) const;  // exp(-log_sigma)
  double sigma() const;
};

// Per-frame projection followed by temporal self-attention across the frames
// of one clip. Position-free: identical frames yield identical embeddings.
struct VideoEncoder {
  Linear proj;
  TransformerEncoder temporal;
  int frame_dim = 0;

  VideoEncoder() = default;
  VideoEncoder(ParamStore& ps, Rng& rng, const std::string& prefix,
               const ModelConfig& cfg);
  ad::Tensor forward(ad::Tape& t, ad::Tensor frames) const;  // F x D_in -> F x D
};

struct TextEncoder {
  ad::Parameter* tokens = nullptr;  // vocab x D
  ad::Parameter* cls = nullptr;     // 1 x D
  ad::Parameter* pos = nullptr;     // (max_len + 1) x D
  TransformerEncoder enc;
  int vocab = 0, dim = 0, max_len = 0;

  struct Output {
    ad::Tensor seq;  // (L+1) x D, classification token first
    ad::Tensor cls;  // 1 x D
  };

  TextEncoder() = default;
  TextEncoder(ParamStore& ps, Rng& rng, const std::string& prefix,
              const ModelConfig& cfg);
  Output forward(ad::Tape& t, std::span<const int> ids) const;
};

// Alternating self-attention over the frame sequence and cross-attention of
// frames (queries) onto the text tokens, producing per-frame fused features.
struct MultiModalEncoder {
  struct Block {
    LayerNorm ln_self, ln_cross, ln_ffn;
    MultiHeadAttention self_attn, cross_attn;
    Linear ff1, ff2;
  };
  std::vector<Block> blocks;
  LayerNorm final_ln;

  MultiModalEncoder() = default;
  MultiModalEncoder(ParamStore& ps, Rng& rng, const std::string& prefix,
                    const ModelConfig& cfg);
  ad::Tensor forward(ad::Tape& t, ad::Tensor frames, ad::Tensor text_seq) const;
};

// Single cross-attention layer fusing contextual frame embeddings (queries)
// with contextual text embeddings (keys/values); per clip the fused frame
// embeddings concatenate into one F*D representation.
struct CopFusion {
  LayerNorm ln;
  MultiHeadAttention cross;

  CopFusion() = default;
  CopFusion(ParamStore& ps, Rng& rng, const std::string& prefix,
            const ModelConfig& cfg);
  ad::Tensor fuse(ad::Tape& t, ad::Tensor v_ctx_full,
                  ad::Tensor t_ctx_full) const;  // (C*F) x D
  static ad::Tensor clip_reps(ad::Tensor fused, int clips,
                              int frames);  // C x (F*D)
};

struct ClipInput {
  std::vector<double> frame_features;  // frames x frame_dim, row-major
  int frames = 0;
  std::vector<int> tokens;
};

struct VideoInput {
  std::vector<ClipInput> clips;
};

struct BatchInput {
  std::vector<VideoInput> videos;
};

// Base and context-enhanced embeddings for a batch of B videos x C clips.
struct EmbeddingBatch {
  int B = 0, C = 0, F = 0, D = 0;
  std::vector<ad::Tensor> v;       // B*C entries, F x D
  std::vector<ad::Tensor> t;       // B*C entries, 1 x D
  std::vector<ad::Tensor> t_seq;   // B*C entries, (L+1) x D
  std::vector<ad::Tensor> v_ctx;   // B*C entries, F x D
  std::vector<ad::Tensor> t_ctx;   // B*C entries, 1 x D
  std::vector<ad::Tensor> v_full;      // B entries, (C*F) x D
  std::vector<ad::Tensor> v_ctx_full;  // B entries, (C*F) x D
  std::vector<ad::Tensor> t_ctx_full;  // B entries, C x D

  std::size_t flat(int b, int i) const {
    return static_cast<std::size_t>(b) * C + static_cast<std::size_t>(i);
  }
};

struct Model {
  ModelConfig cfg;
  ParamStore params;
  VideoEncoder video_enc;
  TextEncoder text_enc;
  TransformerEncoder video_ctx_enc;
  TransformerEncoder text_ctx_enc;
  MultiModalEncoder mme;
  CopFusion fusion;
  MlpHead ftm_head;       // D -> 1 per frame
  MlpHead cop_clip_head;  // F*D -> C
  MlpHead cop_text_head;  // D -> C
  Temperature temperature;

  Model(ModelConfig cfg, std::uint64_t seed);

  // Contextual frame embeddings over one video's flattened frame sequence;
  // positions are global frame indices.
  ad::Tensor video_context(ad::Tape& t, ad::Tensor frames_full,
                           const std::vector<int>& positions) const;
  // Position-free contextual text embeddings over one video's C captions.
  ad::Tensor text_context(ad::Tape& t, ad::Tensor cls_seq) const;

  EmbeddingBatch encode_batch(ad::Tape& t, const BatchInput& batch,
                              bool with_context) const;
};

}  // namespace clipper::nn
