#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "clipper/model.hpp"

namespace clipper::obj {

struct Toggles {
  bool vtc = true;
  bool ctx = true;
  bool cycle = true;
  bool ftm = true;
  bool cop = true;
  bool symmetric_ctx = false;  // contextual contrastive both directions
  bool normalize = true;       // L2-normalize embeddings before similarities

  bool any() const { return vtc || ctx || cycle || ftm || cop; }
};

struct LossBundle {
  std::optional<double> vtc, vtc_ctx, cycle, ftm, cop;
  double total = 0.0;
};

// Binary matching targets: for text i the frames of clip i across the C*F
// flattened frame slots.
struct FtmLabels {
  int clips = 0, frames = 0;
  std::vector<std::vector<double>> rows;  // C rows of length C*F
};

FtmLabels build_ftm_labels(int clips, int frames);

// Per-video, per-modality shuffles for order prediction. The rep placed at
// slot j is the one with original index perm[j], which is also its class
// target.
struct CopTargets {
  std::vector<std::vector<int>> clip_perm;  // B x C
  std::vector<std::vector<int>> text_perm;  // B x C
};

// Temperature-scaled cosine similarity between a clip's frames and a text:
// mean over frames of <v_f, t>, divided by sigma.
ad::Tensor clip_text_similarity(ad::Tape& t, ad::Tensor frames,
                                ad::Tensor text, ad::Tensor inv_sigma,
                                bool normalize);

// All-pairs matrix: entry (i, j) is the similarity of frame group i with
// text j.
ad::Tensor similarity_matrix(ad::Tape& t,
                             std::span<const ad::Tensor> frame_groups,
                             std::span<const ad::Tensor> texts,
                             ad::Tensor inv_sigma, bool normalize);

// Symmetric InfoNCE over all B*C clip-text pairs on base embeddings.
ad::Tensor vtc_loss(ad::Tape& t, const nn::EmbeddingBatch& batch,
                    ad::Tensor inv_sigma, bool normalize);

// Contextual contrastive loss; video-to-text direction by default, the
// denominator running over every text in the batch.
ad::Tensor vtc_ctx_loss(ad::Tape& t, const nn::EmbeddingBatch& batch,
                        ad::Tensor inv_sigma, bool normalize, bool symmetric);

// Per-video similarity matrices, their row-stochastic forms and the
// round-trip product. s_t2v is the exact transpose of s_v2t.
struct SimilarityBundle {
  ad::Tensor s_v2t, s_t2v, p_v2t, p_t2v, roundtrip;
};

SimilarityBundle similarity_bundle(ad::Tape& t,
                                   std::span<const ad::Tensor> frame_groups,
                                   std::span<const ad::Tensor> texts,
                                   ad::Tensor inv_sigma, bool normalize);

// Mean over videos of the squared Frobenius distance between the round-trip
// probability matrix and the identity.
ad::Tensor cycle_loss(ad::Tape& t, const nn::EmbeddingBatch& batch,
                      ad::Tensor inv_sigma, bool normalize);

// Mean binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7].
ad::Tensor bce_mean(ad::Tape& t, ad::Tensor probs, ad::Tensor labels);

// Frame-text matching: the head maps each fused frame feature to one logit;
// mean BCE against the binary labels, averaged over the B*C texts.
ad::Tensor ftm_loss(ad::Tape& t, std::span<const ad::Tensor> fused_per_text,
                    const nn::MlpHead& head, const FtmLabels& labels);

// Mean categorical cross-entropy of logit rows against integer targets.
ad::Tensor ce_rows(ad::Tape& t, ad::Tensor logits,
                   std::span<const int> targets);

// Order prediction on shuffled per-video reps; clip and text terms averaged.
ad::Tensor cop_loss(ad::Tape& t, std::span<const ad::Tensor> clip_reps,
                    std::span<const ad::Tensor> text_reps,
                    const CopTargets& targets, const nn::MlpHead& clip_head,
                    const nn::MlpHead& text_head);

struct LossTerms {
  std::optional<ad::Tensor> vtc, vtc_ctx, cycle, ftm, cop;
};

// Unweighted sum of the present components; at least one must be present.
std::pair<ad::Tensor, LossBundle> total_loss(ad::Tape& t,
                                             const LossTerms& terms);

}  // namespace clipper::obj
