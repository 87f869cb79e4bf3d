#include "clipper/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "clipper/error.hpp"

namespace clipper::obj {

using ad::Shape;
using ad::Tape;
using ad::Tensor;

namespace {

constexpr double kProbClamp = 1e-7;

// mean of -log(P[i, diag_or_target(i)]) with probabilities clamped
Tensor nll_rows(Tape& t, Tensor logits, const std::vector<double>& mask) {
  Tensor p = clamp(softmax(logits, 1), kProbClamp, 1.0 - kProbClamp);
  Tensor m = t.constant(logits.shape(), mask);
  const double rows = static_cast<double>(logits.shape().dim(0));
  return scale(sum(mul(ad::log(p), m)), -1.0 / rows);
}

std::vector<double> diag_mask(int n) {
  std::vector<double> m(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    m[static_cast<std::size_t>(i) * n + i] = 1.0;
  return m;
}

Tensor mean_pooled_rows(std::span<const ad::Tensor> frame_groups,
                        bool normalize) {
  std::vector<Tensor> rows;
  rows.reserve(frame_groups.size());
  for (const auto& g : frame_groups) {
    Tensor f = normalize ? l2norm_rows(g) : g;
    rows.push_back(mean_axis(f, 0));
  }
  return concat(rows, 0);
}

Tensor stacked_texts(std::span<const ad::Tensor> texts, bool normalize) {
  std::vector<Tensor> rows(texts.begin(), texts.end());
  Tensor m = concat(rows, 0);
  return normalize ? l2norm_rows(m) : m;
}

void check_contextual(const nn::EmbeddingBatch& batch, const char* who) {
  if (batch.v_ctx.empty() || batch.t_ctx.empty())
    throw ContractError(std::string(who) + ": contextual embeddings missing");
}

}  // namespace

FtmLabels build_ftm_labels(int clips, int frames) {
  if (clips < 1 || frames < 1)
    throw ContractError("build_ftm_labels: clips and frames must be >= 1");
  FtmLabels out;
  out.clips = clips;
  out.frames = frames;
  const std::size_t width = static_cast<std::size_t>(clips) * frames;
  for (int i = 0; i < clips; ++i) {
    std::vector<double> row(width, 0.0);
    for (int f = 0; f < frames; ++f)
      row[static_cast<std::size_t>(i) * frames + f] = 1.0;
    out.rows.push_back(std::move(row));
  }
  return out;
}

Tensor clip_text_similarity(Tape&, Tensor frames, Tensor text,
                            Tensor inv_sigma, bool normalize) {
  if (frames.shape().rank() != 2 || text.shape().rank() != 2 ||
      text.shape().dim(0) != 1 || frames.shape().dim(1) != text.shape().dim(1))
    throw ShapeError("clip_text_similarity: frames " + frames.shape().str() +
                     " vs text " + text.shape().str());
  Tensor f = normalize ? l2norm_rows(frames) : frames;
  Tensor tx = normalize ? l2norm_rows(text) : text;
  Tensor dots = matmul(f, transpose(tx));  // F x 1
  return mul(mean(dots), inv_sigma);
}

Tensor similarity_matrix(Tape&, std::span<const ad::Tensor> frame_groups,
                         std::span<const ad::Tensor> texts, Tensor inv_sigma,
                         bool normalize) {
  if (frame_groups.empty() || texts.empty())
    throw ContractError("similarity_matrix: empty inputs");
  Tensor v = mean_pooled_rows(frame_groups, normalize);
  Tensor tx = stacked_texts(texts, normalize);
  return mul_scalar(matmul(v, transpose(tx)), inv_sigma);
}

Tensor vtc_loss(Tape& t, const nn::EmbeddingBatch& batch, Tensor inv_sigma,
                bool normalize) {
  const int n = batch.B * batch.C;
  if (n < 2) throw ContractError("vtc_loss: needs at least two pairs");
  Tensor s = similarity_matrix(t, batch.v, batch.t, inv_sigma, normalize);
  auto mask = diag_mask(n);
  Tensor v2t = nll_rows(t, s, mask);
  Tensor t2v = nll_rows(t, transpose(s), mask);
  return scale(add(v2t, t2v), 0.5);
}

Tensor vtc_ctx_loss(Tape& t, const nn::EmbeddingBatch& batch, Tensor inv_sigma,
                    bool normalize, bool symmetric) {
  const int n = batch.B * batch.C;
  if (n < 2) throw ContractError("vtc_ctx_loss: needs at least two pairs");
  check_contextual(batch, "vtc_ctx_loss");
  Tensor s =
      similarity_matrix(t, batch.v_ctx, batch.t_ctx, inv_sigma, normalize);
  auto mask = diag_mask(n);
  Tensor v2t = nll_rows(t, s, mask);
  if (!symmetric) return v2t;
  Tensor t2v = nll_rows(t, transpose(s), mask);
  return scale(add(v2t, t2v), 0.5);
}

SimilarityBundle similarity_bundle(Tape& t,
                                   std::span<const ad::Tensor> frame_groups,
                                   std::span<const ad::Tensor> texts,
                                   Tensor inv_sigma, bool normalize) {
  SimilarityBundle b;
  b.s_v2t = similarity_matrix(t, frame_groups, texts, inv_sigma, normalize);
  b.s_t2v = transpose(b.s_v2t);
  b.p_v2t = softmax(b.s_v2t, 1);
  b.p_t2v = softmax(b.s_t2v, 1);
  b.roundtrip = matmul(b.p_v2t, b.p_t2v);
  return b;
}

Tensor cycle_loss(Tape& t, const nn::EmbeddingBatch& batch, Tensor inv_sigma,
                  bool normalize) {
  if (batch.C < 2) throw ContractError("cycle_loss: needs C >= 2");
  check_contextual(batch, "cycle_loss");
  Tensor acc;
  Tensor eye = t.constant(Shape{batch.C, batch.C}, diag_mask(batch.C));
  for (int b = 0; b < batch.B; ++b) {
    std::span<const Tensor> frames(batch.v_ctx.data() + batch.flat(b, 0),
                                   static_cast<std::size_t>(batch.C));
    std::span<const Tensor> texts(batch.t_ctx.data() + batch.flat(b, 0),
                                  static_cast<std::size_t>(batch.C));
    SimilarityBundle sb =
        similarity_bundle(t, frames, texts, inv_sigma, normalize);
    Tensor diff = sub(sb.roundtrip, eye);
    Tensor frob = sum(mul(diff, diff));
    acc = acc.valid() ? add(acc, frob) : frob;
  }
  return scale(acc, 1.0 / batch.B);
}

Tensor bce_mean(Tape&, Tensor probs, Tensor labels) {
  if (!(probs.shape() == labels.shape()))
    throw ShapeError("bce_mean: probs " + probs.shape().str() +
                     " vs labels " + labels.shape().str());
  Tensor p = clamp(probs, kProbClamp, 1.0 - kProbClamp);
  Tensor one_minus_p = add_const(scale(p, -1.0), 1.0);
  Tensor one_minus_m = add_const(scale(labels, -1.0), 1.0);
  Tensor term = add(mul(labels, ad::log(p)),
                    mul(one_minus_m, ad::log(one_minus_p)));
  return scale(mean(term), -1.0);
}

Tensor ftm_loss(Tape& t, std::span<const ad::Tensor> fused_per_text,
                const nn::MlpHead& head, const FtmLabels& labels) {
  if (fused_per_text.empty()) throw ContractError("ftm_loss: no inputs");
  const std::size_t width =
      static_cast<std::size_t>(labels.clips) * labels.frames;
  Tensor acc;
  std::size_t text_index = 0;
  for (const auto& fused : fused_per_text) {
    if (static_cast<std::size_t>(fused.shape().dim(0)) != width)
      throw ContractError("ftm_loss: fused rows " +
                          std::to_string(fused.shape().dim(0)) +
                          " != label length " + std::to_string(width));
    const auto& row = labels.rows[text_index % labels.rows.size()];
    Tensor logits = head.forward(t, fused);  // (C*F) x 1
    Tensor probs = sigmoid(logits);
    Tensor m = t.constant(logits.shape(), row);
    Tensor bce = bce_mean(t, probs, m);
    acc = acc.valid() ? add(acc, bce) : bce;
    ++text_index;
  }
  return scale(acc, 1.0 / static_cast<double>(fused_per_text.size()));
}

Tensor ce_rows(Tape& t, Tensor logits, std::span<const int> targets) {
  if (logits.shape().rank() != 2 ||
      logits.shape().dim(0) != static_cast<int>(targets.size()))
    throw ShapeError("ce_rows: logits " + logits.shape().str() + " vs " +
                     std::to_string(targets.size()) + " targets");
  const int n = logits.shape().dim(0), k = logits.shape().dim(1);
  std::vector<double> mask(static_cast<std::size_t>(n) * k, 0.0);
  for (int i = 0; i < n; ++i) {
    if (targets[static_cast<std::size_t>(i)] < 0 ||
        targets[static_cast<std::size_t>(i)] >= k)
      throw ContractError("ce_rows: target out of range");
    mask[static_cast<std::size_t>(i) * k + targets[static_cast<std::size_t>(i)]] =
        1.0;
  }
  return nll_rows(t, logits, mask);
}

namespace {

void check_permutation(const std::vector<int>& p, int n) {
  if (static_cast<int>(p.size()) != n)
    throw ContractError("cop targets: wrong length");
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (int v : p) {
    if (v < 0 || v >= n || seen[static_cast<std::size_t>(v)])
      throw ContractError("cop targets: not a permutation");
    seen[static_cast<std::size_t>(v)] = 1;
  }
}

}  // namespace

Tensor cop_loss(Tape& t, std::span<const ad::Tensor> clip_reps,
                std::span<const ad::Tensor> text_reps,
                const CopTargets& targets, const nn::MlpHead& clip_head,
                const nn::MlpHead& text_head) {
  if (clip_reps.empty() || clip_reps.size() != text_reps.size())
    throw ContractError("cop_loss: rep counts mismatch");
  if (targets.clip_perm.size() != clip_reps.size() ||
      targets.text_perm.size() != clip_reps.size())
    throw ContractError("cop_loss: target counts mismatch");
  Tensor acc;
  for (std::size_t b = 0; b < clip_reps.size(); ++b) {
    const int c = clip_reps[b].shape().dim(0);
    check_permutation(targets.clip_perm[b], c);
    check_permutation(targets.text_perm[b], c);
    Tensor ce_clip =
        ce_rows(t, clip_head.forward(t, clip_reps[b]), targets.clip_perm[b]);
    Tensor ce_text =
        ce_rows(t, text_head.forward(t, text_reps[b]), targets.text_perm[b]);
    Tensor both = scale(add(ce_clip, ce_text), 0.5);
    acc = acc.valid() ? add(acc, both) : both;
  }
  return scale(acc, 1.0 / static_cast<double>(clip_reps.size()));
}

std::pair<Tensor, LossBundle> total_loss(Tape&, const LossTerms& terms) {
  LossBundle bundle;
  Tensor acc;
  auto take = [&](const std::optional<Tensor>& term,
                  std::optional<double>& slot) {
    if (!term) return;
    slot = term->scalar();
    acc = acc.valid() ? add(acc, *term) : *term;
  };
  take(terms.vtc, bundle.vtc);
  take(terms.vtc_ctx, bundle.vtc_ctx);
  take(terms.cycle, bundle.cycle);
  take(terms.ftm, bundle.ftm);
  take(terms.cop, bundle.cop);
  if (!acc.valid())
    throw ConfigError("total_loss: no objectives enabled");
  bundle.total = acc.scalar();
  return {acc, bundle};
}

}  // namespace clipper::obj
