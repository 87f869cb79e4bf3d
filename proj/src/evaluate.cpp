#include "clipper/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

#include "clipper/error.hpp"
#include "clipper/objectives.hpp"

namespace clipper::eval {

using ad::Shape;
using ad::Tape;
using ad::Tensor;

Fusion fusion_from(const std::string& name) {
  if (name == "averaged") return Fusion::kAveraged;
  if (name == "base") return Fusion::kBase;
  if (name == "ctx") return Fusion::kContextual;
  throw ConfigError("unknown fusion mode '" + name +
                    "' (expected averaged|base|ctx)");
}

std::string fusion_name(Fusion fusion) {
  switch (fusion) {
    case Fusion::kAveraged: return "averaged";
    case Fusion::kBase: return "base";
    case Fusion::kContextual: return "ctx";
  }
  throw ContractError("bad fusion mode");
}

PromptEmbeddings encode_prompts(const nn::Model& model,
                                const data::PromptSet& prompts) {
  if (prompts.classes < 1) throw ContractError("encode_prompts: no classes");
  PromptEmbeddings out;
  out.classes = prompts.classes;
  out.base.resize(static_cast<std::size_t>(prompts.classes));
  out.ctx.resize(static_cast<std::size_t>(prompts.classes));

  Tape t;
  std::vector<Tensor> cls_rows;  // class-major, variants inside
  for (int k = 0; k < prompts.classes; ++k) {
    for (int p = 0; p < data::kPromptVariants; ++p) {
      const auto& tokens =
          prompts.prompts[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)];
      if (tokens.empty()) throw ContractError("encode_prompts: empty prompt");
      auto enc = model.text_enc.forward(t, tokens);
      out.base[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)] =
          enc.cls.value_copy();
      cls_rows.push_back(enc.cls);
    }
  }
  Tensor joint = model.text_context(t, concat(cls_rows, 0));
  for (int k = 0; k < prompts.classes; ++k)
    for (int p = 0; p < data::kPromptVariants; ++p) {
      Tensor row = slice(joint, 0, k * data::kPromptVariants + p, 1);
      out.ctx[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)] =
          row.value_copy();
    }
  return out;
}

std::vector<std::pair<int, int>> window_spans(int frames, int window) {
  if (frames < 1) throw ContractError("window_spans: empty video");
  if (window < 1) throw ContractError("window_spans: window must be >= 1");
  std::vector<std::pair<int, int>> spans;
  for (int begin = 0; begin < frames; begin += window)
    spans.emplace_back(begin, std::min(begin + window, frames));
  return spans;
}

int window_truth(std::span<const int> frame_labels, int begin, int end) {
  std::map<int, int> counts;
  for (int i = begin; i < end; ++i)
    counts[frame_labels[static_cast<std::size_t>(i)]]++;
  int best = -1, best_count = 0;
  for (int i = begin; i < end; ++i) {
    const int label = frame_labels[static_cast<std::size_t>(i)];
    const int c = counts[label];
    if (c > best_count) {  // first label reaching the max wins ties
      best = label;
      best_count = c;
    }
  }
  return best;
}

namespace {

// similarity of every frame-window against every prompt of one variant
std::vector<std::vector<double>> variant_scores(
    Tape& t, const std::vector<Tensor>& windows,
    const std::vector<std::vector<double>>& prompt_vecs, double inv_sigma_val,
    bool normalize) {
  std::vector<Tensor> texts;
  texts.reserve(prompt_vecs.size());
  for (const auto& v : prompt_vecs)
    texts.push_back(t.constant(Shape{1, static_cast<int>(v.size())}, v));
  Tensor inv = t.constant(Shape{1}, {inv_sigma_val});
  Tensor s = obj::similarity_matrix(t, windows, texts, inv, normalize);
  const int rows = s.shape().dim(0), cols = s.shape().dim(1);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(rows));
  auto sv = s.value();
  for (int i = 0; i < rows; ++i) {
    out[static_cast<std::size_t>(i)].assign(
        sv.begin() + static_cast<std::ptrdiff_t>(i) * cols,
        sv.begin() + static_cast<std::ptrdiff_t>(i + 1) * cols);
  }
  return out;
}

}  // namespace

VideoScores score_video(const nn::Model& model, const data::VideoRecord& video,
                        const PromptEmbeddings& prompts,
                        const EvalConfig& cfg) {
  if (video.clips.empty())
    throw ContractError("score_video: video " + std::to_string(video.id) +
                        " has no clips");
  // frame stream in time order; each stored frame carries its clip's label
  std::vector<std::vector<double>> frames;
  std::vector<int> labels;
  for (const auto& clip : video.clips)
    for (const auto& f : clip.frames) {
      frames.push_back(f);
      labels.push_back(clip.phase_label);
    }
  const int n = static_cast<int>(frames.size());
  if (n < cfg.window)
    std::cerr << "eval: video " << video.id << " has " << n
              << " frames, shorter than window " << cfg.window
              << "; using one truncated window\n";
  auto spans = window_spans(n, cfg.window);

  Tape t;
  std::vector<Tensor> base_windows;
  for (const auto& [begin, end] : spans) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(end - begin) * model.cfg.frame_dim);
    for (int i = begin; i < end; ++i)
      flat.insert(flat.end(), frames[static_cast<std::size_t>(i)].begin(),
                  frames[static_cast<std::size_t>(i)].end());
    Tensor raw = t.constant(Shape{end - begin, model.cfg.frame_dim}, flat);
    base_windows.push_back(model.video_enc.forward(t, raw));
  }

  std::vector<Tensor> ctx_windows;
  if (cfg.fusion != Fusion::kBase) {
    Tensor full = concat(base_windows, 0);
    std::vector<int> positions(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) positions[static_cast<std::size_t>(i)] = i;
    Tensor ctx = model.video_context(t, full, positions);
    for (const auto& [begin, end] : spans)
      ctx_windows.push_back(slice(ctx, 0, begin, end - begin));
  }

  const double inv_sigma = 1.0 / model.temperature.sigma();
  VideoScores out;
  out.truth.reserve(spans.size());
  for (const auto& [begin, end] : spans)
    out.truth.push_back(window_truth(labels, begin, end));

  for (int p = 0; p < data::kPromptVariants; ++p) {
    std::vector<std::vector<double>> base_prompts, ctx_prompts;
    for (int k = 0; k < prompts.classes; ++k) {
      base_prompts.push_back(
          prompts.base[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)]);
      ctx_prompts.push_back(
          prompts.ctx[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)]);
    }
    std::vector<std::vector<double>> scores;
    switch (cfg.fusion) {
      case Fusion::kBase:
        scores = variant_scores(t, base_windows, base_prompts, inv_sigma,
                                cfg.normalize);
        break;
      case Fusion::kContextual:
        scores = variant_scores(t, ctx_windows, ctx_prompts, inv_sigma,
                                cfg.normalize);
        break;
      case Fusion::kAveraged: {
        auto b = variant_scores(t, base_windows, base_prompts, inv_sigma,
                                cfg.normalize);
        auto c = variant_scores(t, ctx_windows, ctx_prompts, inv_sigma,
                                cfg.normalize);
        scores = b;
        for (std::size_t i = 0; i < scores.size(); ++i)
          for (std::size_t j = 0; j < scores[i].size(); ++j)
            scores[i][j] = 0.5 * (b[i][j] + c[i][j]);
        break;
      }
    }
    out.scores.push_back(std::move(scores));
  }
  return out;
}

double macro_f1(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.size() != truth.size() || truth.empty())
    throw ContractError("macro_f1: prediction/truth size mismatch or empty");
  std::set<int> classes(truth.begin(), truth.end());
  classes.insert(predictions.begin(), predictions.end());
  double sum = 0.0;
  for (int c : classes) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool pred = predictions[i] == c;
      const bool is = truth[i] == c;
      tp += pred && is;
      fp += pred && !is;
      fn += !pred && is;
    }
    const long denom = 2 * tp + fp + fn;
    sum += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) /
                                  static_cast<double>(denom);
  }
  return sum / static_cast<double>(classes.size());
}

double dataset_f1(std::span<const double> per_video) {
  if (per_video.empty()) throw ContractError("dataset_f1: no videos");
  double s = 0.0;
  for (double x : per_video) s += x;
  return s / static_cast<double>(per_video.size());
}

double average_precision(std::span<const double> scores,
                         std::span<const char> positives) {
  if (scores.size() != positives.size() || scores.empty())
    throw ContractError("average_precision: bad inputs");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  long seen_pos = 0;
  double sum = 0.0;
  long n_pos = 0;
  for (char p : positives) n_pos += p ? 1 : 0;
  if (n_pos == 0) throw ContractError("average_precision: no positives");
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (positives[order[rank]]) {
      ++seen_pos;
      sum += static_cast<double>(seen_pos) / static_cast<double>(rank + 1);
    }
  }
  return sum / static_cast<double>(n_pos);
}

MetricsReport evaluate(const nn::Model& model, const data::Corpus& corpus,
                       const data::PromptSet& prompts, const EvalConfig& cfg) {
  PromptEmbeddings encoded = encode_prompts(model, prompts);
  MetricsReport report;
  report.per_video_f1.assign(data::kPromptVariants, {});

  // scores[variant][sample][class], truths[sample] across the whole corpus
  std::vector<std::vector<std::vector<double>>> all_scores(
      data::kPromptVariants);
  std::vector<int> all_truth;

  for (const auto& video : corpus.videos) {
    VideoScores vs = score_video(model, video, encoded, cfg);
    report.video_ids.push_back(video.id);
    for (int p = 0; p < data::kPromptVariants; ++p) {
      std::vector<int> preds;
      preds.reserve(vs.truth.size());
      for (const auto& row : vs.scores[static_cast<std::size_t>(p)]) {
        int arg = 0;
        for (std::size_t k = 1; k < row.size(); ++k)
          if (row[k] > row[static_cast<std::size_t>(arg)])
            arg = static_cast<int>(k);
        preds.push_back(arg + 1);  // labels are 1-based
      }
      report.per_video_f1[static_cast<std::size_t>(p)].push_back(
          macro_f1(preds, vs.truth));
      for (const auto& row : vs.scores[static_cast<std::size_t>(p)])
        all_scores[static_cast<std::size_t>(p)].push_back(row);
    }
    all_truth.insert(all_truth.end(), vs.truth.begin(), vs.truth.end());
  }

  for (int p = 0; p < data::kPromptVariants; ++p) {
    report.dataset_f1_per_variant.push_back(
        dataset_f1(report.per_video_f1[static_cast<std::size_t>(p)]));

    double ap_sum = 0.0;
    int ap_classes = 0;
    int skipped = 0;
    for (int k = 0; k < encoded.classes; ++k) {
      std::vector<char> positives;
      std::vector<double> scores;
      for (std::size_t s = 0; s < all_truth.size(); ++s) {
        positives.push_back(all_truth[s] == k + 1 ? 1 : 0);
        scores.push_back(
            all_scores[static_cast<std::size_t>(p)][s][static_cast<std::size_t>(k)]);
      }
      long n_pos = std::count(positives.begin(), positives.end(), 1);
      if (n_pos == 0) {
        ++skipped;
        continue;
      }
      ap_sum += average_precision(scores, positives);
      ++ap_classes;
    }
    if (p == 0 && skipped > 0)
      std::cerr << "eval: " << skipped
                << " class(es) with no positives excluded from mAP\n";
    report.skipped_classes = skipped;
    report.map_per_variant.push_back(
        ap_classes > 0 ? ap_sum / ap_classes : 0.0);
  }

  report.f1 = dataset_f1(report.dataset_f1_per_variant);
  report.map = dataset_f1(report.map_per_variant);
  return report;
}

std::vector<SweepRow> temporal_window_sweep(const nn::Model& model,
                                            const data::Corpus& corpus,
                                            const data::PromptSet& prompts,
                                            EvalConfig cfg,
                                            std::span<const int> windows) {
  std::vector<SweepRow> rows;
  for (int w : windows) {
    cfg.window = w;
    MetricsReport report = evaluate(model, corpus, prompts, cfg);
    rows.push_back({w, report.f1, report.map});
  }
  return rows;
}

CopAccuracy cop_order_accuracy(const nn::Model& model,
                               const data::Corpus& corpus) {
  const int C = model.cfg.clips;
  const int F = model.cfg.frames;
  CopAccuracy acc;
  long clip_hits = 0, text_hits = 0, slots = 0;
  for (const auto& video : corpus.videos) {
    const int blocks = static_cast<int>(video.clips.size()) / C;
    for (int blk = 0; blk < blocks; ++blk) {
      nn::BatchInput input;
      nn::VideoInput vin;
      for (int i = 0; i < C; ++i) {
        const auto& rec = video.clips[static_cast<std::size_t>(blk * C + i)];
        nn::ClipInput clip;
        clip.frames = F;
        for (int fi : data::even_frame_indices(
                 static_cast<int>(rec.frames.size()), F)) {
          const auto& row = rec.frames[static_cast<std::size_t>(fi)];
          clip.frame_features.insert(clip.frame_features.end(), row.begin(),
                                     row.end());
        }
        clip.tokens = rec.caption_a;
        vin.clips.push_back(std::move(clip));
      }
      input.videos.push_back(std::move(vin));

      Tape t;
      nn::EmbeddingBatch batch = model.encode_batch(t, input, true);
      Tensor fused = model.fusion.fuse(t, batch.v_ctx_full[0],
                                       batch.t_ctx_full[0]);
      Tensor reps = nn::CopFusion::clip_reps(fused, C, F);
      Tensor clip_logits = model.cop_clip_head.forward(t, reps);
      Tensor text_logits = model.cop_text_head.forward(t, batch.t_ctx_full[0]);
      auto argmax_rows = [&](Tensor logits) {
        std::vector<int> out;
        auto v = logits.value();
        const int cols = logits.shape().dim(1);
        for (int r = 0; r < logits.shape().dim(0); ++r) {
          int arg = 0;
          for (int k = 1; k < cols; ++k)
            if (v[static_cast<std::size_t>(r) * cols + k] >
                v[static_cast<std::size_t>(r) * cols + arg])
              arg = k;
          out.push_back(arg);
        }
        return out;
      };
      auto cp = argmax_rows(clip_logits);
      auto tp = argmax_rows(text_logits);
      for (int i = 0; i < C; ++i) {
        clip_hits += cp[static_cast<std::size_t>(i)] == i;
        text_hits += tp[static_cast<std::size_t>(i)] == i;
        ++slots;
      }
    }
  }
  if (slots == 0)
    throw ContractError("cop_order_accuracy: no evaluable clip groups");
  acc.clip_acc = static_cast<double>(clip_hits) / static_cast<double>(slots);
  acc.text_acc = static_cast<double>(text_hits) / static_cast<double>(slots);
  acc.combined = 0.5 * (acc.clip_acc + acc.text_acc);
  acc.slots = slots;
  return acc;
}

}  // namespace clipper::eval
