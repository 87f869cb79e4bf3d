#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clipper/corpus.hpp"
#include "clipper/model.hpp"
#include "clipper/sampler.hpp"

namespace clipper::eval {

enum class Fusion { kAveraged, kBase, kContextual };

Fusion fusion_from(const std::string& name);
std::string fusion_name(Fusion fusion);

struct EvalConfig {
  int window = 4;  // frames per scoring window, non-overlapping
  Fusion fusion = Fusion::kAveraged;
  bool normalize = true;
  bool multilabel = false;  // headline metric is mAP instead of F1
};

// Base and context-enhanced prompt embeddings; the contextual pass runs the
// whole prompt set jointly through the position-free text context encoder.
struct PromptEmbeddings {
  int classes = 0;
  std::vector<std::array<std::vector<double>, data::kPromptVariants>> base;
  std::vector<std::array<std::vector<double>, data::kPromptVariants>> ctx;
};

PromptEmbeddings encode_prompts(const nn::Model& model,
                                const data::PromptSet& prompts);

// [begin, end) frame spans of the non-overlapping windows; a video shorter
// than the window yields a single truncated span.
std::vector<std::pair<int, int>> window_spans(int frames, int window);

// Majority frame label; ties resolve to the label seen earliest in the span.
int window_truth(std::span<const int> frame_labels, int begin, int end);

struct VideoScores {
  // scores[variant][window][class]
  std::vector<std::vector<std::vector<double>>> scores;
  std::vector<int> truth;  // per window, 1..K
};

VideoScores score_video(const nn::Model& model, const data::VideoRecord& video,
                        const PromptEmbeddings& prompts,
                        const EvalConfig& cfg);

// Macro-F1 over the classes present in the truth or the predictions of this
// video; a class with no true positives scores zero.
double macro_f1(std::span<const int> predictions, std::span<const int> truth);

// Unweighted mean of per-video scores.
double dataset_f1(std::span<const double> per_video);

// Precision at each positive over the descending score ranking.
double average_precision(std::span<const double> scores,
                         std::span<const char> positives);

struct MetricsReport {
  std::vector<int> video_ids;
  std::vector<std::vector<double>> per_video_f1;  // [variant][video]
  std::vector<double> dataset_f1_per_variant;
  std::vector<double> map_per_variant;
  double f1 = 0.0;   // mean over prompt variants
  double map = 0.0;  // mean over prompt variants
  int skipped_classes = 0;  // zero-positive classes excluded from mAP
};

MetricsReport evaluate(const nn::Model& model, const data::Corpus& corpus,
                       const data::PromptSet& prompts, const EvalConfig& cfg);

struct SweepRow {
  int window = 0;
  double f1 = 0.0;
  double map = 0.0;
};

std::vector<SweepRow> temporal_window_sweep(const nn::Model& model,
                                            const data::Corpus& corpus,
                                            const data::PromptSet& prompts,
                                            EvalConfig cfg,
                                            std::span<const int> windows);

// Order-prediction accuracy on held-out videos: consecutive groups of C
// clips pass the context encoders and fusion in temporal order, and each
// head must recover its slot index.
struct CopAccuracy {
  double clip_acc = 0.0;
  double text_acc = 0.0;
  double combined = 0.0;
  long slots = 0;
};

CopAccuracy cop_order_accuracy(const nn::Model& model,
                               const data::Corpus& corpus);

}  // namespace clipper::eval
