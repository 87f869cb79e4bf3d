#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "clipper/rng.hpp"

namespace clipper::data {

// Captions are partitioned on this clip length.
constexpr double kClipSeconds = 45.0;
constexpr int kPromptVariants = 4;

struct CorpusSpec {
  int phases = 5;  // K workflow stages, executed in order per video
  int videos = 50;
  int eval_videos = 10;  // held out from the end of the video range
  double phase_min_s = 90.0;
  double phase_max_s = 270.0;
  int frames_per_clip = 4;  // stored per clip
  int frame_dim = 16;
  int vocab = 60;
  int caption_tokens = 6;
  double noise = 0.4;          // gaussian feature noise scale
  double caption_noise = 0.2;  // token substitution rate in caption_b
  double drift = 0.25;         // within-phase linear feature drift magnitude
  std::uint64_t seed = 7;

  void validate() const;
};

struct ClipRecord {
  int video_id = 0;
  int clip_index = 0;
  double start_time_s = 0.0;
  std::vector<std::vector<double>> frames;  // frames_per_clip x frame_dim
  std::vector<int> caption_a;  // clean rewrite-style tokens
  std::vector<int> caption_b;  // noisy transcript-style tokens
  int phase_label = 0;         // 1..K, held out from training
};

struct VideoRecord {
  int id = 0;
  std::vector<ClipRecord> clips;  // strictly increasing start times
};

struct Corpus {
  std::vector<VideoRecord> videos;
  int frame_dim = 0;
  int frames_per_clip = 0;

  double max_span_s() const;  // largest start-time spread within one video
  std::size_t total_clips() const;
};

struct GeneratedCorpus {
  Corpus train;
  Corpus eval;
  CorpusSpec spec;
};

// Phase feature prototypes: unit vectors resampled until pairwise cosines
// stay under 0.3. Deterministic in the spec seed.
std::vector<std::vector<double>> phase_prototypes(const CorpusSpec& spec);

// Disjoint [lo, hi) vocabulary block of a phase (1-based label).
std::pair<int, int> vocab_block(const CorpusSpec& spec, int phase_label);

GeneratedCorpus generate_corpus(const CorpusSpec& spec);

// Line-delimited records, one clip per line, plus a sidecar manifest.
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);
void save_manifest(const GeneratedCorpus& gen,
                   const std::filesystem::path& path);
CorpusSpec load_manifest(const std::filesystem::path& path);

// Four prompt token sequences per phase label, drawn from its vocabulary
// block.
struct PromptSet {
  int classes = 0;
  std::vector<std::array<std::vector<int>, kPromptVariants>> prompts;
};

PromptSet make_prompts(const CorpusSpec& spec);
void save_prompts(const PromptSet& prompts, const std::filesystem::path& path);
PromptSet load_prompts(const std::filesystem::path& path);

}  // namespace clipper::data
