#pragma once

#include <vector>

#include "clipper/corpus.hpp"
#include "clipper/model.hpp"
#include "clipper/objectives.hpp"

namespace clipper::data {

// Progressive context window: starts at 15 minutes and grows linearly to the
// corpus's largest span, with no limit in the final epoch.
struct SamplerSchedule {
  double initial_window_s = 900.0;
  int epochs = 0;
  double max_span_s = 0.0;

  SamplerSchedule() = default;
  SamplerSchedule(int total_epochs, double corpus_max_span_s);
  double window(int epoch) const;
};

struct BatchSpec {
  int videos = 32;  // B
  int clips = 8;    // C
  int frames = 4;   // F sampled per clip

  void validate() const;
};

enum class CaptionMode { kMix, kCleanOnly, kNoisyOnly };

CaptionMode caption_mode_from(const std::string& name);
std::string caption_mode_name(CaptionMode mode);

struct SampleStats {
  int widenings = 0;  // forced window widenings (short videos)
};

struct Batch {
  nn::BatchInput input;  // B videos x C time-ordered clips
  std::vector<int> video_ids;
  std::vector<std::vector<double>> start_times_s;     // per video, per clip
  std::vector<std::vector<double>> anchor_offsets_s;  // per video, per clip
  std::vector<std::vector<char>> used_noisy_caption;  // per video, per clip
};

// Anchor-window sampling: per video an anchor clip, then C-1 distinct clips
// within the window of the anchor, time-ordered. Frames are evenly spaced
// over the stored frames; the caption source alternates per the mode.
Batch sample_batch(const Corpus& corpus, const BatchSpec& spec,
                   double window_s, CaptionMode mode, Rng& rng,
                   SampleStats* stats = nullptr);

// Evenly spaced frame subsampling indices (deterministic).
std::vector<int> even_frame_indices(int stored, int wanted);

// Independent uniform permutations per video and modality; the rep placed at
// slot j has original index perm[j], which is its class target.
obj::CopTargets shuffle_for_cop(Rng& rng, int videos, int clips);

}  // namespace clipper::data
