#include "clipper/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "clipper/error.hpp"

namespace clipper::data {

SamplerSchedule::SamplerSchedule(int total_epochs, double corpus_max_span_s)
    : epochs(total_epochs), max_span_s(corpus_max_span_s) {
  if (total_epochs < 2)
    throw ConfigError("sampler schedule needs at least 2 epochs");
}

double SamplerSchedule::window(int epoch) const {
  if (epoch < 0 || epoch >= epochs)
    throw ContractError("window: epoch " + std::to_string(epoch) +
                        " outside [0, " + std::to_string(epochs) + ")");
  if (epoch == epochs - 1) return std::numeric_limits<double>::infinity();
  const double growth = std::max(0.0, max_span_s - initial_window_s);
  return initial_window_s +
         growth * static_cast<double>(epoch) / static_cast<double>(epochs - 1);
}

void BatchSpec::validate() const {
  if (videos < 1 || clips < 1 || frames < 1)
    throw ConfigError("batch spec: videos, clips and frames must be >= 1");
}

CaptionMode caption_mode_from(const std::string& name) {
  if (name == "mix") return CaptionMode::kMix;
  if (name == "clean") return CaptionMode::kCleanOnly;
  if (name == "noisy") return CaptionMode::kNoisyOnly;
  throw ConfigError("unknown caption mode '" + name +
                    "' (expected mix|clean|noisy)");
}

std::string caption_mode_name(CaptionMode mode) {
  switch (mode) {
    case CaptionMode::kMix: return "mix";
    case CaptionMode::kCleanOnly: return "clean";
    case CaptionMode::kNoisyOnly: return "noisy";
  }
  throw ContractError("bad caption mode");
}

std::vector<int> even_frame_indices(int stored, int wanted) {
  if (wanted > stored)
    throw ConfigError("frames per clip " + std::to_string(wanted) +
                      " exceeds stored frames " + std::to_string(stored));
  std::vector<int> idx(static_cast<std::size_t>(wanted));
  for (int j = 0; j < wanted; ++j)
    idx[static_cast<std::size_t>(j)] = static_cast<int>(
        (2 * j + 1) * static_cast<long>(stored) / (2 * wanted));
  return idx;
}

namespace {

nn::ClipInput make_clip_input(const ClipRecord& rec, int frames,
                              bool use_noisy) {
  nn::ClipInput clip;
  clip.frames = frames;
  const auto idx = even_frame_indices(static_cast<int>(rec.frames.size()),
                                      frames);
  for (int i : idx) {
    const auto& row = rec.frames[static_cast<std::size_t>(i)];
    clip.frame_features.insert(clip.frame_features.end(), row.begin(),
                               row.end());
  }
  clip.tokens = use_noisy ? rec.caption_b : rec.caption_a;
  return clip;
}

}  // namespace

Batch sample_batch(const Corpus& corpus, const BatchSpec& spec,
                   double window_s, CaptionMode mode, Rng& rng,
                   SampleStats* stats) {
  spec.validate();
  const int n_videos = static_cast<int>(corpus.videos.size());
  if (spec.videos > n_videos)
    throw ConfigError("batch of " + std::to_string(spec.videos) +
                      " videos from a corpus of " + std::to_string(n_videos));

  // B distinct videos via partial Fisher-Yates
  std::vector<int> order(static_cast<std::size_t>(n_videos));
  for (int i = 0; i < n_videos; ++i) order[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < spec.videos; ++i) {
    int j = i + rng.uniform_int(n_videos - i);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }

  Batch batch;
  for (int slot = 0; slot < spec.videos; ++slot) {
    int vi = order[static_cast<std::size_t>(slot)];
    const VideoRecord* video = &corpus.videos[static_cast<std::size_t>(vi)];
    double w = window_s;
    std::vector<int> candidates;
    int anchor = -1;

    for (int attempt = 0;; ++attempt) {
      anchor = rng.uniform_int(static_cast<int>(video->clips.size()));
      const double anchor_start =
          video->clips[static_cast<std::size_t>(anchor)].start_time_s;
      candidates.clear();
      for (int c = 0; c < static_cast<int>(video->clips.size()); ++c)
        if (std::abs(video->clips[static_cast<std::size_t>(c)].start_time_s -
                     anchor_start) <= w)
          candidates.push_back(c);
      if (static_cast<int>(candidates.size()) >= spec.clips) break;
      if (attempt < 3) {
        // resample the video (and anchor) a bounded number of times
        vi = rng.uniform_int(n_videos);
        video = &corpus.videos[static_cast<std::size_t>(vi)];
        continue;
      }
      if (static_cast<int>(video->clips.size()) < spec.clips)
        throw ConfigError("video " + std::to_string(video->id) + " has only " +
                          std::to_string(video->clips.size()) + " clips, < " +
                          std::to_string(spec.clips));
      w = std::min(w * 2.0, video->clips.back().start_time_s -
                                video->clips.front().start_time_s);
      if (stats) ++stats->widenings;
    }

    // C-1 distinct context clips besides the anchor
    std::vector<int> pool;
    for (int c : candidates)
      if (c != anchor) pool.push_back(c);
    std::vector<int> chosen = {anchor};
    for (int i = 0; i < spec.clips - 1; ++i) {
      int j = i + rng.uniform_int(static_cast<int>(pool.size()) - i);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
      chosen.push_back(pool[static_cast<std::size_t>(i)]);
    }
    std::sort(chosen.begin(), chosen.end());  // time order

    const double anchor_start =
        video->clips[static_cast<std::size_t>(anchor)].start_time_s;
    nn::VideoInput vin;
    std::vector<double> starts;
    std::vector<double> offsets;
    std::vector<char> noisy;
    for (int c : chosen) {
      const auto& rec = video->clips[static_cast<std::size_t>(c)];
      bool use_noisy = false;
      switch (mode) {
        case CaptionMode::kMix: use_noisy = rng.bernoulli(0.5); break;
        case CaptionMode::kCleanOnly: use_noisy = false; break;
        case CaptionMode::kNoisyOnly: use_noisy = true; break;
      }
      vin.clips.push_back(make_clip_input(rec, spec.frames, use_noisy));
      starts.push_back(rec.start_time_s);
      offsets.push_back(std::abs(rec.start_time_s - anchor_start));
      noisy.push_back(use_noisy ? 1 : 0);
    }
    batch.input.videos.push_back(std::move(vin));
    batch.video_ids.push_back(video->id);
    batch.start_times_s.push_back(std::move(starts));
    batch.anchor_offsets_s.push_back(std::move(offsets));
    batch.used_noisy_caption.push_back(std::move(noisy));
  }
  return batch;
}

obj::CopTargets shuffle_for_cop(Rng& rng, int videos, int clips) {
  if (clips < 2) throw ContractError("shuffle_for_cop: needs C >= 2");
  obj::CopTargets targets;
  for (int b = 0; b < videos; ++b) {
    targets.clip_perm.push_back(rng.permutation(clips));
    targets.text_perm.push_back(rng.permutation(clips));
  }
  return targets;
}

}  // namespace clipper::data
