#include "clipper/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "clipper/error.hpp"
#include "json.hpp"

namespace clipper::data {

using nlohmann::json;

void CorpusSpec::validate() const {
  if (phases < 2) throw ConfigError("corpus: phases must be >= 2");
  if (videos < 1) throw ConfigError("corpus: videos must be >= 1");
  if (eval_videos < 0 || eval_videos >= videos)
    throw ConfigError("corpus: eval_videos must be in [0, videos)");
  if (!(phase_min_s > 0.0) || phase_max_s < phase_min_s)
    throw ConfigError("corpus: invalid phase duration range");
  if (frames_per_clip < 1 || frame_dim < 1)
    throw ConfigError("corpus: frames_per_clip and frame_dim must be >= 1");
  if (caption_tokens < 1) throw ConfigError("corpus: caption_tokens >= 1");
  if (static_cast<long>(phases) * caption_tokens > vocab)
    throw ConfigError(
        "corpus: vocabulary too small for disjoint per-phase blocks (need "
        "phases * caption_tokens <= vocab)");
  if (noise < 0.0 || caption_noise < 0.0 || caption_noise > 1.0 || drift < 0.0)
    throw ConfigError("corpus: invalid noise settings");
}

double Corpus::max_span_s() const {
  double span = 0.0;
  for (const auto& v : videos) {
    if (v.clips.size() < 2) continue;
    span = std::max(span,
                    v.clips.back().start_time_s - v.clips.front().start_time_s);
  }
  return span;
}

std::size_t Corpus::total_clips() const {
  std::size_t n = 0;
  for (const auto& v : videos) n += v.clips.size();
  return n;
}

namespace {

std::vector<double> unit_vector(Rng& rng, int dim) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(std::max(norm, 1e-12));
  for (auto& x : v) x /= norm;
  return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] * b[i];
  return d;
}

}  // namespace

std::vector<std::vector<double>> phase_prototypes(const CorpusSpec& spec) {
  Rng rng = Rng::derive(spec.seed, 1001);
  std::vector<std::vector<double>> protos;
  for (int k = 0; k < spec.phases; ++k) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000)
        throw NumericError(
            "corpus: could not draw near-orthogonal prototypes; raise "
            "frame_dim");
      auto cand = unit_vector(rng, spec.frame_dim);
      bool ok = true;
      for (const auto& p : protos)
        if (std::abs(cosine(cand, p)) >= 0.3) ok = false;
      if (ok) {
        protos.push_back(std::move(cand));
        break;
      }
    }
  }
  return protos;
}

std::pair<int, int> vocab_block(const CorpusSpec& spec, int phase_label) {
  if (phase_label < 1 || phase_label > spec.phases)
    throw ContractError("vocab_block: phase label out of range");
  const int width = spec.vocab / spec.phases;
  const int lo = (phase_label - 1) * width;
  return {lo, lo + width};
}

GeneratedCorpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  auto protos = phase_prototypes(spec);
  std::vector<std::vector<double>> drift_dirs;
  {
    Rng rng = Rng::derive(spec.seed, 2002);
    for (int k = 0; k < spec.phases; ++k)
      drift_dirs.push_back(unit_vector(rng, spec.frame_dim));
  }

  GeneratedCorpus out;
  out.spec = spec;
  for (auto* corpus : {&out.train, &out.eval}) {
    corpus->frame_dim = spec.frame_dim;
    corpus->frames_per_clip = spec.frames_per_clip;
  }

  for (int v = 0; v < spec.videos; ++v) {
    Rng rng = Rng::derive(spec.seed, 3003 + static_cast<std::uint64_t>(v));
    std::vector<double> phase_start(static_cast<std::size_t>(spec.phases));
    std::vector<double> phase_len(static_cast<std::size_t>(spec.phases));
    double total = 0.0;
    for (int k = 0; k < spec.phases; ++k) {
      phase_start[static_cast<std::size_t>(k)] = total;
      phase_len[static_cast<std::size_t>(k)] =
          rng.uniform(spec.phase_min_s, spec.phase_max_s);
      total += phase_len[static_cast<std::size_t>(k)];
    }
    auto phase_at = [&](double time_s) {
      for (int k = spec.phases - 1; k >= 0; --k)
        if (time_s >= phase_start[static_cast<std::size_t>(k)]) return k;
      return 0;
    };

    VideoRecord video;
    video.id = v;
    int clip_index = 0;
    for (double start = 0.0; start + kClipSeconds <= total;
         start += kClipSeconds) {
      ClipRecord clip;
      clip.video_id = v;
      clip.clip_index = clip_index++;
      clip.start_time_s = start;
      const int k = phase_at(start + 0.5 * kClipSeconds);
      clip.phase_label = k + 1;

      for (int f = 0; f < spec.frames_per_clip; ++f) {
        const double tf =
            start + (f + 0.5) * kClipSeconds / spec.frames_per_clip;
        double alpha = (tf - phase_start[static_cast<std::size_t>(k)]) /
                       phase_len[static_cast<std::size_t>(k)];
        alpha = std::clamp(alpha, 0.0, 1.0);
        std::vector<double> feat(static_cast<std::size_t>(spec.frame_dim));
        for (int j = 0; j < spec.frame_dim; ++j)
          feat[static_cast<std::size_t>(j)] =
              protos[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] +
              spec.drift * alpha *
                  drift_dirs[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] +
              spec.noise * rng.normal();
        clip.frames.push_back(std::move(feat));
      }

      auto [lo, hi] = vocab_block(spec, clip.phase_label);
      for (int j = 0; j < spec.caption_tokens; ++j)
        clip.caption_a.push_back(lo + rng.uniform_int(hi - lo));
      clip.caption_b = clip.caption_a;
      for (auto& tok : clip.caption_b)
        if (rng.bernoulli(spec.caption_noise)) tok = rng.uniform_int(spec.vocab);

      video.clips.push_back(std::move(clip));
    }
    const bool held_out = v >= spec.videos - spec.eval_videos;
    (held_out ? out.eval : out.train).videos.push_back(std::move(video));
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write corpus file " + path.string());
  for (const auto& video : corpus.videos) {
    for (const auto& clip : video.clips) {
      json rec;
      rec["video_id"] = clip.video_id;
      rec["clip_index"] = clip.clip_index;
      rec["start_time_s"] = clip.start_time_s;
      rec["frame_features"] = clip.frames;
      rec["caption_a"] = clip.caption_a;
      rec["caption_b"] = clip.caption_b;
      rec["phase_label"] = clip.phase_label;
      os << rec.dump() << "\n";
    }
  }
  if (!os) throw IoError("failed writing corpus file " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read corpus file " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("corpus " + path.string() + " line " +
                    std::to_string(line_no) + ": " + e.what());
    }
    ClipRecord clip;
    clip.video_id = rec.at("video_id").get<int>();
    clip.clip_index = rec.at("clip_index").get<int>();
    clip.start_time_s = rec.at("start_time_s").get<double>();
    clip.frames = rec.at("frame_features").get<std::vector<std::vector<double>>>();
    clip.caption_a = rec.at("caption_a").get<std::vector<int>>();
    clip.caption_b = rec.at("caption_b").get<std::vector<int>>();
    clip.phase_label = rec.at("phase_label").get<int>();
    if (clip.frames.empty() || clip.frames[0].empty())
      throw IoError("corpus: clip without frames at line " +
                    std::to_string(line_no));
    if (corpus.videos.empty() || corpus.videos.back().id != clip.video_id) {
      corpus.videos.push_back(VideoRecord{clip.video_id, {}});
    }
    auto& video = corpus.videos.back();
    if (!video.clips.empty() &&
        clip.start_time_s <= video.clips.back().start_time_s)
      throw IoError("corpus: start times not strictly increasing at line " +
                    std::to_string(line_no));
    video.clips.push_back(std::move(clip));
  }
  if (corpus.videos.empty()) throw IoError("corpus is empty: " + path.string());
  corpus.frame_dim = static_cast<int>(corpus.videos[0].clips[0].frames[0].size());
  corpus.frames_per_clip =
      static_cast<int>(corpus.videos[0].clips[0].frames.size());
  return corpus;
}

void save_manifest(const GeneratedCorpus& gen,
                   const std::filesystem::path& path) {
  const CorpusSpec& s = gen.spec;
  json m;
  m["spec"] = {{"phases", s.phases},
               {"videos", s.videos},
               {"eval_videos", s.eval_videos},
               {"phase_min_s", s.phase_min_s},
               {"phase_max_s", s.phase_max_s},
               {"frames_per_clip", s.frames_per_clip},
               {"frame_dim", s.frame_dim},
               {"vocab", s.vocab},
               {"caption_tokens", s.caption_tokens},
               {"noise", s.noise},
               {"caption_noise", s.caption_noise},
               {"drift", s.drift}};
  m["seed"] = s.seed;
  m["clip_seconds"] = kClipSeconds;
  m["train_videos"] = gen.train.videos.size();
  m["eval_videos"] = gen.eval.videos.size();
  m["train_clips"] = gen.train.total_clips();
  m["eval_clips"] = gen.eval.total_clips();
  m["max_span_s"] = gen.train.max_span_s();
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest " + path.string());
  os << m.dump(2) << "\n";
}

CorpusSpec load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read manifest " + path.string());
  json m;
  try {
    is >> m;
  } catch (const json::exception& e) {
    throw IoError("manifest " + path.string() + ": " + e.what());
  }
  CorpusSpec s;
  const json& sp = m.at("spec");
  s.phases = sp.at("phases").get<int>();
  s.videos = sp.at("videos").get<int>();
  s.eval_videos = sp.at("eval_videos").get<int>();
  s.phase_min_s = sp.at("phase_min_s").get<double>();
  s.phase_max_s = sp.at("phase_max_s").get<double>();
  s.frames_per_clip = sp.at("frames_per_clip").get<int>();
  s.frame_dim = sp.at("frame_dim").get<int>();
  s.vocab = sp.at("vocab").get<int>();
  s.caption_tokens = sp.at("caption_tokens").get<int>();
  s.noise = sp.at("noise").get<double>();
  s.caption_noise = sp.at("caption_noise").get<double>();
  s.drift = sp.at("drift").get<double>();
  s.seed = m.at("seed").get<std::uint64_t>();
  return s;
}

PromptSet make_prompts(const CorpusSpec& spec) {
  PromptSet out;
  out.classes = spec.phases;
  for (int k = 1; k <= spec.phases; ++k) {
    auto [lo, hi] = vocab_block(spec, k);
    std::array<std::vector<int>, kPromptVariants> variants;
    std::set<std::vector<int>> seen;
    Rng rng = Rng::derive(spec.seed, 4004 + static_cast<std::uint64_t>(k));
    for (auto& variant : variants) {
      do {
        variant.clear();
        for (int j = 0; j < spec.caption_tokens; ++j)
          variant.push_back(lo + rng.uniform_int(hi - lo));
      } while (seen.count(variant));
      seen.insert(variant);
    }
    out.prompts.push_back(std::move(variants));
  }
  return out;
}

void save_prompts(const PromptSet& prompts,
                  const std::filesystem::path& path) {
  json doc;
  doc["classes"] = prompts.classes;
  json list = json::array();
  for (int k = 0; k < prompts.classes; ++k) {
    json entry;
    entry["label"] = k + 1;
    entry["variants"] = prompts.prompts[static_cast<std::size_t>(k)];
    list.push_back(std::move(entry));
  }
  doc["prompts"] = std::move(list);
  std::ofstream os(path);
  if (!os) throw IoError("cannot write prompts " + path.string());
  os << doc.dump(2) << "\n";
}

PromptSet load_prompts(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read prompts " + path.string());
  json doc;
  try {
    is >> doc;
  } catch (const json::exception& e) {
    throw IoError("prompts " + path.string() + ": " + e.what());
  }
  PromptSet out;
  out.classes = doc.at("classes").get<int>();
  const json& list = doc.at("prompts");
  if (static_cast<int>(list.size()) != out.classes)
    throw ConfigError("prompts: class count mismatch");
  out.prompts.resize(static_cast<std::size_t>(out.classes));
  for (const json& entry : list) {
    const int label = entry.at("label").get<int>();
    if (label < 1 || label > out.classes)
      throw ConfigError("prompts: label out of range");
    const json& variants = entry.at("variants");
    if (variants.size() != kPromptVariants)
      throw ConfigError("prompts: label " + std::to_string(label) + " has " +
                        std::to_string(variants.size()) +
                        " variants, expected " +
                        std::to_string(kPromptVariants));
    auto& slot = out.prompts[static_cast<std::size_t>(label - 1)];
    for (std::size_t p = 0; p < kPromptVariants; ++p) {
      slot[p] = variants[p].get<std::vector<int>>();
      if (slot[p].empty()) throw ConfigError("prompts: empty variant");
    }
  }
  return out;
}

}  // namespace clipper::data
