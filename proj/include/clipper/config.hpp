#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "clipper/corpus.hpp"
#include "clipper/model.hpp"
#include "clipper/objectives.hpp"
#include "clipper/sampler.hpp"

namespace clipper {

// Flat key = value text with dotted keys and '#' comments.
class KvText {
 public:
  static KvText from_file(const std::filesystem::path& path);
  static KvText from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  void apply_override(const std::string& spec);  // "key=value"

  bool has(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

struct OptimConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.02;
  double grad_clip = 0.0;  // 0 disables clipping
};

// Fully resolved run configuration. Every key has a default; unknown keys
// are rejected; the echo form reparses to the identical configuration.
struct Config {
  data::CorpusSpec corpus;

  int model_dim = 32;
  int model_heads = 2;
  int dual_layers = 2;
  int ctx_layers = 4;
  int mme_blocks = 2;
  int ffn_mult = 2;
  int max_rel_dist = 64;
  int max_text_len = 32;
  bool context_encoders = true;
  double sigma_init = 0.07;

  std::uint64_t train_seed = 1;
  int epochs = 20;
  data::BatchSpec batch{32, 8, 4};
  OptimConfig optim;
  bool progressive = true;
  data::CaptionMode captions = data::CaptionMode::kMix;
  int stop_after_epochs = 0;  // testing hook: stop early, keep the schedule

  obj::Toggles toggles;

  int eval_window = 4;
  std::string eval_fusion = "averaged";  // averaged | base | ctx
  std::string eval_task = "single";      // single | multi

  static Config from_kv(const KvText& kv);
  std::string echo() const;
  void validate() const;

  nn::ModelConfig model_config() const;
};

}  // namespace clipper
