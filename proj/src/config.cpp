#include "clipper/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "clipper/error.hpp"
#include "clipper/textio.hpp"

namespace clipper {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("config: " + key + " expects an unsigned integer, got '" +
                      v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const ConfigError&) {
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + key + " expects true|false, got '" + v + "'");
}

struct Field {
  const char* key;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

// The canonical field list: parse and echo stay in sync by construction.
const std::vector<Field>& fields() {
  auto I = [](const char* key, auto ref) {
    return Field{key,
                 [key, ref](Config& c, const std::string& v) {
                   ref(c) = to_int(key, v);
                 },
                 [ref](const Config& c) {
                   return std::to_string(ref(const_cast<Config&>(c)));
                 }};
  };
  auto D = [](const char* key, auto ref) {
    return Field{key,
                 [key, ref](Config& c, const std::string& v) {
                   ref(c) = to_double(key, v);
                 },
                 [ref](const Config& c) {
                   return fmt_double(ref(const_cast<Config&>(c)));
                 }};
  };
  auto B = [](const char* key, auto ref) {
    return Field{key,
                 [key, ref](Config& c, const std::string& v) {
                   ref(c) = to_bool(key, v);
                 },
                 [ref](const Config& c) {
                   return ref(const_cast<Config&>(c)) ? "true" : "false";
                 }};
  };
  auto U = [](const char* key, auto ref) {
    return Field{key,
                 [key, ref](Config& c, const std::string& v) {
                   ref(c) = to_u64(key, v);
                 },
                 [ref](const Config& c) {
                   return std::to_string(ref(const_cast<Config&>(c)));
                 }};
  };

  static const std::vector<Field> list = {
      U("data.seed", [](Config& c) -> std::uint64_t& { return c.corpus.seed; }),
      I("data.videos", [](Config& c) -> int& { return c.corpus.videos; }),
      I("data.eval_videos",
        [](Config& c) -> int& { return c.corpus.eval_videos; }),
      I("data.phases", [](Config& c) -> int& { return c.corpus.phases; }),
      D("data.phase_min_s",
        [](Config& c) -> double& { return c.corpus.phase_min_s; }),
      D("data.phase_max_s",
        [](Config& c) -> double& { return c.corpus.phase_max_s; }),
      I("data.frames_per_clip",
        [](Config& c) -> int& { return c.corpus.frames_per_clip; }),
      I("data.frame_dim", [](Config& c) -> int& { return c.corpus.frame_dim; }),
      I("data.vocab", [](Config& c) -> int& { return c.corpus.vocab; }),
      I("data.caption_tokens",
        [](Config& c) -> int& { return c.corpus.caption_tokens; }),
      D("data.noise", [](Config& c) -> double& { return c.corpus.noise; }),
      D("data.caption_noise",
        [](Config& c) -> double& { return c.corpus.caption_noise; }),
      D("data.drift", [](Config& c) -> double& { return c.corpus.drift; }),

      I("model.dim", [](Config& c) -> int& { return c.model_dim; }),
      I("model.heads", [](Config& c) -> int& { return c.model_heads; }),
      I("model.dual_layers", [](Config& c) -> int& { return c.dual_layers; }),
      I("model.ctx_layers", [](Config& c) -> int& { return c.ctx_layers; }),
      I("model.mme_blocks", [](Config& c) -> int& { return c.mme_blocks; }),
      I("model.ffn_mult", [](Config& c) -> int& { return c.ffn_mult; }),
      I("model.max_rel_dist", [](Config& c) -> int& { return c.max_rel_dist; }),
      I("model.max_text_len", [](Config& c) -> int& { return c.max_text_len; }),
      B("model.context_encoders",
        [](Config& c) -> bool& { return c.context_encoders; }),
      D("model.sigma_init", [](Config& c) -> double& { return c.sigma_init; }),

      U("train.seed", [](Config& c) -> std::uint64_t& { return c.train_seed; }),
      I("train.epochs", [](Config& c) -> int& { return c.epochs; }),
      I("train.batch_videos", [](Config& c) -> int& { return c.batch.videos; }),
      I("train.clips_per_video",
        [](Config& c) -> int& { return c.batch.clips; }),
      I("train.frames_per_clip",
        [](Config& c) -> int& { return c.batch.frames; }),
      D("train.lr", [](Config& c) -> double& { return c.optim.lr; }),
      D("train.weight_decay",
        [](Config& c) -> double& { return c.optim.weight_decay; }),
      D("train.beta1", [](Config& c) -> double& { return c.optim.beta1; }),
      D("train.beta2", [](Config& c) -> double& { return c.optim.beta2; }),
      D("train.eps", [](Config& c) -> double& { return c.optim.eps; }),
      D("train.grad_clip",
        [](Config& c) -> double& { return c.optim.grad_clip; }),
      B("train.progressive", [](Config& c) -> bool& { return c.progressive; }),
      Field{"train.caption_source",
            [](Config& c, const std::string& v) {
              c.captions = data::caption_mode_from(v);
            },
            [](const Config& c) { return data::caption_mode_name(c.captions); }},
      I("train.stop_after_epochs",
        [](Config& c) -> int& { return c.stop_after_epochs; }),

      B("objectives.vtc", [](Config& c) -> bool& { return c.toggles.vtc; }),
      B("objectives.ctx", [](Config& c) -> bool& { return c.toggles.ctx; }),
      B("objectives.cycle", [](Config& c) -> bool& { return c.toggles.cycle; }),
      B("objectives.ftm", [](Config& c) -> bool& { return c.toggles.ftm; }),
      B("objectives.cop", [](Config& c) -> bool& { return c.toggles.cop; }),
      B("objectives.symmetric_ctx",
        [](Config& c) -> bool& { return c.toggles.symmetric_ctx; }),
      B("objectives.normalize",
        [](Config& c) -> bool& { return c.toggles.normalize; }),

      I("eval.window", [](Config& c) -> int& { return c.eval_window; }),
      Field{"eval.fusion",
            [](Config& c, const std::string& v) { c.eval_fusion = v; },
            [](const Config& c) { return c.eval_fusion; }},
      Field{"eval.task",
            [](Config& c, const std::string& v) { c.eval_task = v; },
            [](const Config& c) { return c.eval_task; }},
  };
  return list;
}

}  // namespace

KvText KvText::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_string(ss.str());
}

KvText KvText::from_string(const std::string& text) {
  KvText out;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": empty key");
    out.kv_[key] = value;
  }
  return out;
}

void KvText::set(const std::string& key, const std::string& value) {
  kv_[key] = value;
}

void KvText::apply_override(const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + spec + "' must be key=value");
  kv_[trim(spec.substr(0, eq))] = trim(spec.substr(eq + 1));
}

bool KvText::has(const std::string& key) const { return kv_.count(key) > 0; }

Config Config::from_kv(const KvText& kv) {
  Config cfg;
  std::set<std::string> known;
  for (const auto& field : fields()) {
    known.insert(field.key);
    auto it = kv.entries().find(field.key);
    if (it != kv.entries().end()) field.set(cfg, it->second);
  }
  for (const auto& [key, value] : kv.entries())
    if (!known.count(key))
      throw ConfigError("config: unknown key '" + key + "'");
  cfg.validate();
  return cfg;
}

std::string Config::echo() const {
  std::ostringstream os;
  for (const auto& field : fields())
    os << field.key << " = " << field.get(*this) << "\n";
  return os.str();
}

void Config::validate() const {
  corpus.validate();
  batch.validate();
  model_config().validate();
  if (epochs < 1) throw ConfigError("config: train.epochs must be >= 1");
  if (progressive && epochs < 2)
    throw ConfigError("config: progressive sampling needs train.epochs >= 2");
  if (!toggles.any())
    throw ConfigError("config: at least one objective must be enabled");
  if (!(optim.lr > 0.0)) throw ConfigError("config: train.lr must be > 0");
  if (optim.beta1 < 0.0 || optim.beta1 >= 1.0 || optim.beta2 < 0.0 ||
      optim.beta2 >= 1.0)
    throw ConfigError("config: betas must lie in [0, 1)");
  if (!(optim.eps > 0.0)) throw ConfigError("config: train.eps must be > 0");
  if (optim.weight_decay < 0.0 || optim.grad_clip < 0.0)
    throw ConfigError("config: weight decay and grad clip must be >= 0");
  if (stop_after_epochs < 0)
    throw ConfigError("config: train.stop_after_epochs must be >= 0");
  if (eval_window < 1) throw ConfigError("config: eval.window must be >= 1");
  if (eval_fusion != "averaged" && eval_fusion != "base" && eval_fusion != "ctx")
    throw ConfigError("config: eval.fusion must be averaged|base|ctx");
  if (eval_task != "single" && eval_task != "multi")
    throw ConfigError("config: eval.task must be single|multi");
  if (batch.frames > corpus.frames_per_clip)
    throw ConfigError(
        "config: train.frames_per_clip exceeds stored data.frames_per_clip");
  if (corpus.caption_tokens > max_text_len)
    throw ConfigError("config: caption_tokens exceeds model.max_text_len");
}

nn::ModelConfig Config::model_config() const {
  nn::ModelConfig m;
  m.dim = model_dim;
  m.heads = model_heads;
  m.dual_layers = dual_layers;
  m.ctx_layers = ctx_layers;
  m.mme_blocks = mme_blocks;
  m.ffn_mult = ffn_mult;
  m.max_rel_dist = max_rel_dist;
  m.max_text_len = max_text_len;
  m.frame_dim = corpus.frame_dim;
  m.vocab = corpus.vocab;
  m.clips = batch.clips;
  m.frames = batch.frames;
  m.context_encoders = context_encoders;
  m.sigma_init = sigma_init;
  return m;
}

}  // namespace clipper
