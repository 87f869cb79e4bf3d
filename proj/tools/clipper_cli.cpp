// Command-line front end: corpus generation, training, gradient
// verification, zero-shot evaluation, and the temporal window sweep.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "clipper/config.hpp"
#include "clipper/evaluate.hpp"
#include "clipper/losscheck.hpp"
#include "clipper/textio.hpp"
#include "clipper/trainer.hpp"

namespace fs = std::filesystem;
using namespace clipper;

namespace {

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string out_dir = "runs/out";
};

void add_common(CLI::App* cmd, CommonArgs* args, bool with_out = true) {
  cmd->add_option("--config", args->config_file, "configuration file");
  cmd->add_option("--set", args->overrides,
                  "dotted-key overrides, e.g. --set objectives.cop=false");
  if (with_out) cmd->add_option("--out", args->out_dir, "output directory");
}

Config resolve_config(const CommonArgs& args) {
  KvText kv = args.config_file.empty() ? KvText::from_string("")
                                       : KvText::from_file(args.config_file);
  for (const auto& ov : args.overrides) kv.apply_override(ov);
  return Config::from_kv(kv);
}

// Echo the resolved configuration to stdout and into the output directory;
// re-running from the echoed file reproduces the run.
void echo_config(const Config& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const std::string echo = cfg.echo();
  std::cout << "# resolved configuration\n" << echo;
  std::ofstream os(out_dir / "config.txt");
  if (!os) throw IoError("cannot write " + (out_dir / "config.txt").string());
  os << echo;
}

fs::path apply_out_env(const std::string& cli_value) {
  if (const char* env = std::getenv("CLIPPER_OUT_DIR"))
    if (cli_value == "runs/out") return fs::path(env);
  return fs::path(cli_value);
}

int cmd_gen_data(const CommonArgs& args) {
  Config cfg = resolve_config(args);
  const fs::path out = apply_out_env(args.out_dir);
  echo_config(cfg, out);
  data::GeneratedCorpus gen = data::generate_corpus(cfg.corpus);
  data::save_corpus(gen.train, out / "corpus_train.jsonl");
  if (!gen.eval.videos.empty())
    data::save_corpus(gen.eval, out / "corpus_eval.jsonl");
  data::save_manifest(gen, out / "manifest.json");
  data::save_prompts(data::make_prompts(cfg.corpus), out / "prompts.json");
  std::cout << "corpus: " << gen.train.videos.size() << " train videos ("
            << gen.train.total_clips() << " clips), " << gen.eval.videos.size()
            << " eval videos (" << gen.eval.total_clips() << " clips), "
            << cfg.corpus.phases << " phases, max span "
            << fmt_double(gen.train.max_span_s()) << " s\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& corpus_file,
              const std::string& resume) {
  Config cfg = resolve_config(args);
  const fs::path out = apply_out_env(args.out_dir);
  echo_config(cfg, out);
  data::Corpus corpus = data::load_corpus(corpus_file);
  std::optional<fs::path> resume_path;
  if (!resume.empty()) resume_path = fs::path(resume);
  train::TrainResult result = train::run_training(cfg, corpus, out, resume_path);
  std::cout << "trained " << result.epochs_run << " epoch(s), "
            << result.global_steps << " total steps; final checkpoint "
            << result.final_checkpoint.string() << "\n";
  if (result.widenings > 0)
    std::cout << "sampler widened the window " << result.widenings
              << " time(s)\n";
  if (!result.step_losses.empty())
    std::cout << "final total loss "
              << fmt_double(result.step_losses.back().second.total) << "\n";
  return 0;
}

int cmd_gradcheck(const CommonArgs& args, double tol, int seeds,
                  bool corrupt) {
  Config cfg = resolve_config(args);
  std::cout << "# resolved configuration\n" << cfg.echo();
  train::LossCheckOptions opts;
  opts.seeds = seeds;
  opts.corrupt_backward = corrupt;
  auto rows = train::run_loss_gradchecks(cfg.toggles, opts);
  bool ok = true;
  for (const auto& row : rows) {
    const bool pass = row.max_rel_err < tol;
    ok = ok && pass;
    std::cout << row.name << " max_rel_err " << fmt_double(row.max_rel_err)
              << " " << (pass ? "pass" : "FAIL") << "\n";
  }
  if (!ok) throw NumericError("gradient check exceeded tolerance " +
                              fmt_double(tol));
  return 0;
}

void write_metrics_csv(const eval::MetricsReport& report,
                       const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "row_type,video_id,prompt_variant,f1,map\n";
  for (std::size_t p = 0; p < report.per_video_f1.size(); ++p)
    for (std::size_t v = 0; v < report.per_video_f1[p].size(); ++v)
      os << "video," << report.video_ids[v] << "," << p << ","
         << fmt_double(report.per_video_f1[p][v]) << ",\n";
  for (std::size_t p = 0; p < report.dataset_f1_per_variant.size(); ++p)
    os << "prompt,," << p << "," << fmt_double(report.dataset_f1_per_variant[p])
       << "," << fmt_double(report.map_per_variant[p]) << "\n";
  os << "overall,,," << fmt_double(report.f1) << "," << fmt_double(report.map)
     << "\n";
}

void print_summary(const eval::MetricsReport& report, const Config& cfg) {
  std::cout << "== zero-shot evaluation ==\n";
  std::cout << "videos: " << report.video_ids.size()
            << ", prompt variants: " << report.per_video_f1.size() << "\n";
  for (std::size_t p = 0; p < report.dataset_f1_per_variant.size(); ++p)
    std::cout << "  variant " << p << ": F1 "
              << fmt_double(report.dataset_f1_per_variant[p]) << ", mAP "
              << fmt_double(report.map_per_variant[p]) << "\n";
  if (cfg.eval_task == "multi")
    std::cout << "prompt-averaged mAP " << fmt_double(report.map) << " (F1 "
              << fmt_double(report.f1) << ")\n";
  else
    std::cout << "prompt-averaged F1 " << fmt_double(report.f1) << " (mAP "
              << fmt_double(report.map) << ")\n";
  if (report.skipped_classes > 0)
    std::cout << "note: " << report.skipped_classes
              << " class(es) had no positives and were excluded from mAP\n";
}

struct LoadedModel {
  Config cfg;
  std::unique_ptr<nn::Model> model;
};

// Rebuild the model from the checkpoint's embedded config, then load the
// trained arrays.
LoadedModel model_from_checkpoint(const std::string& path,
                                  const CommonArgs& args) {
  train::LoadedCheckpoint ckpt = train::load_checkpoint(path);
  KvText kv = KvText::from_string(ckpt.config_echo);
  for (const auto& ov : args.overrides) kv.apply_override(ov);
  Config cfg = Config::from_kv(kv);
  LoadedModel out{cfg, std::make_unique<nn::Model>(cfg.model_config(),
                                                   cfg.train_seed)};
  train::AdamW scratch_opt{OptimConfig{}};
  train::apply_checkpoint(ckpt, out.model->params, scratch_opt);
  return out;
}

eval::EvalConfig eval_config_of(const Config& cfg) {
  eval::EvalConfig ec;
  ec.window = cfg.eval_window;
  ec.fusion = eval::fusion_from(cfg.eval_fusion);
  ec.normalize = cfg.toggles.normalize;
  ec.multilabel = cfg.eval_task == "multi";
  return ec;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint,
             const std::string& corpus_file, const std::string& prompts_file) {
  LoadedModel lm = model_from_checkpoint(checkpoint, args);
  const fs::path out = apply_out_env(args.out_dir);
  echo_config(lm.cfg, out);
  data::Corpus corpus = data::load_corpus(corpus_file);
  data::PromptSet prompts = data::load_prompts(prompts_file);
  eval::MetricsReport report =
      eval::evaluate(*lm.model, corpus, prompts, eval_config_of(lm.cfg));
  fs::create_directories(out / "reports");
  write_metrics_csv(report, out / "reports" / "metrics.csv");
  print_summary(report, lm.cfg);
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& checkpoint,
              const std::string& corpus_file, const std::string& prompts_file,
              std::vector<int> windows) {
  LoadedModel lm = model_from_checkpoint(checkpoint, args);
  const fs::path out = apply_out_env(args.out_dir);
  echo_config(lm.cfg, out);
  data::Corpus corpus = data::load_corpus(corpus_file);
  data::PromptSet prompts = data::load_prompts(prompts_file);
  if (windows.empty()) windows = {1, 2, 4, 8, 16, 32};
  auto rows = eval::temporal_window_sweep(*lm.model, corpus, prompts,
                                          eval_config_of(lm.cfg), windows);
  fs::create_directories(out / "reports");
  const fs::path csv = out / "reports" / "sweep.csv";
  std::ofstream os(csv);
  if (!os) throw IoError("cannot write " + csv.string());
  const std::string dataset = fs::path(corpus_file).stem().string();
  os << "window,dataset,f1,map\n";
  for (const auto& row : rows) {
    os << row.window << "," << dataset << "," << fmt_double(row.f1) << ","
       << fmt_double(row.map) << "\n";
    std::cout << "window " << row.window << ": F1 " << fmt_double(row.f1)
              << ", mAP " << fmt_double(row.map) << "\n";
  }
  return 0;
}

int cmd_cop_acc(const CommonArgs& args, const std::string& checkpoint,
                const std::string& corpus_file) {
  LoadedModel lm = model_from_checkpoint(checkpoint, args);
  data::Corpus corpus = data::load_corpus(corpus_file);
  eval::CopAccuracy acc = eval::cop_order_accuracy(*lm.model, corpus);
  std::cout << "cop order accuracy: clip " << fmt_double(acc.clip_acc)
            << ", text " << fmt_double(acc.text_acc) << ", combined "
            << fmt_double(acc.combined) << " over " << acc.slots << " slots\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale contextual video-language pretraining sandbox"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, grad_args, eval_args, sweep_args, cop_args;
  std::string train_corpus, train_resume;
  std::string eval_ckpt, eval_corpus, eval_prompts;
  std::string sweep_ckpt, sweep_corpus, sweep_prompts;
  std::string cop_ckpt, cop_corpus;
  std::vector<int> sweep_windows;
  double grad_tol = 1e-5;
  int grad_seeds = 5;
  bool grad_corrupt = false;
  int eval_window = 0;
  std::string eval_fusion;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  add_common(gen, &gen_args);

  CLI::App* tr = app.add_subcommand("train", "run the pretraining loop");
  add_common(tr, &train_args);
  tr->add_option("--corpus", train_corpus, "training corpus (jsonl)")
      ->required();
  tr->add_option("--resume", train_resume, "checkpoint to resume from");

  CLI::App* gc = app.add_subcommand(
      "gradcheck", "finite-difference checks of every enabled loss");
  add_common(gc, &grad_args, false);
  gc->add_option("--tol", grad_tol, "maximum relative error");
  gc->add_option("--seeds", grad_seeds, "random instances per loss");
  gc->add_flag("--corrupt-backward", grad_corrupt,
               "test hook: corrupt one analytic gradient");

  CLI::App* ev = app.add_subcommand("eval", "zero-shot evaluation");
  add_common(ev, &eval_args);
  ev->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  ev->add_option("--corpus", eval_corpus, "evaluation corpus")->required();
  ev->add_option("--prompts", eval_prompts, "prompt file")->required();
  ev->add_option("--window", eval_window, "frames per scoring window");
  ev->add_option("--fusion", eval_fusion, "averaged|base|ctx");

  CLI::App* sw = app.add_subcommand("sweep", "evaluate over temporal windows");
  add_common(sw, &sweep_args);
  sw->add_option("--checkpoint", sweep_ckpt, "trained checkpoint")->required();
  sw->add_option("--corpus", sweep_corpus, "evaluation corpus")->required();
  sw->add_option("--prompts", sweep_prompts, "prompt file")->required();
  sw->add_option("--windows", sweep_windows, "window sizes");

  CLI::App* ca = app.add_subcommand("cop-acc",
                                    "order-prediction accuracy on a corpus");
  add_common(ca, &cop_args, false);
  ca->add_option("--checkpoint", cop_ckpt, "trained checkpoint")->required();
  ca->add_option("--corpus", cop_corpus, "evaluation corpus")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (tr->parsed()) return cmd_train(train_args, train_corpus, train_resume);
    if (gc->parsed())
      return cmd_gradcheck(grad_args, grad_tol, grad_seeds, grad_corrupt);
    if (ev->parsed()) {
      if (eval_window > 0)
        eval_args.overrides.push_back("eval.window=" +
                                      std::to_string(eval_window));
      if (!eval_fusion.empty())
        eval_args.overrides.push_back("eval.fusion=" + eval_fusion);
      return cmd_eval(eval_args, eval_ckpt, eval_corpus, eval_prompts);
    }
    if (sw->parsed())
      return cmd_sweep(sweep_args, sweep_ckpt, sweep_corpus, sweep_prompts,
                       sweep_windows);
    if (ca->parsed()) return cmd_cop_acc(cop_args, cop_ckpt, cop_corpus);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ContractError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
