#include "clipper/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "clipper/error.hpp"
#include "clipper/textio.hpp"

namespace clipper::train {

using ad::Tape;
using ad::Tensor;

Tensor shuffle_rows(Tensor m, std::span<const int> perm) {
  if (m.shape().rank() != 2 ||
      m.shape().dim(0) != static_cast<int>(perm.size()))
    throw ShapeError("shuffle_rows: matrix " + m.shape().str() + " vs " +
                     std::to_string(perm.size()) + " indices");
  std::vector<Tensor> rows;
  rows.reserve(perm.size());
  for (int src : perm) rows.push_back(slice(m, 0, src, 1));
  return concat(rows, 0);
}

obj::LossTerms compute_losses(const nn::Model& model,
                              const obj::Toggles& toggles, Tape& tape,
                              const nn::BatchInput& input,
                              const obj::CopTargets* cop_targets) {
  if (!toggles.any()) throw ConfigError("no objectives enabled");
  const bool need_ctx = toggles.ctx || toggles.cycle || toggles.cop;
  nn::EmbeddingBatch batch = model.encode_batch(tape, input, need_ctx);
  Tensor inv_sigma = model.temperature.inv_sigma(tape);

  obj::LossTerms terms;
  if (toggles.vtc)
    terms.vtc = obj::vtc_loss(tape, batch, inv_sigma, toggles.normalize);
  if (toggles.ctx)
    terms.vtc_ctx = obj::vtc_ctx_loss(tape, batch, inv_sigma,
                                      toggles.normalize, toggles.symmetric_ctx);
  if (toggles.cycle)
    terms.cycle = obj::cycle_loss(tape, batch, inv_sigma, toggles.normalize);

  if (toggles.ftm) {
    auto labels = obj::build_ftm_labels(batch.C, batch.F);
    std::vector<Tensor> fused;
    fused.reserve(static_cast<std::size_t>(batch.B) * batch.C);
    for (int b = 0; b < batch.B; ++b)
      for (int i = 0; i < batch.C; ++i)
        fused.push_back(model.mme.forward(tape, batch.v_full[static_cast<std::size_t>(b)],
                                          batch.t_seq[batch.flat(b, i)]));
    terms.ftm = obj::ftm_loss(tape, fused, model.ftm_head, labels);
  }

  if (toggles.cop) {
    if (!cop_targets) throw ContractError("cop enabled but no targets given");
    if (batch.C != model.cfg.clips || batch.F != model.cfg.frames)
      throw ConfigError("order heads sized for C=" +
                        std::to_string(model.cfg.clips) + ", F=" +
                        std::to_string(model.cfg.frames) + " but batch has C=" +
                        std::to_string(batch.C) + ", F=" +
                        std::to_string(batch.F));
    std::vector<Tensor> clip_reps, text_reps;
    for (int b = 0; b < batch.B; ++b) {
      Tensor fused = model.fusion.fuse(tape,
                                       batch.v_ctx_full[static_cast<std::size_t>(b)],
                                       batch.t_ctx_full[static_cast<std::size_t>(b)]);
      Tensor reps = nn::CopFusion::clip_reps(fused, batch.C, batch.F);
      clip_reps.push_back(shuffle_rows(reps, cop_targets->clip_perm[static_cast<std::size_t>(b)]));
      text_reps.push_back(shuffle_rows(batch.t_ctx_full[static_cast<std::size_t>(b)],
                                       cop_targets->text_perm[static_cast<std::size_t>(b)]));
    }
    terms.cop = obj::cop_loss(tape, clip_reps, text_reps, *cop_targets,
                              model.cop_clip_head, model.cop_text_head);
  }
  return terms;
}

namespace {

std::string csv_row(int epoch, int step, double lr,
                    const obj::LossBundle& bundle, double sigma) {
  auto opt = [](const std::optional<double>& v) {
    return v ? fmt_double(*v) : std::string();
  };
  std::ostringstream os;
  os << epoch << "," << step << "," << fmt_double(lr) << "," << opt(bundle.vtc)
     << "," << opt(bundle.vtc_ctx) << "," << opt(bundle.cycle) << ","
     << opt(bundle.ftm) << "," << opt(bundle.cop) << ","
     << fmt_double(bundle.total) << "," << fmt_double(sigma);
  return os.str();
}

// run-control keys are excluded when comparing a resume config
std::string strip_run_controls(const std::string& echo) {
  std::istringstream is(echo);
  std::ostringstream os;
  std::string line;
  while (std::getline(is, line))
    if (line.rfind("train.stop_after_epochs", 0) != 0) os << line << "\n";
  return os.str();
}

}  // namespace

TrainResult run_training(const Config& cfg, const data::Corpus& corpus,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume) {
  cfg.validate();
  if (corpus.frame_dim != cfg.corpus.frame_dim)
    throw ConfigError("corpus frame_dim " + std::to_string(corpus.frame_dim) +
                      " does not match data.frame_dim " +
                      std::to_string(cfg.corpus.frame_dim));
  if (cfg.batch.frames > corpus.frames_per_clip)
    throw ConfigError("train.frames_per_clip exceeds frames stored in corpus");

  std::filesystem::create_directories(out_dir / "checkpoints");
  std::filesystem::create_directories(out_dir / "logs");

  nn::Model model(cfg.model_config(), cfg.train_seed);
  AdamW opt(cfg.optim);
  Rng run_rng = Rng::derive(cfg.train_seed, 0xda7aull);
  int start_epoch = 0;
  long global_step = 0;
  const std::string echo = cfg.echo();

  if (resume) {
    LoadedCheckpoint ckpt = load_checkpoint(*resume);
    if (strip_run_controls(ckpt.config_echo) != strip_run_controls(echo))
      throw ConfigError(
          "resume: checkpoint was written under a different configuration");
    apply_checkpoint(ckpt, model.params, opt);
    run_rng = Rng::deserialize(ckpt.rng_state);
    start_epoch = ckpt.next_epoch;
    global_step = ckpt.global_step;
  }

  const int n_videos = static_cast<int>(corpus.videos.size());
  const int steps_per_epoch = (n_videos + cfg.batch.videos - 1) / cfg.batch.videos;
  const long total_steps = static_cast<long>(cfg.epochs) * steps_per_epoch;
  data::SamplerSchedule schedule;
  if (cfg.progressive)
    schedule = data::SamplerSchedule(cfg.epochs, corpus.max_span_s());

  TrainResult result;
  result.log_path = out_dir / "logs" / "train_log.csv";
  const bool fresh_log = !std::filesystem::exists(result.log_path);
  std::ofstream log(result.log_path, std::ios::app);
  if (!log) throw IoError("cannot open log " + result.log_path.string());
  if (fresh_log)
    log << "epoch,step,lr,vtc,vtc_ctx,cycle,ftm,cop,total,sigma\n";

  std::filesystem::path last_ckpt;
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double window = cfg.progressive
                              ? schedule.window(epoch)
                              : std::numeric_limits<double>::infinity();
    for (int step = 0; step < steps_per_epoch; ++step) {
      data::SampleStats stats;
      data::Batch batch = data::sample_batch(corpus, cfg.batch, window,
                                             cfg.captions, run_rng, &stats);
      if (stats.widenings > 0) {
        result.widenings += stats.widenings;
        std::cerr << "sampler: widened window " << stats.widenings
                  << "x at epoch " << epoch << " step " << step << "\n";
      }
      obj::CopTargets targets;
      if (cfg.toggles.cop)
        targets = data::shuffle_for_cop(run_rng, cfg.batch.videos,
                                        cfg.batch.clips);

      Tape tape;
      obj::LossTerms terms = compute_losses(model, cfg.toggles, tape,
                                            batch.input,
                                            cfg.toggles.cop ? &targets : nullptr);
      auto [total, bundle] = obj::total_loss(tape, terms);
      if (!std::isfinite(bundle.total))
        throw NumericError(
            "non-finite total loss at epoch " + std::to_string(epoch) +
            " step " + std::to_string(step) + "; last good checkpoint: " +
            (last_ckpt.empty() ? "none" : last_ckpt.string()));

      const double lr_now = cosine_lr(global_step, total_steps, cfg.optim.lr);
      const double sigma_now = model.temperature.sigma();
      tape.backward(total);
      opt.step(model.params, tape, lr_now);

      log << csv_row(epoch, step, lr_now, bundle, sigma_now) << "\n";
      result.step_losses.emplace_back(epoch, bundle);
      ++global_step;
    }

    std::ostringstream name;
    name << "epoch_" << epoch << ".ckpt";
    last_ckpt = out_dir / "checkpoints" / name.str();
    save_checkpoint(last_ckpt, model.params, opt, run_rng, epoch + 1,
                    global_step, echo);
    ++result.epochs_run;
    if (cfg.stop_after_epochs > 0 &&
        result.epochs_run >= cfg.stop_after_epochs)
      break;
  }

  result.final_checkpoint = last_ckpt;
  result.global_steps = global_step;
  if (!log) throw IoError("failed writing log " + result.log_path.string());
  return result;
}

}  // namespace clipper::train
