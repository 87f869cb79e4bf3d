#include <cmath>
#include <filesystem>
#include <fstream>

#include "clipper/losscheck.hpp"
#include "clipper/trainer.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace clipper;
using namespace clipper::train;

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::current_path() / "test_tmp" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Config smoke_config() {
  KvText kv;
  kv.set("data.videos", "20");
  kv.set("data.eval_videos", "4");
  kv.set("data.phases", "3");
  kv.set("data.frame_dim", "8");
  kv.set("data.vocab", "30");
  kv.set("data.caption_tokens", "4");
  kv.set("model.dim", "16");
  kv.set("model.ctx_layers", "2");
  kv.set("model.dual_layers", "1");
  kv.set("model.mme_blocks", "1");
  kv.set("train.epochs", "2");
  kv.set("train.batch_videos", "4");
  kv.set("train.clips_per_video", "4");
  kv.set("train.frames_per_clip", "2");
  return Config::from_kv(kv);
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("cosine learning rate schedule") {
  CHECK(cosine_lr(0, 100, 1e-4) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(cosine_lr(100, 100, 1e-4) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cosine_lr(50, 100, 1e-4) == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK_THROWS_AS(cosine_lr(0, 0, 1e-4), ConfigError);
  double prev = 1e-4;
  for (long s = 0; s <= 40; ++s) {
    double lr = cosine_lr(s, 40, 1e-4);
    CHECK(lr <= prev + 1e-18);
    prev = lr;
  }
}

TEST_CASE("adamw update rules") {
  SUBCASE("zero gradients and zero decay leave parameters unchanged") {
    ParamStore ps;
    auto& p = ps.create("w", ad::Shape{3}, {1.0, -2.0, 0.5});
    OptimConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt(cfg);
    ad::Tape t;
    ad::Tensor w = t.use(p);
    t.backward(mul(sum(w), t.constant(ad::Shape{1}, 0.0)));
    opt.step(ps, t, 0.1);
    CHECK(p.value == std::vector<double>{1.0, -2.0, 0.5});
  }
  SUBCASE("first step on x^2 moves by about lr") {
    ParamStore ps;
    auto& p = ps.create("x", ad::Shape{1}, {1.0});
    OptimConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt(cfg);
    ad::Tape t;
    ad::Tensor x = t.use(p);
    t.backward(sum(mul(x, x)));
    opt.step(ps, t, 0.1);
    CHECK(p.value[0] < 1.0);
    CHECK(std::abs(p.value[0] - 0.9) < 1e-3);
  }
  SUBCASE("decoupled decay scales by (1 - lr*wd) under zero gradient") {
    ParamStore ps;
    auto& p = ps.create("w", ad::Shape{2}, {2.0, -4.0});
    OptimConfig cfg;
    cfg.weight_decay = 0.01;
    AdamW opt(cfg);
    ad::Tape t;
    ad::Tensor w = t.use(p);
    t.backward(mul(sum(w), t.constant(ad::Shape{1}, 0.0)));
    opt.step(ps, t, 0.1);
    CHECK(p.value[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
    CHECK(p.value[1] == doctest::Approx(-4.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
  }
  SUBCASE("non-finite gradient aborts naming the parameter") {
    ParamStore ps;
    auto& p = ps.create("bad_param", ad::Shape{1}, {0.0});
    AdamW opt{OptimConfig{}};
    ad::Tape t;
    ad::Tensor x = t.use(p);
    // log'(x) at the clamp floor is finite, so force inf via exp overflow
    t.backward(sum(ad::exp(scale(ad::exp(scale(x, 1.0)), 1000.0))));
    CHECK_THROWS_WITH_AS(opt.step(ps, t, 0.1),
                         doctest::Contains("bad_param"), NumericError);
  }
  SUBCASE("parameters off the tape are untouched") {
    ParamStore ps;
    auto& used = ps.create("used", ad::Shape{1}, {1.0});
    auto& unused = ps.create("unused", ad::Shape{1}, {3.0});
    OptimConfig cfg;
    cfg.weight_decay = 0.5;
    AdamW opt(cfg);
    ad::Tape t;
    t.backward(sum(t.use(used)));
    opt.step(ps, t, 0.1);
    CHECK(unused.value[0] == 3.0);
    CHECK(used.value[0] != 1.0);
  }
}

TEST_CASE("checkpoint round trip is byte exact") {
  ParamStore ps;
  Rng rng(5);
  ps.create_trunc_normal("a.w", ad::Shape{3, 4}, rng);
  ps.create_trunc_normal("b.w", ad::Shape{5}, rng);
  AdamW opt{OptimConfig{}};
  {
    ad::Tape t;
    ad::Tensor loss = sum(mul(t.use(ps.at("a.w")), t.use(ps.at("a.w"))));
    t.backward(loss);
    opt.step(ps, t, 1e-3);
  }
  Rng run(77);
  run.uniform();

  fs::path dir = fresh_dir("ckpt");
  fs::path p1 = dir / "one.ckpt";
  save_checkpoint(p1, ps, opt, run, 3, 42, "train.epochs = 2\n");

  LoadedCheckpoint loaded = load_checkpoint(p1);
  CHECK(loaded.next_epoch == 3);
  CHECK(loaded.global_step == 42);
  CHECK(loaded.config_echo == "train.epochs = 2\n");
  CHECK(loaded.params.size() == 2);

  ParamStore ps2;
  Rng rng2(99);
  ps2.create_trunc_normal("a.w", ad::Shape{3, 4}, rng2);
  ps2.create_trunc_normal("b.w", ad::Shape{5}, rng2);
  AdamW opt2{OptimConfig{}};
  apply_checkpoint(loaded, ps2, opt2);
  CHECK(ps2.at("a.w").value == ps.at("a.w").value);
  CHECK(opt2.step_count() == opt.step_count());

  fs::path p2 = dir / "two.ckpt";
  Rng run2 = Rng::deserialize(loaded.rng_state);
  save_checkpoint(p2, ps2, opt2, run2, 3, 42, loaded.config_echo);
  CHECK(read_file(p1) == read_file(p2));
}

TEST_CASE("corrupted checkpoints are rejected without partial state") {
  fs::path dir = fresh_dir("ckpt_bad");
  ParamStore ps;
  Rng rng(6);
  ps.create_trunc_normal("w", ad::Shape{4}, rng);
  AdamW opt{OptimConfig{}};
  Rng run(1);
  fs::path good = dir / "good.ckpt";
  save_checkpoint(good, ps, opt, run, 1, 10, "x = 1\n");

  SUBCASE("bad magic") {
    std::string bytes = read_file(good);
    bytes[0] = 'X';
    fs::path bad = dir / "bad_magic.ckpt";
    std::ofstream(bad, std::ios::binary).write(bytes.data(),
                                               static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(bad), IoError);
  }
  SUBCASE("bad version") {
    std::string bytes = read_file(good);
    bytes[8] = 9;
    fs::path bad = dir / "bad_version.ckpt";
    std::ofstream(bad, std::ios::binary).write(bytes.data(),
                                               static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_WITH_AS(load_checkpoint(bad),
                         doctest::Contains("version mismatch"), IoError);
  }
  SUBCASE("truncated file") {
    std::string bytes = read_file(good);
    bytes.resize(bytes.size() / 2);
    fs::path bad = dir / "truncated.ckpt";
    std::ofstream(bad, std::ios::binary).write(bytes.data(),
                                               static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(bad), IoError);
  }
}

TEST_CASE("training smoke run") {
  Config cfg = smoke_config();
  auto gen = data::generate_corpus(cfg.corpus);

  SUBCASE("completes and the loss decreases") {
    fs::path dir = fresh_dir("train_smoke");
    TrainResult res = run_training(cfg, gen.train, dir);
    CHECK(res.epochs_run == 2);
    CHECK(fs::exists(res.final_checkpoint));
    CHECK(fs::exists(res.log_path));

    std::vector<double> first_epoch, last_epoch;
    for (const auto& [epoch, bundle] : res.step_losses)
      (epoch == 0 ? first_epoch : last_epoch).push_back(bundle.total);
    auto median = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      return v[v.size() / 2];
    };
    CHECK(median(last_epoch) < median(first_epoch));

    // sigma stays positive and is logged in column 10
    std::ifstream log(res.log_path);
    std::string line;
    std::getline(log, line);
    CHECK(line == "epoch,step,lr,vtc,vtc_ctx,cycle,ftm,cop,total,sigma");
    int rows = 0;
    while (std::getline(log, line)) {
      auto pos = line.rfind(',');
      CHECK(std::stod(line.substr(pos + 1)) > 0.0);
      ++rows;
    }
    CHECK(rows == static_cast<int>(res.step_losses.size()));
  }

  SUBCASE("same seed twice gives an identical trajectory") {
    fs::path d1 = fresh_dir("train_rep1");
    fs::path d2 = fresh_dir("train_rep2");
    TrainResult r1 = run_training(cfg, gen.train, d1);
    TrainResult r2 = run_training(cfg, gen.train, d2);
    CHECK(read_file(r1.log_path) == read_file(r2.log_path));
  }

  SUBCASE("all objectives off is rejected before any step") {
    KvText kv;
    kv.set("objectives.vtc", "false");
    kv.set("objectives.ctx", "false");
    kv.set("objectives.cycle", "false");
    kv.set("objectives.ftm", "false");
    kv.set("objectives.cop", "false");
    CHECK_THROWS_AS(Config::from_kv(kv), ConfigError);
  }

  SUBCASE("disabled objectives leave their parameters at initialization") {
    KvText kv;
    kv.set("data.videos", "20");
    kv.set("data.eval_videos", "4");
    kv.set("data.phases", "3");
    kv.set("data.frame_dim", "8");
    kv.set("data.vocab", "30");
    kv.set("data.caption_tokens", "4");
    kv.set("model.dim", "16");
    kv.set("model.ctx_layers", "2");
    kv.set("model.dual_layers", "1");
    kv.set("model.mme_blocks", "1");
    kv.set("train.epochs", "2");
    kv.set("train.batch_videos", "4");
    kv.set("train.clips_per_video", "4");
    kv.set("train.frames_per_clip", "2");
    kv.set("objectives.ftm", "false");
    kv.set("objectives.cop", "false");
    Config vtc_cfg = Config::from_kv(kv);
    fs::path dir = fresh_dir("train_toggle");
    TrainResult res = run_training(vtc_cfg, gen.train, dir);

    nn::Model reference(vtc_cfg.model_config(), vtc_cfg.train_seed);
    LoadedCheckpoint ckpt = load_checkpoint(res.final_checkpoint);
    for (const auto& p : ckpt.params) {
      const auto& init = reference.params.at(p.name).value;
      const bool untouched = p.value == init;
      if (p.name.rfind("ftm_head", 0) == 0 ||
          p.name.rfind("cop_clip_head", 0) == 0 ||
          p.name.rfind("cop_text_head", 0) == 0 ||
          p.name.rfind("cop_fusion", 0) == 0 ||
          p.name.rfind("mme", 0) == 0) {
        INFO("parameter " << p.name << " should stay at init");
        CHECK(untouched);
      }
    }
    // and the trained path did move
    CHECK(ckpt.params.size() == reference.params.count());
    bool video_enc_moved = false;
    for (const auto& p : ckpt.params)
      if (p.name.rfind("video_enc", 0) == 0 &&
          p.value != reference.params.at(p.name).value)
        video_enc_moved = true;
    CHECK(video_enc_moved);
  }

  SUBCASE("resume reproduces the uninterrupted run") {
    fs::path full_dir = fresh_dir("train_full");
    TrainResult full = run_training(cfg, gen.train, full_dir);

    Config stopped = cfg;
    stopped.stop_after_epochs = 1;
    fs::path part_dir = fresh_dir("train_part");
    TrainResult part = run_training(stopped, gen.train, part_dir);
    CHECK(part.epochs_run == 1);

    Config resumed_cfg = cfg;
    fs::path resume_dir = fresh_dir("train_resume");
    TrainResult resumed =
        run_training(resumed_cfg, gen.train, resume_dir, part.final_checkpoint);

    // epoch-1 rows must match the uninterrupted run exactly
    auto epoch_rows = [](const fs::path& p, const std::string& prefix) {
      std::ifstream is(p);
      std::string line;
      std::vector<std::string> rows;
      while (std::getline(is, line))
        if (line.rfind(prefix, 0) == 0) rows.push_back(line);
      return rows;
    };
    auto a = epoch_rows(full.log_path, "1,");
    auto b = epoch_rows(resumed.log_path, "1,");
    REQUIRE(!a.empty());
    CHECK(a == b);

    // final checkpoints agree byte for byte
    CHECK(read_file(full.final_checkpoint) ==
          read_file(resumed.final_checkpoint));
  }
}

TEST_CASE("loss gradcheck harness") {
  obj::Toggles toggles;
  LossCheckOptions opts;
  opts.seeds = 1;
  auto rows = run_loss_gradchecks(toggles, opts);
  REQUIRE(rows.size() == 5);
  for (const auto& row : rows) {
    INFO(row.name << " err " << row.max_rel_err);
    CHECK(row.max_rel_err < 1e-5);
  }

  // negative control: a corrupted backward must be caught
  opts.corrupt_backward = true;
  obj::Toggles only_vtc;
  only_vtc.ctx = only_vtc.cycle = only_vtc.ftm = only_vtc.cop = false;
  auto bad = run_loss_gradchecks(only_vtc, opts);
  CHECK(bad[0].max_rel_err > 1e-5);
}
