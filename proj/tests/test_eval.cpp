#include <cmath>
#include <numeric>

#include "clipper/evaluate.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace clipper;
using namespace clipper::eval;

namespace {

nn::ModelConfig eval_model_config(const data::CorpusSpec& spec) {
  nn::ModelConfig cfg;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.dual_layers = 1;
  cfg.ctx_layers = 2;
  cfg.mme_blocks = 1;
  cfg.frame_dim = spec.frame_dim;
  cfg.vocab = spec.vocab;
  cfg.clips = 3;
  cfg.frames = 2;
  return cfg;
}

data::CorpusSpec eval_spec() {
  data::CorpusSpec spec;
  spec.phases = 3;
  spec.videos = 6;
  spec.eval_videos = 2;
  spec.phase_min_s = 90.0;
  spec.phase_max_s = 150.0;
  spec.frame_dim = 8;
  spec.vocab = 30;
  spec.caption_tokens = 4;
  spec.seed = 31;
  return spec;
}

}  // namespace

TEST_CASE("prompt encoding") {
  auto spec = eval_spec();
  nn::Model model(eval_model_config(spec), 3);
  auto prompts = data::make_prompts(spec);
  PromptEmbeddings pe = encode_prompts(model, prompts);

  SUBCASE("K classes x 4 variants, base and contextual") {
    CHECK(pe.classes == spec.phases);
    CHECK(pe.base.size() == 3);
    CHECK(pe.ctx.size() == 3);
    for (int k = 0; k < 3; ++k)
      for (int p = 0; p < 4; ++p) {
        CHECK(pe.base[k][p].size() == 16);
        CHECK(pe.ctx[k][p].size() == 16);
      }
  }
  SUBCASE("duplicated prompt gives a duplicated embedding") {
    data::PromptSet dup = prompts;
    dup.prompts[1][2] = dup.prompts[0][0];
    PromptEmbeddings pd = encode_prompts(model, dup);
    CHECK(pd.base[1][2] == pd.base[0][0]);
    CHECK(testutil::max_abs_diff(pd.ctx[1][2], pd.ctx[0][0]) < 1e-9);
  }
  SUBCASE("permuting prompt order permutes contextual outputs identically") {
    data::PromptSet swapped = prompts;
    std::swap(swapped.prompts[0], swapped.prompts[2]);
    PromptEmbeddings ps = encode_prompts(model, swapped);
    CHECK(testutil::max_abs_diff(ps.ctx[0][1], pe.ctx[2][1]) < 1e-9);
    CHECK(testutil::max_abs_diff(ps.ctx[2][3], pe.ctx[0][3]) < 1e-9);
  }
  SUBCASE("empty prompt rejected") {
    data::PromptSet bad = prompts;
    bad.prompts[0][0].clear();
    CHECK_THROWS_AS(encode_prompts(model, bad), ContractError);
  }
}

TEST_CASE("window spans and truth") {
  auto spans = window_spans(10, 4);
  REQUIRE(spans.size() == 3);
  CHECK(spans[0] == std::pair<int, int>{0, 4});
  CHECK(spans[2] == std::pair<int, int>{8, 10});
  CHECK(window_spans(3, 8).size() == 1);  // single truncated window

  std::vector<int> labels = {1, 1, 2, 2};
  CHECK(window_truth(labels, 0, 4) == 1);  // tie resolves to the earlier label
  CHECK(window_truth(labels, 1, 4) == 2);
  CHECK(window_truth(labels, 0, 2) == 1);
}

TEST_CASE("per-window scoring") {
  auto spec = eval_spec();
  auto gen = data::generate_corpus(spec);
  nn::Model model(eval_model_config(spec), 4);
  auto prompts = data::make_prompts(spec);
  PromptEmbeddings pe = encode_prompts(model, prompts);
  const auto& video = gen.eval.videos[0];
  const int n_frames =
      static_cast<int>(video.clips.size()) * spec.frames_per_clip;

  SUBCASE("window arithmetic carries through scoring") {
    EvalConfig cfg;
    cfg.window = 4;
    VideoScores vs = score_video(model, video, pe, cfg);
    CHECK(vs.truth.size() == window_spans(n_frames, 4).size());
    CHECK(vs.scores.size() == 4);
    CHECK(vs.scores[0].size() == vs.truth.size());
    CHECK(vs.scores[0][0].size() == 3);
  }
  SUBCASE("w=1 gives per-frame predictions") {
    EvalConfig cfg;
    cfg.window = 1;
    VideoScores vs = score_video(model, video, pe, cfg);
    CHECK(static_cast<int>(vs.truth.size()) == n_frames);
  }
  SUBCASE("identity context encoders make averaged equal base") {
    nn::ModelConfig mc = eval_model_config(spec);
    mc.context_encoders = false;
    nn::Model plain(mc, 4);
    PromptEmbeddings pp = encode_prompts(plain, prompts);
    EvalConfig averaged;
    averaged.fusion = Fusion::kAveraged;
    EvalConfig base;
    base.fusion = Fusion::kBase;
    VideoScores a = score_video(plain, video, pp, averaged);
    VideoScores b = score_video(plain, video, pp, base);
    for (int p = 0; p < 4; ++p)
      for (std::size_t w = 0; w < a.scores[p].size(); ++w)
        for (std::size_t k = 0; k < a.scores[p][w].size(); ++k)
          CHECK(std::abs(a.scores[p][w][k] - b.scores[p][w][k]) < 1e-12);
  }
  SUBCASE("base-only results ignore context-encoder parameters") {
    EvalConfig base;
    base.fusion = Fusion::kBase;
    VideoScores before = score_video(model, video, pe, base);
    nn::Model tweaked(eval_model_config(spec), 4);
    for (auto& p : tweaked.params.all())
      if (p.name.rfind("video_ctx", 0) == 0 || p.name.rfind("text_ctx", 0) == 0)
        for (auto& v : p.value) v += 0.5;
    PromptEmbeddings pt = encode_prompts(tweaked, prompts);
    VideoScores after = score_video(tweaked, video, pt, base);
    for (int p = 0; p < 4; ++p)
      for (std::size_t w = 0; w < before.scores[p].size(); ++w)
        CHECK(before.scores[p][w] == after.scores[p][w]);
  }
}

TEST_CASE("macro F1") {
  SUBCASE("perfect predictions") {
    std::vector<int> y = {1, 2, 3, 2, 1};
    CHECK(macro_f1(y, y) == 1.0);
  }
  SUBCASE("hand-computed binary video") {
    // truth half class 1, half class 2; predictions all class 1
    std::vector<int> truth = {1, 1, 2, 2};
    std::vector<int> preds = {1, 1, 1, 1};
    CHECK(macro_f1(preds, truth) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  }
  SUBCASE("dataset aggregation is the unweighted mean") {
    std::vector<double> two = {0.5, 0.7};
    CHECK(dataset_f1(two) == doctest::Approx(0.6).epsilon(1e-12));
    std::vector<double> three = {0.5, 0.7, 0.9};
    CHECK(dataset_f1(three) == doctest::Approx(0.7).epsilon(1e-12));
  }
  SUBCASE("empty video rejected") {
    std::vector<int> none;
    CHECK_THROWS_AS(macro_f1(none, none), ContractError);
  }
}

TEST_CASE("average precision") {
  SUBCASE("positive ranked first") {
    std::vector<double> s = {0.9, 0.1};
    std::vector<char> pos = {1, 0};
    CHECK(average_precision(s, pos) == 1.0);
  }
  SUBCASE("positive ranked second of two") {
    std::vector<double> s = {0.9, 0.1};
    std::vector<char> pos = {0, 1};
    CHECK(average_precision(s, pos) == 0.5);
  }
  SUBCASE("two positives at ranks one and three of four") {
    std::vector<double> s = {0.9, 0.8, 0.7, 0.6};
    std::vector<char> pos = {1, 0, 1, 0};
    CHECK(average_precision(s, pos) ==
          doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-9));
  }
  SUBCASE("reversed and perfect rankings bracket any ranking") {
    std::vector<double> s = {0.4, 0.9, 0.2, 0.6, 0.5};
    std::vector<char> pos = {1, 0, 1, 0, 1};
    std::vector<double> perfect = {1.0, 0.0, 1.0, 0.0, 1.0};
    std::vector<double> reversed = {0.0, 1.0, 0.0, 1.0, 0.0};
    double any = average_precision(s, pos);
    CHECK(any <= average_precision(perfect, pos));
    CHECK(any >= average_precision(reversed, pos));
  }
  SUBCASE("no positives rejected") {
    std::vector<double> s = {0.9};
    std::vector<char> pos = {0};
    CHECK_THROWS_AS(average_precision(s, pos), ContractError);
  }
}

TEST_CASE("window averaging provably denoises oracle scores") {
  // per-frame oracle scores: one-hot true class, corrupted on alternating
  // frames by opposite-signed pushes toward the next class. Any single even
  // frame misclassifies; averaging any aligned window of two or more frames
  // cancels the corruption exactly, so F1 is non-decreasing in the window.
  const int classes = 4, frames_per_phase = 32;
  std::vector<int> labels;
  std::vector<std::vector<double>> frame_scores;
  for (int c = 1; c <= classes; ++c)
    for (int f = 0; f < frames_per_phase; ++f) {
      labels.push_back(c);
      std::vector<double> row(classes, 0.0);
      row[static_cast<std::size_t>(c - 1)] = 1.0;
      const int next = c % classes;  // 0-based index of the decoy class
      row[static_cast<std::size_t>(next)] += (f % 2 == 0 ? 1.5 : -1.5);
      frame_scores.push_back(std::move(row));
    }

  double prev = -1.0;
  for (int w : {1, 2, 4, 8, 16}) {
    auto spans = window_spans(static_cast<int>(labels.size()), w);
    std::vector<int> preds, truth;
    for (const auto& [begin, end] : spans) {
      std::vector<double> mean(classes, 0.0);
      for (int i = begin; i < end; ++i)
        for (int k = 0; k < classes; ++k)
          mean[static_cast<std::size_t>(k)] +=
              frame_scores[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      int arg = 0;
      for (int k = 1; k < classes; ++k)
        if (mean[static_cast<std::size_t>(k)] > mean[static_cast<std::size_t>(arg)])
          arg = k;
      preds.push_back(arg + 1);
      truth.push_back(window_truth(labels, begin, end));
    }
    double f1 = macro_f1(preds, truth);
    CHECK(f1 >= prev);
    prev = f1;
  }
  CHECK(prev == 1.0);  // any window of two or more frames is exact
}

TEST_CASE("full evaluation and sweep") {
  auto spec = eval_spec();
  auto gen = data::generate_corpus(spec);
  nn::Model model(eval_model_config(spec), 5);
  auto prompts = data::make_prompts(spec);
  EvalConfig cfg;

  MetricsReport report = evaluate(model, gen.eval, prompts, cfg);
  CHECK(report.per_video_f1.size() == 4);
  CHECK(report.per_video_f1[0].size() == gen.eval.videos.size());
  for (double f : report.dataset_f1_per_variant) {
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
  }
  CHECK(report.map >= 0.0);
  CHECK(report.map <= 1.0);
  CHECK(report.skipped_classes == 0);

  SUBCASE("prompt averaging equals the mean of four single-variant runs") {
    double mean_f1 = 0.0;
    for (int p = 0; p < 4; ++p) {
      data::PromptSet solo = prompts;
      for (int k = 0; k < solo.classes; ++k)
        for (int q = 0; q < 4; ++q)
          solo.prompts[static_cast<std::size_t>(k)][static_cast<std::size_t>(q)] =
              prompts.prompts[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)];
      MetricsReport one = evaluate(model, gen.eval, solo, cfg);
      mean_f1 += one.f1;
    }
    mean_f1 /= 4.0;
    CHECK(mean_f1 == doctest::Approx(report.f1).epsilon(1e-12));
  }

  SUBCASE("sweep rows equal independent evaluations") {
    std::vector<int> windows = {1, 4};
    auto rows = temporal_window_sweep(model, gen.eval, prompts, cfg, windows);
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows) {
      EvalConfig one = cfg;
      one.window = row.window;
      MetricsReport again = evaluate(model, gen.eval, prompts, one);
      CHECK(row.f1 == again.f1);
      CHECK(row.map == again.map);
    }
  }

  SUBCASE("constant shift of one window's class scores keeps the argmax") {
    PromptEmbeddings pe = encode_prompts(model, prompts);
    VideoScores vs = score_video(model, gen.eval.videos[0], pe, cfg);
    auto row = vs.scores[0][0];
    int arg = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
      if (row[k] > row[static_cast<std::size_t>(arg)]) arg = static_cast<int>(k);
    for (auto& x : row) x += 123.456;
    int arg2 = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
      if (row[k] > row[static_cast<std::size_t>(arg2)]) arg2 = static_cast<int>(k);
    CHECK(arg == arg2);
  }
}

TEST_CASE("cop order accuracy runs on held-out videos") {
  auto spec = eval_spec();
  auto gen = data::generate_corpus(spec);
  nn::Model model(eval_model_config(spec), 6);
  CopAccuracy acc = cop_order_accuracy(model, gen.eval);
  CHECK(acc.slots > 0);
  CHECK(acc.combined >= 0.0);
  CHECK(acc.combined <= 1.0);
  CHECK(acc.combined == doctest::Approx(0.5 * (acc.clip_acc + acc.text_acc)));
}
