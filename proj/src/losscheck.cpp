#include "clipper/losscheck.hpp"

#include <cmath>
#include <functional>

#include "clipper/error.hpp"
#include "clipper/gradcheck.hpp"
#include "clipper/trainer.hpp"

namespace clipper::train {

using ad::Shape;
using ad::Tape;
using ad::Tensor;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n, double lo = -1.0,
                                  double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Weights at their 0.02-scale init leave many gradients below the 1e-8
// error floor; the check runs at a generic point instead.
void randomize_params(ParamStore& ps, std::uint64_t seed) {
  for (auto& p : ps.all()) {
    Rng jitter = Rng::derive(seed, std::hash<std::string>{}(p.name));
    const bool is_gain = p.name.ends_with(".gain");
    for (auto& v : p.value)
      v = (is_gain ? 1.0 : 0.0) + jitter.uniform(-0.4, 0.4);
  }
}

double check_leaf(const ad::ScalarFn& fn, const std::vector<double>& x,
                  double step) {
  return ad::grad_check(fn, x, step).max_rel_err;
}

double check_params(ParamStore& ps,
                    const std::function<Tensor(Tape&)>& build_loss,
                    double step, int coords_cap) {
  double worst = 0.0;
  for (auto& p : ps.all()) {
    auto fn = [&](std::span<const double> x,
                  std::vector<double>* grad) -> double {
      std::vector<double> saved = p.value;
      p.value.assign(x.begin(), x.end());
      Tape t;
      Tensor loss = build_loss(t);
      double out = loss.scalar();
      if (grad) {
        t.backward(loss);
        if (t.uses(p)) {
          auto g = t.grad_of(p);
          grad->assign(g.begin(), g.end());
        } else {
          grad->assign(x.size(), 0.0);
        }
      }
      p.value = std::move(saved);
      return out;
    };
    Rng pick(std::hash<std::string>{}(p.name) ^ 0x9999ull);
    std::vector<std::size_t> coords;
    for (int i = 0; i < coords_cap && coords.size() < p.value.size(); ++i)
      coords.push_back(static_cast<std::size_t>(
          pick.uniform_int(static_cast<int>(p.value.size()))));
    worst = std::max(worst,
                     ad::grad_check(fn, p.value, step, &coords).max_rel_err);
  }
  return worst;
}

// x layout for the embedding-level losses: frames, texts, log sigma.
struct EmbeddingLayout {
  int B, C, F, D;
  std::size_t n_frames() const {
    return static_cast<std::size_t>(B) * C * F * D;
  }
  std::size_t n_texts() const { return static_cast<std::size_t>(B) * C * D; }
  std::size_t total() const { return n_frames() + n_texts() + 1; }

  nn::EmbeddingBatch unpack(Tensor leaf, bool as_ctx) const {
    nn::EmbeddingBatch batch;
    batch.B = B;
    batch.C = C;
    batch.F = F;
    batch.D = D;
    int off = 0;
    for (int i = 0; i < B * C; ++i) {
      Tensor v = reshape(slice(leaf, 0, off, F * D), Shape{F, D});
      off += F * D;
      (as_ctx ? batch.v_ctx : batch.v).push_back(v);
    }
    for (int i = 0; i < B * C; ++i) {
      Tensor tx = reshape(slice(leaf, 0, off, D), Shape{1, D});
      off += D;
      (as_ctx ? batch.t_ctx : batch.t).push_back(tx);
    }
    return batch;
  }

  static Tensor inv_sigma(Tensor leaf) {
    const int last = static_cast<int>(leaf.numel()) - 1;
    return ad::exp(scale(reshape(slice(leaf, 0, last, 1), Shape{1}), -1.0));
  }
};

using BatchLoss =
    std::function<Tensor(Tape&, const nn::EmbeddingBatch&, Tensor)>;

double check_embedding_loss(const BatchLoss& loss_fn, bool as_ctx,
                            const LossCheckOptions& opts, std::uint64_t seed,
                            bool corrupt) {
  EmbeddingLayout layout{opts.batch_videos, opts.clips, opts.frames, opts.dim};
  Rng rng = Rng::derive(seed, 0xe0e0ull);
  auto x = random_values(rng, layout.total());
  x[layout.total() - 1] = std::log(0.5);
  auto fn = [&](std::span<const double> xin,
                std::vector<double>* grad) -> double {
    Tape t;
    Tensor leaf = t.leaf(Shape{static_cast<int>(layout.total())},
                         std::vector<double>(xin.begin(), xin.end()));
    nn::EmbeddingBatch batch = layout.unpack(leaf, as_ctx);
    Tensor loss = loss_fn(t, batch, EmbeddingLayout::inv_sigma(leaf));
    if (grad) {
      t.backward(loss);
      auto g = leaf.grad();
      grad->assign(g.begin(), g.end());
      if (corrupt) (*grad)[0] += 1e-3;
    }
    return loss.scalar();
  };
  return check_leaf(fn, x, opts.step);
}

// The loss takes the fused per-text frame features and applies the matching
// head; the multimodal encoder that produces those features is covered by
// the block-level checks (deep compositions accumulate cancellation and can
// leave single coordinates with ~1e-7 gradients where central differences
// are pure roundoff against this error metric).
double check_ftm(const LossCheckOptions& opts, std::uint64_t seed,
                 bool corrupt) {
  const int B = opts.batch_videos, C = opts.clips, F = opts.frames,
            D = opts.dim;
  ParamStore ps;
  Rng init = Rng::derive(seed, 0xf0f0ull);
  nn::MlpHead head(ps, init, "ftm_head", D, 2 * D, 1);
  randomize_params(ps, seed);

  const std::size_t n_fused =
      static_cast<std::size_t>(B) * C * (C * F) * D;
  Rng rng = Rng::derive(seed, 0xf1f1ull);
  auto x = random_values(rng, n_fused);
  const auto labels = obj::build_ftm_labels(C, F);

  auto build = [&](Tape& t, Tensor leaf) {
    std::vector<Tensor> fused;
    int off = 0;
    for (int i = 0; i < B * C; ++i) {
      fused.push_back(reshape(slice(leaf, 0, off, C * F * D),
                              Shape{C * F, D}));
      off += C * F * D;
    }
    return obj::ftm_loss(t, fused, head, labels);
  };

  auto fn = [&](std::span<const double> xin,
                std::vector<double>* grad) -> double {
    Tape t;
    Tensor leaf = t.leaf(Shape{static_cast<int>(xin.size())},
                         std::vector<double>(xin.begin(), xin.end()));
    Tensor loss = build(t, leaf);
    if (grad) {
      t.backward(loss);
      auto g = leaf.grad();
      grad->assign(g.begin(), g.end());
      if (corrupt) (*grad)[0] += 1e-3;
    }
    return loss.scalar();
  };
  double worst = check_leaf(fn, x, opts.step);

  auto fixed_leaf_loss = [&](Tape& t) {
    Tensor leaf = t.constant(Shape{static_cast<int>(x.size())}, x);
    return build(t, leaf);
  };
  return std::max(worst, check_params(ps, fixed_leaf_loss, opts.step, 12));
}

// Order-prediction loss over already-shuffled clip and text reps; the
// single fusion layer producing the reps is covered by the block checks.
double check_cop(const LossCheckOptions& opts, std::uint64_t seed,
                 bool corrupt) {
  const int B = opts.batch_videos, C = opts.clips, F = opts.frames,
            D = opts.dim;
  ParamStore ps;
  Rng init = Rng::derive(seed, 0xc0c0ull);
  nn::MlpHead clip_head(ps, init, "clip_head", F * D, 2 * D, C);
  nn::MlpHead text_head(ps, init, "text_head", D, 2 * D, C);
  randomize_params(ps, seed);

  Rng perm_rng = Rng::derive(seed, 0xc1c1ull);
  obj::CopTargets targets;
  for (int b = 0; b < B; ++b) {
    targets.clip_perm.push_back(perm_rng.permutation(C));
    targets.text_perm.push_back(perm_rng.permutation(C));
  }

  const std::size_t n_clip_reps = static_cast<std::size_t>(B) * C * F * D;
  const std::size_t n_texts = static_cast<std::size_t>(B) * C * D;
  Rng rng = Rng::derive(seed, 0xc2c2ull);
  auto x = random_values(rng, n_clip_reps + n_texts);

  auto build = [&](Tape& t, Tensor leaf) {
    std::vector<Tensor> clip_reps, text_reps;
    int off = 0;
    for (int b = 0; b < B; ++b) {
      clip_reps.push_back(
          reshape(slice(leaf, 0, off, C * F * D), Shape{C, F * D}));
      off += C * F * D;
    }
    for (int b = 0; b < B; ++b) {
      text_reps.push_back(reshape(slice(leaf, 0, off, C * D), Shape{C, D}));
      off += C * D;
    }
    return obj::cop_loss(t, clip_reps, text_reps, targets, clip_head,
                         text_head);
  };

  auto fn = [&](std::span<const double> xin,
                std::vector<double>* grad) -> double {
    Tape t;
    Tensor leaf = t.leaf(Shape{static_cast<int>(xin.size())},
                         std::vector<double>(xin.begin(), xin.end()));
    Tensor loss = build(t, leaf);
    if (grad) {
      t.backward(loss);
      auto g = leaf.grad();
      grad->assign(g.begin(), g.end());
      if (corrupt) (*grad)[0] += 1e-3;
    }
    return loss.scalar();
  };
  double worst = check_leaf(fn, x, opts.step);

  auto fixed_leaf_loss = [&](Tape& t) {
    Tensor leaf = t.constant(Shape{static_cast<int>(x.size())}, x);
    return build(t, leaf);
  };
  return std::max(worst, check_params(ps, fixed_leaf_loss, opts.step, 12));
}

}  // namespace

std::vector<LossCheckRow> run_loss_gradchecks(const obj::Toggles& toggles,
                                              const LossCheckOptions& opts) {
  std::vector<LossCheckRow> rows;
  auto over_seeds = [&](const std::function<double(std::uint64_t)>& one) {
    double worst = 0.0;
    for (int s = 0; s < opts.seeds; ++s)
      worst = std::max(worst, one(1000 + static_cast<std::uint64_t>(s)));
    return worst;
  };

  if (toggles.vtc)
    rows.push_back({"vtc", over_seeds([&](std::uint64_t s) {
      return check_embedding_loss(
          [](Tape& t, const nn::EmbeddingBatch& b, Tensor inv) {
            return obj::vtc_loss(t, b, inv, true);
          },
          false, opts, s, opts.corrupt_backward);
    })});
  if (toggles.ctx)
    rows.push_back({"vtc_ctx", over_seeds([&](std::uint64_t s) {
      return check_embedding_loss(
          [](Tape& t, const nn::EmbeddingBatch& b, Tensor inv) {
            return obj::vtc_ctx_loss(t, b, inv, true, false);
          },
          true, opts, s, opts.corrupt_backward);
    })});
  if (toggles.cycle)
    rows.push_back({"cycle", over_seeds([&](std::uint64_t s) {
      return check_embedding_loss(
          [](Tape& t, const nn::EmbeddingBatch& b, Tensor inv) {
            return obj::cycle_loss(t, b, inv, true);
          },
          true, opts, s, opts.corrupt_backward);
    })});
  if (toggles.ftm)
    rows.push_back({"ftm", over_seeds([&](std::uint64_t s) {
      return check_ftm(opts, s, opts.corrupt_backward);
    })});
  if (toggles.cop)
    rows.push_back({"cop", over_seeds([&](std::uint64_t s) {
      return check_cop(opts, s, opts.corrupt_backward);
    })});
  if (rows.empty()) throw ConfigError("gradcheck: no objectives enabled");
  return rows;
}

}  // namespace clipper::train
