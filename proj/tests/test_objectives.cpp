#include <cmath>
#include <vector>

#include "clipper/objectives.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace clipper;
using namespace clipper::ad;
using namespace clipper::nn;
using namespace clipper::obj;
using testutil::make_leaf_batch;
using testutil::random_values;

namespace {

Tensor inv_sigma_of(Tape& t, double sigma) {
  return t.constant(Shape{1}, {1.0 / sigma});
}

// Independent oracle for the cycle objective: plain-array softmax rows,
// matrix product and Frobenius distance to the identity.
double cycle_oracle(const std::vector<double>& s, int c) {
  auto row_softmax = [c](const std::vector<double>& m) {
    std::vector<double> p(m.size());
    for (int i = 0; i < c; ++i) {
      double mx = m[static_cast<std::size_t>(i) * c];
      for (int j = 1; j < c; ++j)
        mx = std::max(mx, m[static_cast<std::size_t>(i) * c + j]);
      double z = 0.0;
      for (int j = 0; j < c; ++j) {
        p[static_cast<std::size_t>(i) * c + j] =
            std::exp(m[static_cast<std::size_t>(i) * c + j] - mx);
        z += p[static_cast<std::size_t>(i) * c + j];
      }
      for (int j = 0; j < c; ++j) p[static_cast<std::size_t>(i) * c + j] /= z;
    }
    return p;
  };
  std::vector<double> st(s.size());
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j)
      st[static_cast<std::size_t>(j) * c + i] = s[static_cast<std::size_t>(i) * c + j];
  auto p1 = row_softmax(s);
  auto p2 = row_softmax(st);
  double loss = 0.0;
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) {
      double r = 0.0;
      for (int k = 0; k < c; ++k)
        r += p1[static_cast<std::size_t>(i) * c + k] *
             p2[static_cast<std::size_t>(k) * c + j];
      double target = i == j ? 1.0 : 0.0;
      loss += (r - target) * (r - target);
    }
  return loss;
}

// Batch whose matched pairs are orthonormal basis vectors.
EmbeddingBatch orthonormal_batch(Tape& t, int c, int d, bool with_ctx) {
  EmbeddingBatch batch;
  batch.B = 1;
  batch.C = c;
  batch.F = 1;
  batch.D = d;
  for (int i = 0; i < c; ++i) {
    std::vector<double> e(static_cast<std::size_t>(d), 0.0);
    e[static_cast<std::size_t>(i)] = 1.0;
    batch.v.push_back(t.constant(Shape{1, d}, e));
    batch.t.push_back(t.constant(Shape{1, d}, e));
    if (with_ctx) {
      batch.v_ctx.push_back(t.constant(Shape{1, d}, e));
      batch.t_ctx.push_back(t.constant(Shape{1, d}, e));
    }
  }
  return batch;
}

// Batch where every embedding is the same vector, so all similarities agree.
EmbeddingBatch uniform_batch(Tape& t, int b, int c, int f, int d) {
  EmbeddingBatch batch;
  batch.B = b;
  batch.C = c;
  batch.F = f;
  batch.D = d;
  std::vector<double> u(static_cast<std::size_t>(d), 0.0);
  u[0] = 1.0;
  std::vector<double> uf;
  for (int k = 0; k < f; ++k) uf.insert(uf.end(), u.begin(), u.end());
  for (int i = 0; i < b * c; ++i) {
    batch.v.push_back(t.constant(Shape{f, d}, uf));
    batch.t.push_back(t.constant(Shape{1, d}, u));
    batch.v_ctx.push_back(t.constant(Shape{f, d}, uf));
    batch.t_ctx.push_back(t.constant(Shape{1, d}, u));
  }
  return batch;
}

}  // namespace

TEST_CASE("clip_text_similarity basics") {
  Tape t;
  SUBCASE("identical unit vectors, sigma 1") {
    Tensor v = t.constant(Shape{1, 2}, {1, 0});
    Tensor tx = t.constant(Shape{1, 2}, {1, 0});
    Tensor s = clip_text_similarity(t, v, tx, inv_sigma_of(t, 1.0), true);
    CHECK(s.scalar() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("opposed frames cancel") {
    Tensor v = t.constant(Shape{2, 2}, {1, 0, -1, 0});
    Tensor tx = t.constant(Shape{1, 2}, {1, 0});
    Tensor s = clip_text_similarity(t, v, tx, inv_sigma_of(t, 1.0), true);
    CHECK(s.scalar() == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("orthogonal vectors, sigma 0.5") {
    Tensor v = t.constant(Shape{1, 2}, {1, 0});
    Tensor tx = t.constant(Shape{1, 2}, {0, 1});
    Tensor s = clip_text_similarity(t, v, tx, inv_sigma_of(t, 0.5), true);
    CHECK(s.scalar() == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("zero-norm embedding stays finite") {
    Tensor v = t.constant(Shape{1, 2}, {0, 0});
    Tensor tx = t.constant(Shape{1, 2}, {1, 0});
    Tensor s = clip_text_similarity(t, v, tx, inv_sigma_of(t, 1.0), true);
    CHECK(std::isfinite(s.scalar()));
  }
}

TEST_CASE("vtc loss closed forms") {
  SUBCASE("all similarities equal gives ln(B*C)") {
    Tape t;
    EmbeddingBatch batch = uniform_batch(t, 2, 2, 1, 4);
    Tensor loss = vtc_loss(t, batch, inv_sigma_of(t, 1.0), true);
    CHECK(loss.scalar() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("orthonormal matched pairs") {
    Tape t;
    EmbeddingBatch batch = orthonormal_batch(t, 2, 2, false);
    Tensor loss = vtc_loss(t, batch, inv_sigma_of(t, 1.0), true);
    CHECK(loss.scalar() == doctest::Approx(0.313262).epsilon(1e-6));
  }
  SUBCASE("loss is non-negative on random batches") {
    Rng rng(404);
    for (int trial = 0; trial < 5; ++trial) {
      Tape t;
      EmbeddingBatch batch = make_leaf_batch(t, rng, 2, 3, 2, 6, false);
      CHECK(vtc_loss(t, batch, inv_sigma_of(t, 0.3), true).scalar() >= 0.0);
    }
  }
  SUBCASE("single pair rejected") {
    Tape t;
    EmbeddingBatch batch = uniform_batch(t, 1, 1, 1, 4);
    CHECK_THROWS_AS(vtc_loss(t, batch, inv_sigma_of(t, 1.0), true),
                    ContractError);
  }
}

TEST_CASE("contextual contrastive loss") {
  SUBCASE("uniform similarities give ln(B*C)") {
    Tape t;
    EmbeddingBatch batch = uniform_batch(t, 2, 4, 1, 4);
    Tensor loss = vtc_ctx_loss(t, batch, inv_sigma_of(t, 1.0), true, false);
    CHECK(loss.scalar() == doctest::Approx(std::log(8.0)).epsilon(1e-12));
  }
  SUBCASE("orthonormal matched pairs, video-to-text direction") {
    Tape t;
    EmbeddingBatch batch = orthonormal_batch(t, 2, 2, true);
    Tensor loss = vtc_ctx_loss(t, batch, inv_sigma_of(t, 1.0), true, false);
    CHECK(loss.scalar() == doctest::Approx(0.313262).epsilon(1e-6));
  }
  SUBCASE("invariant under batch-video permutation and joint pair permutation") {
    Rng rng(11);
    Tape t;
    EmbeddingBatch batch = make_leaf_batch(t, rng, 3, 2, 2, 5, true);
    Tensor inv = inv_sigma_of(t, 0.4);
    const double base = vtc_ctx_loss(t, batch, inv, true, false).scalar();

    EmbeddingBatch swapped = batch;  // swap videos 0 and 2
    for (int i = 0; i < batch.C; ++i) {
      std::swap(swapped.v_ctx[swapped.flat(0, i)],
                swapped.v_ctx[swapped.flat(2, i)]);
      std::swap(swapped.t_ctx[swapped.flat(0, i)],
                swapped.t_ctx[swapped.flat(2, i)]);
    }
    CHECK(std::abs(vtc_ctx_loss(t, swapped, inv, true, false).scalar() - base)
          < 1e-12);

    EmbeddingBatch joint = batch;  // swap clips 0 and 1 of video 1 jointly
    std::swap(joint.v_ctx[joint.flat(1, 0)], joint.v_ctx[joint.flat(1, 1)]);
    std::swap(joint.t_ctx[joint.flat(1, 0)], joint.t_ctx[joint.flat(1, 1)]);
    CHECK(std::abs(vtc_ctx_loss(t, joint, inv, true, false).scalar() - base)
          < 1e-12);
  }
}

TEST_CASE("similarity bundle invariants") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    Tape t;
    const int c = 4, f = 2, d = 6;
    std::vector<Tensor> frames, texts;
    for (int i = 0; i < c; ++i) {
      frames.push_back(t.constant(Shape{f, d},
          random_values(rng, static_cast<std::size_t>(f) * d)));
      texts.push_back(t.constant(Shape{1, d},
          random_values(rng, static_cast<std::size_t>(d))));
    }
    auto sb = similarity_bundle(t, frames, texts, inv_sigma_of(t, 0.2), true);
    auto s = sb.s_v2t.value();
    auto st = sb.s_t2v.value();
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j)
        CHECK(st[static_cast<std::size_t>(j) * c + i] ==
              s[static_cast<std::size_t>(i) * c + j]);
    for (const auto& m : {sb.p_v2t, sb.p_t2v, sb.roundtrip}) {
      auto v = m.value();
      for (int i = 0; i < c; ++i) {
        double row = 0.0;
        for (int j = 0; j < c; ++j) row += v[static_cast<std::size_t>(i) * c + j];
        CHECK(std::abs(row - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("cycle loss closed forms") {
  SUBCASE("identity round trip is zero") {
    Tape t;
    EmbeddingBatch batch = orthonormal_batch(t, 4, 4, true);
    Tensor loss = cycle_loss(t, batch, inv_sigma_of(t, 1e-4), true);
    CHECK(loss.scalar() == 0.0);
  }
  SUBCASE("near-identity at sigma 0.01") {
    Tape t;
    EmbeddingBatch batch = orthonormal_batch(t, 4, 4, true);
    Tensor loss = cycle_loss(t, batch, inv_sigma_of(t, 0.01), true);
    CHECK(loss.scalar() < 1e-3);
  }
  SUBCASE("uniform similarities give C-1, against the direct oracle") {
    Tape t;
    EmbeddingBatch batch = uniform_batch(t, 2, 4, 1, 4);
    Tensor loss = cycle_loss(t, batch, inv_sigma_of(t, 1.0), true);
    CHECK(loss.scalar() == doctest::Approx(3.0).epsilon(1e-12));
    std::vector<double> s(16, 0.7);  // any constant matrix
    CHECK(cycle_oracle(s, 4) == doctest::Approx(3.0).epsilon(1e-12));
  }
  SUBCASE("matches the plain-array oracle on random matrices") {
    // drive the tape path and the oracle from the same similarity values
    Rng rng(31);
    for (int trial = 0; trial < 5; ++trial) {
      const int c = 3, d = 8;
      Tape t;
      EmbeddingBatch batch;
      batch.B = 1;
      batch.C = c;
      batch.F = 1;
      batch.D = d;
      for (int i = 0; i < c; ++i) {
        batch.v_ctx.push_back(t.constant(Shape{1, d},
            random_values(rng, static_cast<std::size_t>(d))));
        batch.t_ctx.push_back(t.constant(Shape{1, d},
            random_values(rng, static_cast<std::size_t>(d))));
        batch.v.push_back(batch.v_ctx.back());
        batch.t.push_back(batch.t_ctx.back());
      }
      Tensor inv = inv_sigma_of(t, 0.5);
      double got = cycle_loss(t, batch, inv, true).scalar();
      auto sb = similarity_bundle(t, {batch.v_ctx.data(), batch.v_ctx.size()},
                                  {batch.t_ctx.data(), batch.t_ctx.size()},
                                  inv, true);
      double want = cycle_oracle(sb.s_v2t.value_copy(), c);
      CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("ftm labels") {
  auto labels = build_ftm_labels(2, 2);
  CHECK(labels.rows[1] == std::vector<double>{0, 0, 1, 1});
  for (const auto& row : labels.rows) {
    double s = 0.0;
    for (double x : row) s += x;
    CHECK(s == 2.0);
  }
  // stacked rows are a block-identity: every column sums to one
  auto wide = build_ftm_labels(3, 4);
  for (int col = 0; col < 12; ++col) {
    double s = 0.0;
    for (const auto& row : wide.rows) s += row[static_cast<std::size_t>(col)];
    CHECK(s == 1.0);
  }
}

TEST_CASE("bce closed forms") {
  Tape t;
  SUBCASE("all-half predictions give ln 2") {
    Tensor p = t.constant(Shape{4, 1}, 0.5);
    Tensor m = t.constant(Shape{4, 1}, {1, 0, 1, 0});
    CHECK(bce_mean(t, p, m).scalar() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("perfect predictions are ~1e-7 scale") {
    Tensor p = t.constant(Shape{4, 1}, {1, 0, 1, 0});
    Tensor m = t.constant(Shape{4, 1}, {1, 0, 1, 0});
    double loss = bce_mean(t, p, m).scalar();
    CHECK(loss < 1e-6);
    CHECK(loss > 0.0);
  }
  SUBCASE("hand-computed two-slot case") {
    Tensor p = t.constant(Shape{2, 1}, {0.8, 0.2});
    Tensor m = t.constant(Shape{2, 1}, {1, 0});
    CHECK(bce_mean(t, p, m).scalar() ==
          doctest::Approx(-std::log(0.8)).epsilon(1e-12));
  }
}

TEST_CASE("ftm loss through the head") {
  ParamStore ps;
  Rng rng(41);
  const int c = 2, f = 1, d = 6;
  MlpHead head(ps, rng, "ftm", d, 8, 1);
  auto labels = build_ftm_labels(c, f);

  SUBCASE("zero head gives maximal-entropy ln 2") {
    for (auto& p : ps.all())
      for (auto& v : p.value) v = 0.0;
    Tape t;
    std::vector<Tensor> fused;
    for (int i = 0; i < c; ++i)
      fused.push_back(t.constant(Shape{c * f, d},
          random_values(rng, static_cast<std::size_t>(c) * f * d)));
    Tensor loss = ftm_loss(t, fused, head, labels);
    CHECK(loss.scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("label length mismatch rejected") {
    Tape t;
    std::vector<Tensor> fused = {t.constant(Shape{3, d}, 0.1)};
    CHECK_THROWS_AS(ftm_loss(t, fused, head, labels), ContractError);
  }
  SUBCASE("gradcheck through head and features") {
    Rng data(42);
    auto feat = random_values(data, static_cast<std::size_t>(c) * f * d);
    testutil::gradcheck_params(ps, [&](Tape& t) {
      std::vector<Tensor> fused = {t.constant(Shape{c * f, d}, feat),
                                   t.constant(Shape{c * f, d}, feat)};
      return ftm_loss(t, fused, head, labels);
    }, 1e-5);
  }
}

TEST_CASE("cop loss") {
  ParamStore ps;
  Rng rng(51);
  const int c = 8, fd = 12, d = 6;
  MlpHead clip_head(ps, rng, "cop_clip", fd, 10, c);
  MlpHead text_head(ps, rng, "cop_text", d, 10, c);

  SUBCASE("uniform logits give ln C") {
    for (auto& p : ps.all())
      for (auto& v : p.value) v = 0.0;
    Tape t;
    std::vector<Tensor> clip_reps = {t.constant(Shape{c, fd},
        random_values(rng, static_cast<std::size_t>(c) * fd))};
    std::vector<Tensor> text_reps = {t.constant(Shape{c, d},
        random_values(rng, static_cast<std::size_t>(c) * d))};
    CopTargets targets;
    targets.clip_perm = {{0, 1, 2, 3, 4, 5, 6, 7}};
    targets.text_perm = {{7, 6, 5, 4, 3, 2, 1, 0}};
    Tensor loss = cop_loss(t, clip_reps, text_reps, targets, clip_head,
                           text_head);
    CHECK(loss.scalar() == doctest::Approx(std::log(8.0)).epsilon(1e-12));
  }
  SUBCASE("one-hot-correct logits are near zero loss") {
    Tape t;
    std::vector<double> logits(16, 0.0);
    logits[0 * 4 + 2] = 20.0;
    logits[1 * 4 + 0] = 20.0;
    logits[2 * 4 + 3] = 20.0;
    logits[3 * 4 + 1] = 20.0;
    std::vector<int> targets = {2, 0, 3, 1};
    Tensor ce = ce_rows(t, t.constant(Shape{4, 4}, logits), targets);
    CHECK(ce.scalar() < 1e-6);
  }
  SUBCASE("joint slot and target permutation leaves the loss unchanged") {
    Rng data(52);
    const int cc = 4;
    auto clip_vals = random_values(data, static_cast<std::size_t>(cc) * fd);
    auto text_vals = random_values(data, static_cast<std::size_t>(cc) * d);
    ParamStore ps4;
    Rng r4(53);
    MlpHead ch(ps4, r4, "ch", fd, 10, cc);
    MlpHead th(ps4, r4, "th", d, 10, cc);
    testutil::randomize_params(ps4);

    auto eval = [&](const std::vector<int>& order) {
      Tape t;
      std::vector<double> cv(clip_vals.size()), tv(text_vals.size());
      std::vector<int> ct(cc), tt(cc);
      for (int j = 0; j < cc; ++j) {
        int src = order[static_cast<std::size_t>(j)];
        std::copy_n(clip_vals.begin() + src * fd, fd, cv.begin() + j * fd);
        std::copy_n(text_vals.begin() + src * d, d, tv.begin() + j * d);
        ct[static_cast<std::size_t>(j)] = src % cc;
        tt[static_cast<std::size_t>(j)] = (src + 1) % cc;
      }
      CopTargets targets;
      targets.clip_perm = {ct};
      targets.text_perm = {tt};
      std::vector<Tensor> cr = {t.constant(Shape{cc, fd}, cv)};
      std::vector<Tensor> tr = {t.constant(Shape{cc, d}, tv)};
      return cop_loss(t, cr, tr, targets, ch, th).scalar();
    };
    double a = eval({0, 1, 2, 3});
    double b = eval({2, 0, 3, 1});
    CHECK(std::abs(a - b) < 1e-12);
  }
  SUBCASE("non-permutation targets rejected") {
    Tape t;
    std::vector<Tensor> clip_reps = {t.constant(Shape{c, fd}, 0.1)};
    std::vector<Tensor> text_reps = {t.constant(Shape{c, d}, 0.1)};
    CopTargets targets;
    targets.clip_perm = {{0, 0, 2, 3, 4, 5, 6, 7}};
    targets.text_perm = {{0, 1, 2, 3, 4, 5, 6, 7}};
    CHECK_THROWS_AS(
        cop_loss(t, clip_reps, text_reps, targets, clip_head, text_head),
        ContractError);
  }
}

TEST_CASE("total loss aggregation") {
  Tape t;
  SUBCASE("single component") {
    LossTerms terms;
    terms.vtc = t.constant(Shape{1}, {0.7});
    auto [total, bundle] = total_loss(t, terms);
    CHECK(total.scalar() == 0.7);
    CHECK(bundle.vtc == 0.7);
    CHECK_FALSE(bundle.cop.has_value());
  }
  SUBCASE("five components of one sum to five") {
    LossTerms terms;
    terms.vtc = t.constant(Shape{1}, {1.0});
    terms.vtc_ctx = t.constant(Shape{1}, {1.0});
    terms.cycle = t.constant(Shape{1}, {1.0});
    terms.ftm = t.constant(Shape{1}, {1.0});
    terms.cop = t.constant(Shape{1}, {1.0});
    auto [total, bundle] = total_loss(t, terms);
    CHECK(total.scalar() == 5.0);
    CHECK(bundle.total == 5.0);
  }
  SUBCASE("no components rejected") {
    LossTerms terms;
    CHECK_THROWS_AS(total_loss(t, terms), ConfigError);
  }
}

TEST_CASE("loss gradients match central differences") {
  // embeddings and temperature as one flat leaf
  const int B = 2, C = 3, F = 2, D = 8;
  const std::size_t n_v = static_cast<std::size_t>(B) * C * F * D;
  const std::size_t n_t = static_cast<std::size_t>(B) * C * D;
  const std::size_t total = n_v + n_t + 1;

  auto build_batch = [&](Tape&, Tensor leaf, bool as_ctx) {
    EmbeddingBatch batch;
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
  };

  auto check_loss = [&](const char* name, bool as_ctx, auto loss_fn) {
    Rng rng(1234);
    auto x = random_values(rng, total);
    x[total - 1] = std::log(0.5);  // temperature free parameter
    auto fn = [&](std::span<const double> xin,
                  std::vector<double>* grad) -> double {
      Tape t;
      Tensor leaf = t.leaf(Shape{static_cast<int>(total)},
                           std::vector<double>(xin.begin(), xin.end()));
      EmbeddingBatch batch = build_batch(t, leaf, as_ctx);
      Tensor inv = ad::exp(scale(
          reshape(slice(leaf, 0, static_cast<int>(total) - 1, 1), Shape{1}),
          -1.0));
      Tensor loss = loss_fn(t, batch, inv);
      if (grad) {
        t.backward(loss);
        auto g = leaf.grad();
        grad->assign(g.begin(), g.end());
      }
      return loss.scalar();
    };
    auto rep = grad_check(fn, x, 1e-5);
    INFO(name << " rel err " << rep.max_rel_err);
    CHECK(rep.max_rel_err < 1e-5);
  };

  check_loss("vtc", false, [](Tape& t, const EmbeddingBatch& b, Tensor inv) {
    return vtc_loss(t, b, inv, true);
  });
  check_loss("vtc_ctx", true, [](Tape& t, const EmbeddingBatch& b, Tensor inv) {
    return vtc_ctx_loss(t, b, inv, true, false);
  });
  check_loss("cycle", true, [](Tape& t, const EmbeddingBatch& b, Tensor inv) {
    return cycle_loss(t, b, inv, true);
  });
}
