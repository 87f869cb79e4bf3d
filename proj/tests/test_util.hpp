#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "clipper/gradcheck.hpp"
#include "clipper/model.hpp"
#include "doctest.h"

namespace testutil {

inline std::vector<double> random_values(clipper::Rng& rng, std::size_t n,
                                         double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline double max_abs_diff(std::span<const double> a,
                           std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Move parameters to a generic point: at the 0.02-scale init many attention
// gradients sit below the 1e-8 error floor where central differences are
// pure roundoff.
inline void randomize_params(clipper::ParamStore& ps,
                             std::uint64_t salt = 0xabcdull) {
  for (auto& p : ps.all()) {
    clipper::Rng jitter(std::hash<std::string>{}(p.name) ^ salt);
    const bool is_gain = p.name.ends_with(".gain");
    for (auto& v : p.value)
      v = (is_gain ? 1.0 : 0.0) + jitter.uniform(-0.4, 0.4);
  }
}

// FD check of a scalar probe loss w.r.t. every parameter in the store,
// probing a bounded number of coordinates per parameter.
inline void gradcheck_params(
    clipper::ParamStore& ps,
    const std::function<clipper::ad::Tensor(clipper::ad::Tape&)>& build_loss,
    double tol, int coords_per_param = 12, bool randomize = true) {
  using clipper::ad::Tape;
  using clipper::ad::Tensor;
  if (randomize) randomize_params(ps);
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
    clipper::Rng pick(std::hash<std::string>{}(p.name));
    std::vector<std::size_t> coords;
    for (int i = 0; i < coords_per_param &&
                    coords.size() < p.value.size(); ++i)
      coords.push_back(static_cast<std::size_t>(
          pick.uniform_int(static_cast<int>(p.value.size()))));
    auto rep = clipper::ad::grad_check(fn, p.value, 1e-5, &coords);
    INFO("param " << p.name << " rel err " << rep.max_rel_err);
    CHECK(rep.max_rel_err < tol);
  }
}

// Hand-built embedding batch of trainable leaves (no encoders involved).
inline clipper::nn::EmbeddingBatch make_leaf_batch(
    clipper::ad::Tape& t, clipper::Rng& rng, int B, int C, int F, int D,
    bool with_ctx) {
  using clipper::ad::Shape;
  clipper::nn::EmbeddingBatch batch;
  batch.B = B;
  batch.C = C;
  batch.F = F;
  batch.D = D;
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < C; ++i) {
      batch.v.push_back(t.leaf(Shape{F, D}, random_values(rng,
          static_cast<std::size_t>(F) * D)));
      batch.t.push_back(t.leaf(Shape{1, D}, random_values(rng,
          static_cast<std::size_t>(D))));
      if (with_ctx) {
        batch.v_ctx.push_back(t.leaf(Shape{F, D}, random_values(rng,
            static_cast<std::size_t>(F) * D)));
        batch.t_ctx.push_back(t.leaf(Shape{1, D}, random_values(rng,
            static_cast<std::size_t>(D))));
      }
    }
  }
  return batch;
}

}  // namespace testutil
