#include "clipper/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "clipper/error.hpp"

namespace clipper::train {

double cosine_lr(long step, long total_steps, double base_lr) {
  if (total_steps <= 0) throw ConfigError("cosine_lr: total_steps must be > 0");
  if (step < 0 || step > total_steps)
    throw ContractError("cosine_lr: step outside [0, total_steps]");
  return base_lr * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                         static_cast<double>(total_steps)));
}

void AdamW::step(ParamStore& params, const ad::Tape& tape, double lr_now) {
  // gather active parameters in store order
  std::vector<ad::Parameter*> active;
  for (auto& p : params.all())
    if (tape.uses(p)) active.push_back(&p);

  for (ad::Parameter* p : active) {
    auto g = tape.grad_of(*p);
    for (double x : g)
      if (!std::isfinite(x))
        throw NumericError("non-finite gradient for parameter '" + p->name +
                           "'");
  }

  double clip_factor = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    for (ad::Parameter* p : active)
      for (double x : tape.grad_of(*p)) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) clip_factor = cfg_.grad_clip / norm;
  }

  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));

  for (ad::Parameter* p : active) {
    auto g = tape.grad_of(*p);
    Slot& slot = slots_[p->name];
    if (slot.m.empty()) {
      slot.m.assign(p->value.size(), 0.0);
      slot.v.assign(p->value.size(), 0.0);
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double gi = g[i] * clip_factor;
      slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * gi;
      slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      const double old = p->value[i];
      p->value[i] = old - lr_now * mhat / (std::sqrt(vhat) + cfg_.eps) -
                    lr_now * cfg_.weight_decay * old;
    }
  }
}

}  // namespace clipper::train
