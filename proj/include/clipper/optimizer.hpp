#pragma once

#include <map>
#include <string>
#include <vector>

#include "clipper/config.hpp"
#include "clipper/params.hpp"

namespace clipper::train {

// base_lr * 0.5 * (1 + cos(pi * step / total_steps))
double cosine_lr(long step, long total_steps, double base_lr);

// AdamW with decoupled weight decay. Only parameters mounted on the tape are
// touched: a parameter outside the recorded graph keeps its values and
// receives no decay.
class AdamW {
 public:
  struct Slot {
    std::vector<double> m, v;
  };

  AdamW() = default;
  explicit AdamW(OptimConfig cfg) : cfg_(cfg) {}

  void step(ParamStore& params, const ad::Tape& tape, double lr_now);

  long step_count() const { return step_; }
  void set_step_count(long s) { step_ = s; }
  const OptimConfig& config() const { return cfg_; }
  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }

 private:
  OptimConfig cfg_;
  long step_ = 0;
  std::map<std::string, Slot> slots_;
};

}  // namespace clipper::train
