#pragma once

#include <string>
#include <vector>

#include "clipper/objectives.hpp"

namespace clipper::train {

struct LossCheckRow {
  std::string name;
  double max_rel_err = 0.0;
};

struct LossCheckOptions {
  int batch_videos = 2;  // B
  int clips = 3;         // C
  int frames = 2;        // F
  int dim = 8;           // D
  int seeds = 5;
  double step = 1e-5;
  bool corrupt_backward = false;  // negative control for the harness
};

// Central-finite-difference checks of each enabled loss along its full
// differentiable path: embeddings and temperature for the contrastive and
// cycle objectives, plus the fusion/encoder weights and heads for the
// matching and order objectives.
std::vector<LossCheckRow> run_loss_gradchecks(const obj::Toggles& toggles,
                                              const LossCheckOptions& opts);

}  // namespace clipper::train
