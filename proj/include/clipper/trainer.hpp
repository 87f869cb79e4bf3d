#pragma once

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "clipper/checkpoint.hpp"
#include "clipper/config.hpp"
#include "clipper/objectives.hpp"
#include "clipper/sampler.hpp"

namespace clipper::train {

// Shuffled-row view of a matrix: row j of the result is row perm[j].
ad::Tensor shuffle_rows(ad::Tensor m, std::span<const int> perm);

// Forward pass of every enabled objective over one batch. cop_targets is
// required iff the order-prediction objective is on.
obj::LossTerms compute_losses(const nn::Model& model,
                              const obj::Toggles& toggles, ad::Tape& tape,
                              const nn::BatchInput& input,
                              const obj::CopTargets* cop_targets);

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path log_path;
  int epochs_run = 0;
  long global_steps = 0;
  int widenings = 0;
  std::vector<std::pair<int, obj::LossBundle>> step_losses;  // (epoch, losses)
};

// Full optimization loop: progressive sampling, AdamW with a cosine
// schedule, per-step CSV logging, one checkpoint per epoch. Resuming from a
// checkpoint replays the uninterrupted run exactly.
TrainResult run_training(const Config& cfg, const data::Corpus& corpus,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume = {});

}  // namespace clipper::train
