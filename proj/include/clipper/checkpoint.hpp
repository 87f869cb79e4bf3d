#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "clipper/optimizer.hpp"
#include "clipper/params.hpp"
#include "clipper/rng.hpp"

namespace clipper::train {

constexpr std::uint32_t kCheckpointVersion = 1;

// Versioned binary: header {magic, version, param count}, then per array
// {name length, name, rank, extents, little-endian f64 values}; optimizer
// arrays in the same layout; config echo and rng state as a trailing text
// block.
void save_checkpoint(const std::filesystem::path& path,
                     const ParamStore& params, const AdamW& opt,
                     const Rng& run_rng, int next_epoch, long global_step,
                     const std::string& config_echo);

struct LoadedCheckpoint {
  std::vector<ad::Parameter> params;
  std::vector<std::pair<std::string, std::vector<double>>> opt_arrays;
  long opt_step = 0;
  int next_epoch = 0;
  long global_step = 0;
  std::string rng_state;
  std::string config_echo;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Copies loaded arrays into an existing store/optimizer; names and shapes
// must match exactly.
void apply_checkpoint(const LoadedCheckpoint& ckpt, ParamStore& params,
                      AdamW& opt);

}  // namespace clipper::train
