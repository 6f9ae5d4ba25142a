#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cade/evaluation.hpp"
#include "cade/trainer.hpp"

namespace cade {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Everything needed to continue a sequential run after a domain boundary.
struct Checkpoint {
  std::string config_json;  // caller-supplied echo of the experiment config
  ModelState state;
  AucMatrix auc;
};

std::vector<char> encode_checkpoint(const std::string& config_json, const ModelState& state,
                                    const AucMatrix& auc);
// `cfg` and `feature_dim` rebuild the architecture; every stored tensor must
// match it by identifier and shape, otherwise FormatError.
Checkpoint decode_checkpoint(const std::vector<char>& bytes, const TrainConfig& cfg,
                             std::size_t feature_dim, const std::string& source = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const std::string& config_json,
                     const ModelState& state, const AucMatrix& auc);
Checkpoint load_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg,
                           std::size_t feature_dim);

}  // namespace cade
