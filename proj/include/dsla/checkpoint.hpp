#pragma once

#include <filesystem>

#include "dsla/model.hpp"

namespace dsla {

// Self-describing JSON checkpoints: explicit shapes, layer kinds, gamma,
// and a header carrying the chained-fine-tuning stage and conversion mask.
struct CheckpointHeader {
    int stage = 0;                      // committed conversions
    std::vector<int> conversion_mask;   // 1 where a replacement exists
    std::string config_hash;
    std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const ToyModel& m,
                     const CheckpointHeader& header);

struct LoadedCheckpoint {
    ToyModel model;
    CheckpointHeader header;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dsla
