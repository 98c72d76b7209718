#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgdl/detector.hpp"
#include "cgdl/ladder.hpp"

namespace cgdl {

// State stored alongside the model weights.
struct CheckpointMeta {
    std::uint64_t seed = 0;       // model init seed (the graph is rebuilt from it)
    std::size_t epoch = 0;        // last completed training epoch
    std::string run_config_json;  // resolved tool configuration, verbatim JSON ("" if none)
    bool has_detector = false;    // thresholds/gaussians below are meaningful
    DetectorThresholds thresholds;
    std::vector<ClassGaussian> gaussians;
};

// Binary container: 8-byte magic "CGDLCKPT", little-endian u32 format
// version, little-endian u64 header length, a JSON header (model config,
// seed, epoch, parameter manifest, detector manifest, tool version), then
// raw little-endian double payloads in manifest order. Saving the same
// state twice produces byte-identical files, and loading restores every
// parameter bit-exactly. Throws checkpoint_error on malformed input and
// io_error on filesystem failures.
void save_checkpoint(const std::string& path, const LadderModel& model,
                     const CheckpointMeta& meta);
LadderModel load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

}  // namespace cgdl
