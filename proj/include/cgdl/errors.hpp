#pragma once

#include <stdexcept>
#include <string>

namespace cgdl {

// Error taxonomy shared by the library and the CLI. The CLI maps each class
// onto a stable process exit code (see tools/).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Shape/contract violations inside the math layers (bad dimensions, nonpositive
// variance fed to a merge, out-of-range class index, non-scalar loss ...).
struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or truncated on-disk data (IDX streams, checkpoint containers).
struct format_error : std::runtime_error {
    explicit format_error(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem trouble: missing paths, unwritable outputs.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values where finite math was promised (training abort).
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

// Detector calibration impossibilities (class with too few usable samples,
// empty error list).
struct calibration_error : std::runtime_error {
    explicit calibration_error(const std::string& what) : std::runtime_error(what) {}
};

// Checkpoint container/version mismatches.
struct checkpoint_error : std::runtime_error {
    explicit checkpoint_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cgdl
