#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlab {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// File is not a checkpoint or was cut short.
struct CheckpointCorruptError : CheckpointError {
    using CheckpointError::CheckpointError;
};
// Recognized file with an unsupported format version.
struct CheckpointVersionError : CheckpointError {
    using CheckpointError::CheckpointError;
};
// Stored array does not match what the consumer expects.
struct CheckpointShapeError : CheckpointError {
    using CheckpointError::CheckpointError;
};

struct CkptArray {
    std::vector<uint64_t> shape;
    std::vector<float> data;  // stored little-endian 32-bit

    uint64_t numel() const {
        uint64_t n = 1;
        for (uint64_t e : shape) n *= e;
        return n;
    }
};

struct RngState {
    uint64_t key = 0;
    uint64_t counter = 0;
};

// On-disk training state: named float32 arrays with shape headers, the config
// snapshot, optimizer hyperparameters, and RNG stream states. Maps keep the
// byte layout deterministic, so save -> load -> save is byte-identical. load()
// either returns a complete object or throws; no partial state escapes.
struct Checkpoint {
    static constexpr uint32_t kVersion = 1;

    std::string kind;         // "base" or "finetune"
    std::string config_json;  // canonical config dump
    std::map<std::string, CkptArray> arrays;
    std::string optimizer_json;  // "" when no optimizer state is stored
    std::map<std::string, RngState> rng_streams;

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

    const CkptArray& require(const std::string& name,
                             const std::vector<uint64_t>& expect_shape) const;
};

}  // namespace vlab
