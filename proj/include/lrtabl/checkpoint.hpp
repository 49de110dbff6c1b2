#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "lrtabl/training.hpp"

namespace lrtabl {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: a text header (magic, version, spec, spec digest, payload size and
// CRC-32) terminated by a blank line, then a little-endian binary payload
// holding the spec, float32 parameters, optimizer moments, RNG state and
// training history.
std::string serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32_of(std::string_view bytes);

}  // namespace lrtabl
