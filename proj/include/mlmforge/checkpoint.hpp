#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mlmforge/encoder.hpp"

namespace mlmforge {

// Everything needed to resume training or run inference.
struct Model {
    ModelConfig config;
    std::string vocab_hash;
    ParameterStore<float> params;
    std::vector<std::string> labels;  // classifier label names, empty without a head

    bool operator==(const Model&) const = default;
};

inline constexpr std::string_view kCheckpointMagic = "MLMFORGE";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
    std::string name;
    std::string dtype;
    Shape shape;
    std::uint64_t offset = 0;  // bytes from the start of the blob
    std::uint64_t length = 0;  // bytes
};

// Layout: magic, u32 version, u64 manifest length, JSON manifest, blob of
// little-endian float32 payloads. Each parameter contributes its value and
// its two Adam moments ("<name>@adam_m", "<name>@adam_v").
std::string serialize_checkpoint(const Model& model);
Model parse_checkpoint(std::string_view bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace mlmforge
