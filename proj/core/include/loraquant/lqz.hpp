#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "loraquant/pipeline.hpp"

namespace loraquant {

// .lqz container: a little-endian u64 header length, a UTF-8 JSON header and
// a packed payload, in that order. The header holds {"config": {...},
// "layers": {<name>: {m, n, r, h, <matrix>...}}}. Layers are sorted by name;
// each layer lists its stored matrices in the fixed order B_high, A_high,
// B_low, A_low (absent ones omitted); each matrix names byte ranges for its
// sections in the order codes, scales, zero_points. Ranges are [begin, end)
// relative to the payload start and must tile it contiguously in declaration
// order. Scales are binary16 words stored little-endian; zero points are
// packed at the matrix's code width. The writer is deterministic: equal
// inputs produce identical bytes.
struct LqzFile {
    QuantConfig config;
    std::vector<QuantizedAdapter> adapters; // sorted by layer name
};

void write_lqz(const std::filesystem::path &path, std::span<const QuantizedAdapter> adapters,
               const QuantConfig &config);

// Throws std::runtime_error on any malformed or truncated input.
LqzFile read_lqz(const std::filesystem::path &path);

// The header's "config" object as a serialized JSON string (also usable on
// its own, e.g. inside run reports).
std::string quant_config_to_json_string(const QuantConfig &config);

} // namespace loraquant
