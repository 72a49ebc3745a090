#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "loraquant/matrix.hpp"

namespace loraquant {

// Adapter container file (.qla) layout:
//   [0, 8)     little-endian u64 = JSON header byte length N
//   [8, 8+N)   UTF-8 JSON header
//   [8+N, ...) packed tensor data, row-major, little-endian
// The header maps tensor name -> {"dtype": "F16"|"F32", "shape": [rows, cols],
// "data_offsets": [begin, end]} with offsets relative to byte 8+N. The
// reserved key "__metadata__" holds a string-to-string map. Tensor ranges are
// contiguous and non-overlapping in header declaration order.

enum class StorageDtype { f16, f32 };

// One low-rank update: delta = B * A with B (m x r) and A (r x n), r >= 1 and
// r <= min(m, n).
struct LoraAdapter {
    std::string layer_name;
    Matrix B;
    Matrix A;

    int64_t m() const { return B.rows; }
    int64_t n() const { return A.cols; }
    int64_t rank() const { return B.cols; }
};

// Validates the shape contract above; throws std::invalid_argument otherwise.
void validate_adapter(const LoraAdapter &adapter);

struct AdapterContainer {
    std::vector<LoraAdapter> adapters;
    std::map<std::string, std::string> metadata;

    // Validates the adapter and rejects duplicate layer names.
    void add(LoraAdapter adapter);
    const LoraAdapter *find(const std::string &layer_name) const;
};

// Raw tensor-level view of a container file, for files that do not hold B/A
// pairs (for example dense delta exports).
struct TensorFile {
    // Sorted by tensor name; serialisation declares tensors in this order.
    std::vector<std::pair<std::string, Matrix>> tensors;
    std::map<std::string, std::string> metadata;
};

TensorFile read_tensor_file(const std::filesystem::path &path);
void write_tensor_file(const TensorFile &file, const std::filesystem::path &path,
                       StorageDtype dtype);

// Adapter-level wrappers. Reading pairs "<layer>.lora_B" with
// "<layer>.lora_A" and rejects unpaired or mis-shaped tensors; adapters come
// back sorted by layer name.
AdapterContainer read_container(const std::filesystem::path &path);
void write_container(const AdapterContainer &container, const std::filesystem::path &path,
                     StorageDtype dtype);

// The container's adapters sorted by layer name (the container keeps them
// sorted on read; this re-sorts programmatically built ones).
std::vector<LoraAdapter> collect_lora_pairs(const AdapterContainer &container);

} // namespace loraquant
