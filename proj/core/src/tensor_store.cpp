#include "loraquant/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "loraquant/fp16.hpp"

namespace loraquant {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr const char *kSuffixB = ".lora_B";
constexpr const char *kSuffixA = ".lora_A";
constexpr uint64_t kMaxHeaderBytes = 1ull << 30;

size_t dtype_size(StorageDtype dtype) { return dtype == StorageDtype::f16 ? 2 : 4; }

const char *dtype_name(StorageDtype dtype) { return dtype == StorageDtype::f16 ? "F16" : "F32"; }

std::vector<uint8_t> read_all_bytes(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    in.seekg(0, std::ios::end);
    const std::streamoff size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    if (size > 0) in.read(reinterpret_cast<char *>(bytes.data()), size);
    if (!in) throw std::runtime_error("cannot read file: " + path.string());
    return bytes;
}

uint64_t load_le_u64(const uint8_t *p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

void store_le_u64(uint64_t v, uint8_t *p) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<uint8_t>(v >> (8 * i));
}

void append_tensor_data(const Matrix &m, StorageDtype dtype, std::vector<uint8_t> &out) {
    if (dtype == StorageDtype::f32) {
        for (float v : m.values) {
            const uint32_t bits = std::bit_cast<uint32_t>(v);
            out.push_back(static_cast<uint8_t>(bits));
            out.push_back(static_cast<uint8_t>(bits >> 8));
            out.push_back(static_cast<uint8_t>(bits >> 16));
            out.push_back(static_cast<uint8_t>(bits >> 24));
        }
    } else {
        for (float v : m.values) {
            const uint16_t bits = fp16_from_float(v);
            out.push_back(static_cast<uint8_t>(bits));
            out.push_back(static_cast<uint8_t>(bits >> 8));
        }
    }
}

Matrix decode_tensor_data(const uint8_t *p, int64_t rows, int64_t cols, StorageDtype dtype,
                          const std::string &name) {
    Matrix m(rows, cols);
    const size_t count = m.values.size();
    if (dtype == StorageDtype::f32) {
        for (size_t i = 0; i < count; ++i) {
            uint32_t bits = static_cast<uint32_t>(p[4 * i]) |
                            (static_cast<uint32_t>(p[4 * i + 1]) << 8) |
                            (static_cast<uint32_t>(p[4 * i + 2]) << 16) |
                            (static_cast<uint32_t>(p[4 * i + 3]) << 24);
            m.values[i] = std::bit_cast<float>(bits);
        }
    } else {
        for (size_t i = 0; i < count; ++i) {
            const uint16_t bits =
                static_cast<uint16_t>(p[2 * i] | (static_cast<uint16_t>(p[2 * i + 1]) << 8));
            m.values[i] = fp16_to_float(bits);
        }
    }
    for (float v : m.values) {
        if (!std::isfinite(v)) {
            throw std::runtime_error("tensor '" + name + "': non-finite value");
        }
    }
    return m;
}

} // namespace

void validate_adapter(const LoraAdapter &adapter) {
    const int64_t m = adapter.B.rows, r = adapter.B.cols;
    const int64_t r2 = adapter.A.rows, n = adapter.A.cols;
    if (m < 1 || n < 1 || r < 1) {
        throw std::invalid_argument("adapter '" + adapter.layer_name + "': empty factor");
    }
    if (r != r2) {
        throw std::invalid_argument("adapter '" + adapter.layer_name +
                                    "': B column count differs from A row count");
    }
    if (r > std::min(m, n)) {
        throw std::invalid_argument("adapter '" + adapter.layer_name +
                                    "': rank exceeds min(m, n)");
    }
    require_finite(adapter.B, "adapter '" + adapter.layer_name + "' B");
    require_finite(adapter.A, "adapter '" + adapter.layer_name + "' A");
}

void AdapterContainer::add(LoraAdapter adapter) {
    validate_adapter(adapter);
    if (find(adapter.layer_name) != nullptr) {
        throw std::invalid_argument("duplicate layer name: " + adapter.layer_name);
    }
    adapters.push_back(std::move(adapter));
}

const LoraAdapter *AdapterContainer::find(const std::string &layer_name) const {
    for (const auto &a : adapters) {
        if (a.layer_name == layer_name) return &a;
    }
    return nullptr;
}

TensorFile read_tensor_file(const std::filesystem::path &path) {
    const std::vector<uint8_t> bytes = read_all_bytes(path);
    if (bytes.size() < 8) throw std::runtime_error("malformed header: file shorter than 8 bytes");
    const uint64_t header_len = load_le_u64(bytes.data());
    if (header_len > kMaxHeaderBytes || 8 + header_len > bytes.size()) {
        throw std::runtime_error("malformed header: header length out of range");
    }

    ordered_json header;
    try {
        header = ordered_json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
    } catch (const std::exception &e) {
        throw std::runtime_error(std::string("malformed header: ") + e.what());
    }
    if (!header.is_object()) throw std::runtime_error("malformed header: not a JSON object");

    const uint8_t *data = bytes.data() + 8 + header_len;
    const uint64_t data_size = bytes.size() - 8 - header_len;

    TensorFile file;
    uint64_t expected_begin = 0;
    for (const auto &[name, entry] : header.items()) {
        if (name == "__metadata__") {
            if (!entry.is_object()) throw std::runtime_error("malformed header: bad __metadata__");
            for (const auto &[k, v] : entry.items()) {
                if (!v.is_string()) throw std::runtime_error("malformed header: bad __metadata__");
                file.metadata[k] = v.get<std::string>();
            }
            continue;
        }
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets")) {
            throw std::runtime_error("malformed header: incomplete tensor entry '" + name + "'");
        }
        const std::string dtype_str = entry["dtype"].get<std::string>();
        StorageDtype dtype;
        if (dtype_str == "F32") {
            dtype = StorageDtype::f32;
        } else if (dtype_str == "F16") {
            dtype = StorageDtype::f16;
        } else {
            throw std::runtime_error("unsupported dtype '" + dtype_str + "' for tensor '" + name +
                                     "'");
        }
        const auto &shape = entry["shape"];
        if (!shape.is_array() || shape.size() != 2) {
            throw std::runtime_error("malformed header: tensor '" + name + "' is not 2-D");
        }
        const int64_t rows = shape[0].get<int64_t>();
        const int64_t cols = shape[1].get<int64_t>();
        if (rows < 1 || cols < 1) {
            throw std::runtime_error("malformed header: tensor '" + name + "' has empty shape");
        }
        const auto &offsets = entry["data_offsets"];
        if (!offsets.is_array() || offsets.size() != 2) {
            throw std::runtime_error("malformed header: tensor '" + name + "' bad data_offsets");
        }
        const uint64_t begin = offsets[0].get<uint64_t>();
        const uint64_t end = offsets[1].get<uint64_t>();
        const uint64_t want =
            static_cast<uint64_t>(rows) * static_cast<uint64_t>(cols) * dtype_size(dtype);
        if (begin != expected_begin || end < begin || end - begin != want || end > data_size) {
            throw std::runtime_error("malformed header: tensor '" + name +
                                     "' data range is not contiguous");
        }
        expected_begin = end;
        file.tensors.emplace_back(name, decode_tensor_data(data + begin, rows, cols, dtype, name));
    }
    if (expected_begin != data_size) {
        throw std::runtime_error("malformed header: trailing bytes after last tensor");
    }

    std::sort(file.tensors.begin(), file.tensors.end(),
              [](const auto &a, const auto &b) { return a.first < b.first; });
    for (size_t i = 1; i < file.tensors.size(); ++i) {
        if (file.tensors[i].first == file.tensors[i - 1].first) {
            throw std::runtime_error("duplicate tensor name: " + file.tensors[i].first);
        }
    }
    return file;
}

void write_tensor_file(const TensorFile &file, const std::filesystem::path &path,
                       StorageDtype dtype) {
    std::vector<std::pair<std::string, const Matrix *>> order;
    order.reserve(file.tensors.size());
    for (const auto &[name, m] : file.tensors) {
        if (m.rows < 1 || m.cols < 1) {
            throw std::invalid_argument("tensor '" + name + "': empty shape");
        }
        require_finite(m, "tensor '" + name + "'");
        order.emplace_back(name, &m);
    }
    std::sort(order.begin(), order.end(),
              [](const auto &a, const auto &b) { return a.first < b.first; });
    for (size_t i = 1; i < order.size(); ++i) {
        if (order[i].first == order[i - 1].first) {
            throw std::invalid_argument("duplicate tensor name: " + order[i].first);
        }
    }

    ordered_json header = ordered_json::object();
    ordered_json meta = ordered_json::object();
    for (const auto &[k, v] : file.metadata) meta[k] = v;
    header["__metadata__"] = std::move(meta);

    std::vector<uint8_t> data;
    for (const auto &[name, m] : order) {
        const uint64_t begin = data.size();
        append_tensor_data(*m, dtype, data);
        ordered_json entry = ordered_json::object();
        entry["dtype"] = dtype_name(dtype);
        entry["shape"] = {m->rows, m->cols};
        entry["data_offsets"] = {begin, static_cast<uint64_t>(data.size())};
        header[name] = std::move(entry);
    }

    const std::string header_str = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path.string());
    uint8_t len_bytes[8];
    store_le_u64(header_str.size(), len_bytes);
    out.write(reinterpret_cast<const char *>(len_bytes), 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    if (!data.empty()) {
        out.write(reinterpret_cast<const char *>(data.data()),
                  static_cast<std::streamsize>(data.size()));
    }
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

AdapterContainer read_container(const std::filesystem::path &path) {
    TensorFile file = read_tensor_file(path);

    AdapterContainer container;
    container.metadata = std::move(file.metadata);

    std::map<std::string, std::pair<Matrix *, Matrix *>> pairs; // layer -> (B, A)
    for (auto &[name, m] : file.tensors) {
        std::string layer;
        bool is_b = false;
        if (name.size() > 7 && name.ends_with(kSuffixB)) {
            layer = name.substr(0, name.size() - 7);
            is_b = true;
        } else if (name.size() > 7 && name.ends_with(kSuffixA)) {
            layer = name.substr(0, name.size() - 7);
        } else {
            throw std::runtime_error("unrecognized tensor name: " + name);
        }
        auto &slot = pairs[layer];
        (is_b ? slot.first : slot.second) = &m;
    }

    for (auto &[layer, slot] : pairs) {
        if (slot.first == nullptr || slot.second == nullptr) {
            throw std::runtime_error("unpaired tensor for layer: " + layer);
        }
        LoraAdapter adapter{layer, std::move(*slot.first), std::move(*slot.second)};
        try {
            container.add(std::move(adapter));
        } catch (const std::invalid_argument &e) {
            throw std::runtime_error(e.what());
        }
    }
    return container; // std::map iteration already sorted by layer name
}

void write_container(const AdapterContainer &container, const std::filesystem::path &path,
                     StorageDtype dtype) {
    TensorFile file;
    file.metadata = container.metadata;
    for (const auto &adapter : container.adapters) {
        validate_adapter(adapter);
        file.tensors.emplace_back(adapter.layer_name + kSuffixB, adapter.B);
        file.tensors.emplace_back(adapter.layer_name + kSuffixA, adapter.A);
    }
    write_tensor_file(file, path, dtype);
}

std::vector<LoraAdapter> collect_lora_pairs(const AdapterContainer &container) {
    std::vector<LoraAdapter> out = container.adapters;
    std::sort(out.begin(), out.end(),
              [](const LoraAdapter &a, const LoraAdapter &b) { return a.layer_name < b.layer_name; });
    return out;
}

} // namespace loraquant
