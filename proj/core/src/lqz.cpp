#include "loraquant/lqz.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "loraquant/version.hpp"

namespace loraquant {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr uint64_t kMaxHeaderBytes = 1ull << 30;

uint64_t load_le_u64(const uint8_t *p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

void store_le_u64(uint64_t v, uint8_t *p) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<uint8_t>(v >> (8 * i));
}

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

const char *scheme_name(Scheme scheme) {
    switch (scheme) {
    case Scheme::rtn: return "rtn";
    case Scheme::binary: return "binary";
    case Scheme::raw: return "raw";
    }
    throw std::invalid_argument("unknown scheme value");
}

Scheme scheme_from_name(const std::string &name) {
    if (name == "rtn") return Scheme::rtn;
    if (name == "binary") return Scheme::binary;
    if (name == "raw") return Scheme::raw;
    throw std::runtime_error("unknown scheme '" + name + "'");
}

const char *orientation_name(GroupOrientation o) {
    return o == GroupOrientation::column ? "column" : "row";
}

GroupOrientation orientation_from_name(const std::string &name) {
    if (name == "column") return GroupOrientation::column;
    if (name == "row") return GroupOrientation::row;
    throw std::runtime_error("unknown orientation '" + name + "'");
}

ordered_json config_to_json(const QuantConfig &cfg) {
    ordered_json j = ordered_json::object();
    j["format_version"] = kFormatVersion;
    j["strategy"] = strategy_name(cfg.strategy);
    j["rho"] = cfg.rho;
    j["bits_high"] = cfg.bits_high;
    j["bits_low"] = cfg.bits_low;
    j["group_size"] = cfg.group_size;
    j["opt_steps"] = cfg.opt_steps;
    j["learning_rate"] = cfg.learning_rate;
    j["seed"] = cfg.seed;
    j["static_h"] = cfg.static_h;
    j["b_orientation"] = orientation_name(cfg.b_orientation);
    j["a_orientation"] = orientation_name(cfg.a_orientation);
    return j;
}

QuantConfig config_from_json(const ordered_json &j) {
    if (!j.is_object()) throw std::runtime_error("config is not an object");
    const int64_t version = j.at("format_version").get<int64_t>();
    if (version != kFormatVersion)
        throw std::runtime_error("unsupported format_version " + std::to_string(version));
    QuantConfig cfg;
    cfg.strategy = strategy_from_name(j.at("strategy").get<std::string>());
    cfg.rho = j.at("rho").get<double>();
    cfg.bits_high = j.at("bits_high").get<int>();
    cfg.bits_low = j.at("bits_low").get<int>();
    cfg.group_size = j.at("group_size").get<int64_t>();
    cfg.opt_steps = j.at("opt_steps").get<int64_t>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.static_h = j.at("static_h").get<int64_t>();
    cfg.b_orientation = orientation_from_name(j.at("b_orientation").get<std::string>());
    cfg.a_orientation = orientation_from_name(j.at("a_orientation").get<std::string>());
    cfg.validate();
    return cfg;
}

struct MatrixSlot {
    const char *key;
    const std::optional<QuantizedMatrix> *matrix;
};

void append_section(std::vector<uint8_t> &payload, ordered_json &entry, const char *key,
                    std::span<const uint8_t> bytes) {
    const uint64_t begin = payload.size();
    payload.insert(payload.end(), bytes.begin(), bytes.end());
    entry[key] = {begin, static_cast<uint64_t>(payload.size())};
}

ordered_json matrix_to_json(const QuantizedMatrix &q, std::vector<uint8_t> &payload) {
    validate_quantized_matrix(q);
    ordered_json entry = ordered_json::object();
    entry["scheme"] = scheme_name(q.scheme);
    entry["bits"] = q.bits;
    entry["rows"] = q.rows;
    entry["cols"] = q.cols;
    entry["group_size"] = q.group_size;
    entry["orientation"] = orientation_name(q.orientation);
    append_section(payload, entry, "codes", q.packed_codes);
    if (q.scheme != Scheme::raw) {
        std::vector<uint8_t> scale_bytes;
        scale_bytes.reserve(q.scales.size() * 2);
        for (uint16_t s : q.scales) {
            scale_bytes.push_back(static_cast<uint8_t>(s));
            scale_bytes.push_back(static_cast<uint8_t>(s >> 8));
        }
        append_section(payload, entry, "scales", scale_bytes);
    }
    if (q.scheme == Scheme::rtn) {
        std::vector<int32_t> zp(q.zero_points.begin(), q.zero_points.end());
        append_section(payload, entry, "zero_points", pack_bits(zp, q.bits));
    }
    return entry;
}

// Reads one [begin, end) range, enforcing contiguity against `cursor`.
std::span<const uint8_t> take_section(const ordered_json &entry, const char *key,
                                      std::span<const uint8_t> payload, uint64_t &cursor) {
    const ordered_json &range = entry.at(key);
    if (!range.is_array() || range.size() != 2)
        throw std::runtime_error(std::string(key) + " range is not a pair");
    const uint64_t begin = range[0].get<uint64_t>();
    const uint64_t end = range[1].get<uint64_t>();
    if (begin != cursor) throw std::runtime_error(std::string(key) + " section is not contiguous");
    if (end < begin || end > payload.size())
        throw std::runtime_error(std::string(key) + " range exceeds payload");
    cursor = end;
    return payload.subspan(begin, end - begin);
}

QuantizedMatrix matrix_from_json(const ordered_json &entry, std::span<const uint8_t> payload,
                                 uint64_t &cursor) {
    if (!entry.is_object()) throw std::runtime_error("matrix entry is not an object");
    QuantizedMatrix q;
    q.scheme = scheme_from_name(entry.at("scheme").get<std::string>());
    q.bits = entry.at("bits").get<int>();
    q.rows = entry.at("rows").get<int64_t>();
    q.cols = entry.at("cols").get<int64_t>();
    q.group_size = entry.at("group_size").get<int64_t>();
    q.orientation = orientation_from_name(entry.at("orientation").get<std::string>());
    if (q.rows < 1 || q.cols < 1 || q.group_size < 1)
        throw std::runtime_error("matrix entry has a non-positive dimension");

    const std::span<const uint8_t> codes = take_section(entry, "codes", payload, cursor);
    q.packed_codes.assign(codes.begin(), codes.end());
    if (q.scheme != Scheme::raw) {
        const std::span<const uint8_t> scale_bytes = take_section(entry, "scales", payload, cursor);
        if (scale_bytes.size() % 2 != 0) throw std::runtime_error("odd scale byte count");
        q.scales.resize(scale_bytes.size() / 2);
        for (size_t i = 0; i < q.scales.size(); ++i)
            q.scales[i] = static_cast<uint16_t>(scale_bytes[2 * i] |
                                                (static_cast<uint16_t>(scale_bytes[2 * i + 1]) << 8));
    }
    if (q.scheme == Scheme::rtn) {
        const std::span<const uint8_t> zp_bytes = take_section(entry, "zero_points", payload, cursor);
        if (q.bits < 1 || q.bits > 8) throw std::runtime_error("rtn bits outside [1, 8]");
        const std::vector<int32_t> zp =
            unpack_bits(zp_bytes, q.bits, static_cast<int64_t>(q.scales.size()));
        q.zero_points.assign(zp.begin(), zp.end());
    }
    validate_quantized_matrix(q);
    return q;
}

void check_pair_shapes(const QuantizedAdapter &qa) {
    if (qa.B_high.has_value() != qa.A_high.has_value())
        throw std::runtime_error("layer '" + qa.layer_name + "': unpaired high matrices");
    if (qa.B_low.has_value() != qa.A_low.has_value())
        throw std::runtime_error("layer '" + qa.layer_name + "': unpaired low matrices");
    if (qa.h < 0 || qa.h > qa.r)
        throw std::runtime_error("layer '" + qa.layer_name + "': h outside [0, r]");
    if (qa.B_high &&
        (qa.B_high->rows != qa.m || qa.B_high->cols != qa.h || qa.A_high->rows != qa.h ||
         qa.A_high->cols != qa.n))
        throw std::runtime_error("layer '" + qa.layer_name + "': high pair shape mismatch");
    if (qa.B_low && (qa.B_low->rows != qa.m || qa.B_low->cols != qa.r - qa.h ||
                     qa.A_low->rows != qa.r - qa.h || qa.A_low->cols != qa.n))
        throw std::runtime_error("layer '" + qa.layer_name + "': low pair shape mismatch");
}

} // namespace

std::string quant_config_to_json_string(const QuantConfig &config) {
    return config_to_json(config).dump();
}

void write_lqz(const std::filesystem::path &path, std::span<const QuantizedAdapter> adapters,
               const QuantConfig &config) {
    config.validate();
    std::vector<const QuantizedAdapter *> order;
    order.reserve(adapters.size());
    for (const QuantizedAdapter &qa : adapters) order.push_back(&qa);
    std::sort(order.begin(), order.end(), [](const QuantizedAdapter *a, const QuantizedAdapter *b) {
        return a->layer_name < b->layer_name;
    });
    for (size_t i = 1; i < order.size(); ++i)
        if (order[i]->layer_name == order[i - 1]->layer_name)
            throw std::invalid_argument("duplicate layer name: " + order[i]->layer_name);

    ordered_json header = ordered_json::object();
    header["config"] = config_to_json(config);
    ordered_json layers = ordered_json::object();
    std::vector<uint8_t> payload;
    for (const QuantizedAdapter *qa : order) {
        check_pair_shapes(*qa);
        ordered_json entry = ordered_json::object();
        entry["m"] = qa->m;
        entry["n"] = qa->n;
        entry["r"] = qa->r;
        entry["h"] = qa->h;
        const MatrixSlot slots[] = {{"B_high", &qa->B_high},
                                    {"A_high", &qa->A_high},
                                    {"B_low", &qa->B_low},
                                    {"A_low", &qa->A_low}};
        for (const MatrixSlot &slot : slots)
            if (slot.matrix->has_value()) entry[slot.key] = matrix_to_json(**slot.matrix, payload);
        layers[qa->layer_name] = std::move(entry);
    }
    header["layers"] = std::move(layers);

    const std::string header_str = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path.string());
    uint8_t len_bytes[8];
    store_le_u64(header_str.size(), len_bytes);
    out.write(reinterpret_cast<const char *>(len_bytes), 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    if (!payload.empty())
        out.write(reinterpret_cast<const char *>(payload.data()),
                  static_cast<std::streamsize>(payload.size()));
    out.flush();
    if (!out) throw std::runtime_error("cannot write file: " + path.string());
}

LqzFile read_lqz(const std::filesystem::path &path) {
    const std::vector<uint8_t> bytes = read_all_bytes(path);
    if (bytes.size() < 8) throw std::runtime_error("file too short for a header length");
    const uint64_t header_len = load_le_u64(bytes.data());
    if (header_len > kMaxHeaderBytes || 8 + header_len > bytes.size())
        throw std::runtime_error("header length exceeds file size");

    ordered_json header;
    try {
        header = ordered_json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
    } catch (const std::exception &e) {
        throw std::runtime_error(std::string("malformed header: ") + e.what());
    }
    const std::span<const uint8_t> payload(bytes.data() + 8 + header_len,
                                           bytes.size() - 8 - header_len);

    LqzFile file;
    try {
        if (!header.is_object()) throw std::runtime_error("header is not an object");
        file.config = config_from_json(header.at("config"));
        const ordered_json &layers = header.at("layers");
        if (!layers.is_object()) throw std::runtime_error("layers is not an object");

        uint64_t cursor = 0;
        std::string previous;
        for (const auto &[name, entry] : layers.items()) {
            if (!file.adapters.empty() && name <= previous)
                throw std::runtime_error("layers are not sorted by name");
            previous = name;
            if (!entry.is_object()) throw std::runtime_error("layer entry is not an object");
            QuantizedAdapter qa;
            qa.layer_name = name;
            qa.m = entry.at("m").get<int64_t>();
            qa.n = entry.at("n").get<int64_t>();
            qa.r = entry.at("r").get<int64_t>();
            qa.h = entry.at("h").get<int64_t>();
            if (qa.m < 1 || qa.n < 1 || qa.r < 1)
                throw std::runtime_error("layer '" + name + "': non-positive dimensions");
            qa.config = file.config;
            if (entry.contains("B_high")) qa.B_high = matrix_from_json(entry.at("B_high"), payload, cursor);
            if (entry.contains("A_high")) qa.A_high = matrix_from_json(entry.at("A_high"), payload, cursor);
            if (entry.contains("B_low")) qa.B_low = matrix_from_json(entry.at("B_low"), payload, cursor);
            if (entry.contains("A_low")) qa.A_low = matrix_from_json(entry.at("A_low"), payload, cursor);
            check_pair_shapes(qa);
            file.adapters.push_back(std::move(qa));
        }
        if (cursor != payload.size()) throw std::runtime_error("payload has trailing bytes");
    } catch (const ordered_json::exception &e) {
        throw std::runtime_error(std::string("malformed header: ") + e.what());
    } catch (const std::invalid_argument &e) {
        throw std::runtime_error(e.what());
    }
    return file;
}

} // namespace loraquant
