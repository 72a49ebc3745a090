// loraquant: quantize low-rank adapter containers, reconstruct them, and
// report storage accounting. Standard output carries only data (JSON/CSV);
// diagnostics go to standard error. Exit codes: 0 success, 1 malformed or
// unreadable input, 2 invalid configuration.

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "loraquant/accounting.hpp"
#include "loraquant/lqz.hpp"
#include "loraquant/pipeline.hpp"
#include "loraquant/synthesize.hpp"
#include "loraquant/tensor_store.hpp"
#include "loraquant/version.hpp"

namespace {

using loraquant::AdapterContainer;
using loraquant::BitReport;
using loraquant::ErrorReport;
using loraquant::GroupOrientation;
using loraquant::LqzFile;
using loraquant::QuantConfig;
using loraquant::QuantizedAdapter;
using loraquant::StorageDtype;
using loraquant::SynthSpec;
using ordered_json = nlohmann::ordered_json;

struct InputOpts {
    std::string input;
    std::string synthesize; // "m,n,r,layers,seed", mutually exclusive with input
    double decay = 0.7;
    double scale = 1.0;
};

// Shared quantization flags; names match the long options below.
struct ConfigOpts {
    std::string strategy = "svd_ratio";
    double ratio = 0.9;
    int bits_high = 2;
    int64_t group_size = 128;
    int64_t opt_steps = 100;
    double lr = 1e-3;
    uint64_t seed = 0;
    int64_t static_h = -1;
    std::string orient_b = "column";
    std::string orient_a = "row";
};

int64_t parse_int_field(const std::string &text, const char *what) {
    int64_t value = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw std::invalid_argument(std::string(what) + ": cannot parse integer '" + text + "'");
    return value;
}

std::vector<std::string> split_on(const std::string &text, char sep) {
    std::vector<std::string> parts;
    size_t start = 0;
    for (;;) {
        const size_t pos = text.find(sep, start);
        parts.push_back(text.substr(start, pos - start));
        if (pos == std::string::npos) return parts;
        start = pos + 1;
    }
}

SynthSpec parse_synth_spec(const InputOpts &in) {
    const std::vector<std::string> fields = split_on(in.synthesize, ',');
    if (fields.size() != 5)
        throw std::invalid_argument("--synthesize expects m,n,r,layers,seed");
    SynthSpec spec;
    spec.m = parse_int_field(fields[0], "--synthesize m");
    spec.n = parse_int_field(fields[1], "--synthesize n");
    spec.r = parse_int_field(fields[2], "--synthesize r");
    spec.layers = parse_int_field(fields[3], "--synthesize layers");
    const int64_t seed = parse_int_field(fields[4], "--synthesize seed");
    if (spec.layers < 1) throw std::invalid_argument("--synthesize: layers must be >= 1");
    if (seed < 0) throw std::invalid_argument("--synthesize: seed must be >= 0");
    spec.seed = static_cast<uint64_t>(seed);
    spec.decay = in.decay;
    spec.scale = in.scale;
    return spec;
}

AdapterContainer load_adapters(const InputOpts &in) {
    if (in.input.empty() == in.synthesize.empty())
        throw std::invalid_argument("exactly one of --input and --synthesize is required");
    if (!in.synthesize.empty()) return loraquant::synthesize_adapters(parse_synth_spec(in));
    return loraquant::read_container(in.input);
}

GroupOrientation parse_orientation(const std::string &name, const char *what) {
    if (name == "column") return GroupOrientation::column;
    if (name == "row") return GroupOrientation::row;
    throw std::invalid_argument(std::string(what) + ": expected 'column' or 'row', got '" + name +
                                "'");
}

QuantConfig build_config(const ConfigOpts &opts) {
    QuantConfig cfg;
    cfg.strategy = loraquant::strategy_from_name(opts.strategy);
    cfg.rho = opts.ratio;
    cfg.bits_high = opts.bits_high;
    cfg.group_size = opts.group_size;
    cfg.opt_steps = opts.opt_steps;
    cfg.learning_rate = opts.lr;
    cfg.seed = opts.seed;
    cfg.static_h = opts.static_h;
    cfg.b_orientation = parse_orientation(opts.orient_b, "--orient-b");
    cfg.a_orientation = parse_orientation(opts.orient_a, "--orient-a");
    cfg.validate();
    return cfg;
}

int resolve_threads(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char *env = std::getenv("LORAQUANT_THREADS")) {
        const std::string text(env);
        const int64_t value = parse_int_field(text, "LORAQUANT_THREADS");
        if (value < 1) throw std::invalid_argument("LORAQUANT_THREADS must be >= 1");
        return static_cast<int>(value);
    }
    return 1;
}

// Inclusive a:b:step grid or a comma list. Grid points are a + k*step rounded
// to 12 significant digits so decimal steps yield the intended values.
double round_sig12(double v) {
    if (v == 0.0 || !std::isfinite(v)) return v;
    const double magnitude = std::pow(10.0, 11 - std::floor(std::log10(std::fabs(v))));
    return std::round(v * magnitude) / magnitude;
}

std::vector<double> parse_double_grid(const std::string &text, const char *what) {
    std::vector<double> values;
    auto parse_one = [&what](const std::string &field) {
        try {
            size_t used = 0;
            const double v = std::stod(field, &used);
            if (used != field.size()) throw std::invalid_argument(field);
            return v;
        } catch (const std::exception &) {
            throw std::invalid_argument(std::string(what) + ": cannot parse number '" + field +
                                        "'");
        }
    };
    if (text.find(':') != std::string::npos) {
        const std::vector<std::string> fields = split_on(text, ':');
        if (fields.size() != 3)
            throw std::invalid_argument(std::string(what) + ": range needs start:stop:step");
        const double start = parse_one(fields[0]);
        const double stop = parse_one(fields[1]);
        const double step = parse_one(fields[2]);
        if (!(step > 0.0)) throw std::invalid_argument(std::string(what) + ": step must be > 0");
        for (int64_t k = 0;; ++k) {
            const double v = round_sig12(start + static_cast<double>(k) * step);
            if (v > stop + step * 1e-9) break;
            values.push_back(v);
        }
    } else {
        for (const std::string &field : split_on(text, ',')) values.push_back(parse_one(field));
    }
    if (values.empty()) throw std::invalid_argument(std::string(what) + ": empty grid");
    return values;
}

std::vector<int64_t> parse_int_grid(const std::string &text, const char *what) {
    std::vector<int64_t> values;
    if (text.find(':') != std::string::npos) {
        const std::vector<std::string> fields = split_on(text, ':');
        if (fields.size() != 3)
            throw std::invalid_argument(std::string(what) + ": range needs start:stop:step");
        const int64_t start = parse_int_field(fields[0], what);
        const int64_t stop = parse_int_field(fields[1], what);
        const int64_t step = parse_int_field(fields[2], what);
        if (step < 1) throw std::invalid_argument(std::string(what) + ": step must be >= 1");
        for (int64_t v = start; v <= stop; v += step) values.push_back(v);
    } else {
        for (const std::string &field : split_on(text, ',')) {
            values.push_back(parse_int_field(field, what));
        }
    }
    if (values.empty()) throw std::invalid_argument(std::string(what) + ": empty grid");
    return values;
}

void write_text_file(const std::filesystem::path &path, const std::string &content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("cannot write file: " + path.string());
}

ordered_json config_echo(const QuantConfig &cfg) {
    ordered_json j = ordered_json::parse(loraquant::quant_config_to_json_string(cfg));
    j["label"] = cfg.label();
    return j;
}

ordered_json report_to_json(const ErrorReport &report) {
    ordered_json layers = ordered_json::array();
    for (const loraquant::LayerError &e : report.layers) {
        ordered_json l = ordered_json::object();
        l["layer"] = e.layer;
        l["m"] = e.m;
        l["n"] = e.n;
        l["r"] = e.r;
        l["h"] = e.h;
        l["abs_error"] = e.abs_error;
        if (e.rel_error) {
            l["rel_error"] = *e.rel_error;
        } else {
            l["rel_error"] = nullptr;
        }
        l["avg_bits"] = e.avg_bits;
        layers.push_back(std::move(l));
    }
    ordered_json aggregate = ordered_json::object();
    aggregate["layer_count"] = report.layers.size();
    aggregate["mean_abs_error"] = report.mean_abs_error;
    aggregate["max_abs_error"] = report.max_abs_error;
    aggregate["mean_rel_error"] = report.mean_rel_error;
    aggregate["max_rel_error"] = report.max_rel_error;
    aggregate["rel_layer_count"] = report.rel_layer_count;
    aggregate["mean_h"] = report.mean_h;
    aggregate["avg_bits"] = report.avg_bits;
    ordered_json j = ordered_json::object();
    j["layers"] = std::move(layers);
    j["aggregate"] = std::move(aggregate);
    return j;
}

ordered_json bit_report_to_json(const BitReport &report) {
    ordered_json layers = ordered_json::array();
    for (const loraquant::LayerBits &l : report.layers) {
        ordered_json e = ordered_json::object();
        e["layer"] = l.layer;
        e["weights"] = l.weight_count;
        e["code_bits"] = l.code_bits;
        e["scale_bits"] = l.scale_bits;
        e["zp_bits"] = l.zero_point_bits;
        e["avg_bits"] = l.avg_bits();
        layers.push_back(std::move(e));
    }
    ordered_json aggregate = ordered_json::object();
    aggregate["weights"] = report.total_weights;
    aggregate["code_bits"] = report.total_code_bits;
    aggregate["scale_bits"] = report.total_scale_bits;
    aggregate["zp_bits"] = report.total_zero_point_bits;
    aggregate["avg_bits"] = report.avg_bits();
    ordered_json j = ordered_json::object();
    j["layers"] = std::move(layers);
    j["aggregate"] = std::move(aggregate);
    return j;
}

class ManifestClock {
  public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Every command that writes files drops "<first output>.manifest.json" next
// to them: command, config echo, paths, seed, tool version, duration. The
// manifest is the only output that varies between identical runs.
void write_manifest(const std::string &command, const ordered_json &config,
                    const std::vector<std::string> &inputs, const std::vector<std::string> &outputs,
                    uint64_t seed, const ManifestClock &clock) {
    if (outputs.empty()) return;
    ordered_json j = ordered_json::object();
    j["command"] = command;
    j["tool_version"] = loraquant::kToolVersion;
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["seed"] = seed;
    j["duration_seconds"] = clock.seconds();
    write_text_file(outputs.front() + ".manifest.json", j.dump(2) + "\n");
}

std::vector<std::string> input_list(const InputOpts &in) {
    if (!in.input.empty()) return {in.input};
    return {};
}

StorageDtype parse_dtype(const std::string &name) {
    if (name == "f16") return StorageDtype::f16;
    if (name == "f32") return StorageDtype::f32;
    throw std::invalid_argument("--dtype: expected 'f16' or 'f32', got '" + name + "'");
}

int cmd_quantize(const InputOpts &in, const ConfigOpts &conf, const std::string &output,
                 int threads) {
    const ManifestClock clock;
    const QuantConfig cfg = build_config(conf);
    const AdapterContainer container = load_adapters(in);
    const std::vector<QuantizedAdapter> quantized =
        loraquant::quantize_container(container, cfg, resolve_threads(threads));
    loraquant::write_lqz(output, quantized, cfg);

    const ErrorReport errors = loraquant::measure_errors(container.adapters, quantized);
    ordered_json report = ordered_json::object();
    report["command"] = "quantize";
    report["tool_version"] = loraquant::kToolVersion;
    report["config"] = config_echo(cfg);
    report["output"] = output;
    report.update(report_to_json(errors));

    const std::string report_text = report.dump(2) + "\n";
    std::cout << report_text;
    const std::string report_path = output + ".report.json";
    write_text_file(report_path, report_text);
    write_manifest("quantize", config_echo(cfg), input_list(in), {output, report_path}, cfg.seed,
                   clock);
    return 0;
}

int cmd_reconstruct(const std::string &input, const std::string &output,
                    const std::string &dense_output, const std::string &reference,
                    const std::string &dtype_name) {
    const ManifestClock clock;
    const StorageDtype dtype = parse_dtype(dtype_name);
    const LqzFile file = loraquant::read_lqz(input);

    AdapterContainer out;
    out.metadata["source"] = input;
    out.metadata["config_label"] = file.config.label();
    for (const QuantizedAdapter &qa : file.adapters) {
        auto [c, d] = loraquant::reconstruct_factors(qa);
        out.add(loraquant::LoraAdapter{qa.layer_name, std::move(c), std::move(d)});
    }
    loraquant::write_container(out, output, dtype);
    std::vector<std::string> outputs = {output};

    if (!dense_output.empty()) {
        loraquant::TensorFile dense;
        dense.metadata["source"] = input;
        for (const QuantizedAdapter &qa : file.adapters)
            dense.tensors.emplace_back(qa.layer_name, loraquant::reconstruct_dense(qa));
        loraquant::write_tensor_file(dense, dense_output, dtype);
        outputs.push_back(dense_output);
    }

    if (!reference.empty()) {
        const AdapterContainer ref = loraquant::read_container(reference);
        const ErrorReport errors = loraquant::measure_errors(ref.adapters, file.adapters);
        ordered_json report = ordered_json::object();
        report["command"] = "reconstruct";
        report["tool_version"] = loraquant::kToolVersion;
        report["config"] = config_echo(file.config);
        report["output"] = output;
        report.update(report_to_json(errors));
        const std::string report_text = report.dump(2) + "\n";
        std::cout << report_text;
        const std::string report_path = output + ".report.json";
        write_text_file(report_path, report_text);
        outputs.push_back(report_path);
    }
    write_manifest("reconstruct", config_echo(file.config), {input}, outputs, file.config.seed,
                   clock);
    return 0;
}

int cmd_report(const std::string &input, bool as_json, const std::string &csv_path) {
    const ManifestClock clock;
    const LqzFile file = loraquant::read_lqz(input);
    const BitReport report = loraquant::bit_report(file.adapters);

    // Metadata-derived counts must agree with the packed payload exactly; a
    // mismatch means the file is corrupt.
    for (size_t i = 0; i < file.adapters.size(); ++i) {
        const int64_t walked = loraquant::payload_bit_walk(file.adapters[i]);
        if (walked != report.layers[i].total_bits())
            throw std::runtime_error("payload walk disagrees with metadata for layer '" +
                                     file.adapters[i].layer_name + "'");
    }

    const std::string csv = loraquant::bit_report_csv(report);
    if (as_json) {
        ordered_json j = ordered_json::object();
        j["command"] = "report";
        j["tool_version"] = loraquant::kToolVersion;
        j["config"] = config_echo(file.config);
        j.update(bit_report_to_json(report));
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << csv;
    }
    if (!csv_path.empty()) {
        write_text_file(csv_path, csv);
        write_manifest("report", config_echo(file.config), {input}, {csv_path}, file.config.seed,
                       clock);
    }
    return 0;
}

int cmd_compare(const InputOpts &in, const std::string &output, const std::string &strategies,
                const std::string &ratios, const std::string &bits_list,
                const std::string &static_hs, const ConfigOpts &conf, int threads) {
    const ManifestClock clock;
    const std::vector<double> rho_grid = parse_double_grid(ratios, "--ratios");
    const std::vector<int64_t> bits_grid = parse_int_grid(bits_list, "--bits-high");
    std::vector<int64_t> h_grid;
    if (!static_hs.empty()) h_grid = parse_int_grid(static_hs, "--static-h");

    std::vector<QuantConfig> configs;
    for (const std::string &name : split_on(strategies, ',')) {
        const loraquant::Strategy strategy = loraquant::strategy_from_name(name);
        QuantConfig base;
        base.strategy = strategy;
        base.group_size = conf.group_size;
        base.opt_steps = conf.opt_steps;
        base.learning_rate = conf.lr;
        base.seed = conf.seed;
        base.b_orientation = parse_orientation(conf.orient_b, "--orient-b");
        base.a_orientation = parse_orientation(conf.orient_a, "--orient-a");
        switch (strategy) {
        case loraquant::Strategy::svd_ratio:
        case loraquant::Strategy::prune:
        case loraquant::Strategy::low_rtn1:
            for (int64_t bits : bits_grid)
                for (double rho : rho_grid) {
                    QuantConfig cfg = base;
                    cfg.bits_high = static_cast<int>(bits);
                    cfg.rho = rho;
                    cfg.validate();
                    configs.push_back(cfg);
                }
            break;
        case loraquant::Strategy::svd_static_h:
        case loraquant::Strategy::random_split:
        case loraquant::Strategy::norm_split:
            if (h_grid.empty())
                throw std::invalid_argument("strategy '" + name + "' needs --static-h");
            for (int64_t bits : bits_grid)
                for (int64_t h : h_grid) {
                    QuantConfig cfg = base;
                    cfg.bits_high = static_cast<int>(bits);
                    cfg.static_h = h;
                    cfg.validate();
                    configs.push_back(cfg);
                }
            break;
        case loraquant::Strategy::baseline_rtn:
            for (int64_t bits : bits_grid) {
                QuantConfig cfg = base;
                cfg.bits_high = static_cast<int>(bits);
                cfg.validate();
                configs.push_back(cfg);
            }
            break;
        case loraquant::Strategy::baseline_bin: {
            QuantConfig cfg = base;
            cfg.bits_high = 1;
            cfg.validate();
            configs.push_back(cfg);
            break;
        }
        }
    }

    const AdapterContainer container = load_adapters(in);
    const std::vector<loraquant::CompareResult> results =
        loraquant::compare_methods(container, configs, resolve_threads(threads));

    std::string csv = "strategy,label,bits_high,rho,static_h,mean_h,avg_bits,mean_abs_error,"
                      "max_abs_error,mean_rel_error,max_rel_error\n";
    for (const loraquant::CompareResult &res : results) {
        const QuantConfig &cfg = res.config;
        const bool rho_based = cfg.strategy == loraquant::Strategy::svd_ratio ||
                               cfg.strategy == loraquant::Strategy::prune ||
                               cfg.strategy == loraquant::Strategy::low_rtn1;
        const bool h_based = cfg.strategy == loraquant::Strategy::svd_static_h ||
                             cfg.strategy == loraquant::Strategy::random_split ||
                             cfg.strategy == loraquant::Strategy::norm_split;
        csv += std::string(loraquant::strategy_name(cfg.strategy)) + "," + cfg.label() + "," +
               std::to_string(cfg.bits_high) + ",";
        csv += rho_based ? loraquant::format_double(cfg.rho) : std::string();
        csv += ",";
        csv += h_based ? std::to_string(cfg.static_h) : std::string();
        csv += "," + loraquant::format_double(res.report.mean_h);
        csv += "," + loraquant::format_double(res.report.avg_bits);
        csv += "," + loraquant::format_double(res.report.mean_abs_error);
        csv += "," + loraquant::format_double(res.report.max_abs_error);
        csv += "," + loraquant::format_double(res.report.mean_rel_error);
        csv += "," + loraquant::format_double(res.report.max_rel_error);
        csv += "\n";
    }
    std::cout << csv;
    if (!output.empty()) {
        write_text_file(output, csv);
        ordered_json config = ordered_json::object();
        config["strategies"] = strategies;
        config["ratios"] = ratios;
        config["bits_high"] = bits_list;
        config["static_h"] = static_hs;
        config["group_size"] = conf.group_size;
        config["opt_steps"] = conf.opt_steps;
        config["learning_rate"] = conf.lr;
        config["seed"] = conf.seed;
        write_manifest("compare", config, input_list(in), {output}, conf.seed, clock);
    }
    return 0;
}

int cmd_project(const std::string &input, uint64_t base_bytes, int64_t overhead_flag,
                const std::string &counts_text, const std::string &output) {
    const ManifestClock clock;
    const LqzFile file = loraquant::read_lqz(input);

    loraquant::ProjectionSpec spec;
    spec.base_model_bytes = base_bytes;
    for (const QuantizedAdapter &qa : file.adapters) {
        spec.adapter_weights += static_cast<uint64_t>(qa.r * (qa.m + qa.n));
        spec.adapter_payload_bits += static_cast<uint64_t>(loraquant::payload_bit_walk(qa));
    }
    if (overhead_flag >= 0) {
        spec.per_adapter_overhead_bytes = static_cast<uint64_t>(overhead_flag);
    } else {
        // Default: the container's actual framing cost (header and padding),
        // i.e. file size minus the payload's own bytes.
        const uint64_t file_bytes = std::filesystem::file_size(input);
        const uint64_t payload_bytes = (spec.adapter_payload_bits + 7) / 8;
        spec.per_adapter_overhead_bytes = file_bytes > payload_bytes ? file_bytes - payload_bytes : 0;
    }

    const std::vector<int64_t> counts = parse_int_grid(counts_text, "--counts");
    for (int64_t c : counts)
        if (c < 0) throw std::invalid_argument("--counts: adapter counts must be >= 0");
    const std::vector<loraquant::ProjectionPoint> points =
        loraquant::memory_projection(spec, counts);
    const std::string csv = loraquant::memory_projection_csv(points);
    std::cout << csv;
    if (!output.empty()) {
        write_text_file(output, csv);
        ordered_json config = ordered_json::object();
        config["base_bytes"] = base_bytes;
        config["overhead_bytes"] = spec.per_adapter_overhead_bytes;
        config["adapter_weights"] = spec.adapter_weights;
        config["adapter_payload_bits"] = spec.adapter_payload_bits;
        config["counts"] = counts_text;
        write_manifest("project", config, {input}, {output}, file.config.seed, clock);
    }
    return 0;
}

int cmd_synthesize(const InputOpts &in, const std::string &output, const std::string &dtype_name) {
    const ManifestClock clock;
    if (!in.input.empty()) throw std::invalid_argument("synthesize takes no --input");
    if (in.synthesize.empty()) throw std::invalid_argument("--synthesize is required");
    const SynthSpec spec = parse_synth_spec(in);
    const AdapterContainer container = loraquant::synthesize_adapters(spec);
    loraquant::write_container(container, output, parse_dtype(dtype_name));
    ordered_json config = ordered_json::object();
    config["m"] = spec.m;
    config["n"] = spec.n;
    config["r"] = spec.r;
    config["layers"] = spec.layers;
    config["seed"] = spec.seed;
    config["decay"] = spec.decay;
    config["scale"] = spec.scale;
    write_manifest("synthesize", config, {}, {output}, spec.seed, clock);
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Low-rank adapter quantization toolkit"};
    app.require_subcommand(1);

    InputOpts in;
    ConfigOpts conf;
    int threads = 0;
    std::string output;

    auto add_input_flags = [&in](CLI::App *cmd) {
        cmd->add_option("--input", in.input, "Adapter container (.qla) to read");
        cmd->add_option("--synthesize", in.synthesize,
                        "Generate adapters instead of reading them: m,n,r,layers,seed");
        cmd->add_option("--decay", in.decay, "Synthetic singular-value decay in (0, 1]");
        cmd->add_option("--scale", in.scale, "Synthetic largest singular value");
    };
    auto add_config_flags = [&conf](CLI::App *cmd) {
        cmd->add_option("--strategy", conf.strategy,
                        "svd_ratio | svd_static_h | random_split | norm_split | prune | "
                        "low_rtn1 | baseline_rtn | baseline_bin");
        cmd->add_option("--ratio", conf.ratio, "Energy ratio rho in (0, 1]");
        cmd->add_option("--bits-high", conf.bits_high, "High sub-LoRA bitwidth (2, 3, 4; 16 = raw)");
        cmd->add_option("--group-size", conf.group_size, "Quantization group length");
        cmd->add_option("--opt-steps", conf.opt_steps, "Straight-through descent steps");
        cmd->add_option("--lr", conf.lr, "Straight-through learning rate");
        cmd->add_option("--seed", conf.seed, "Seed for seeded strategies");
        cmd->add_option("--static-h", conf.static_h, "Fixed h for static split strategies");
        cmd->add_option("--orient-b", conf.orient_b, "Group orientation for B factors");
        cmd->add_option("--orient-a", conf.orient_a, "Group orientation for A factors");
    };

    CLI::App *quantize = app.add_subcommand("quantize", "Quantize a container to .lqz");
    add_input_flags(quantize);
    add_config_flags(quantize);
    quantize->add_option("--output", output, "Output .lqz path")->required();
    quantize->add_option("--threads", threads, "Worker threads (default: LORAQUANT_THREADS or 1)");

    std::string rec_input, rec_dense, rec_reference, rec_dtype = "f32";
    CLI::App *reconstruct =
        app.add_subcommand("reconstruct", "Dequantize an .lqz back to a factor container");
    reconstruct->add_option("--input", rec_input, "Quantized .lqz path")->required();
    reconstruct->add_option("--output", output, "Output .qla path")->required();
    reconstruct->add_option("--dense-output", rec_dense,
                            "Also write the dense m x n deltas to this .qla");
    reconstruct->add_option("--reference", rec_reference,
                            "Original .qla; enables the round-trip error report");
    reconstruct->add_option("--dtype", rec_dtype, "Output storage type: f32 | f16");

    std::string rep_input, rep_csv;
    bool rep_json = false;
    CLI::App *report = app.add_subcommand("report", "Bit accounting for an .lqz");
    report->add_option("--input", rep_input, "Quantized .lqz path")->required();
    report->add_flag("--json", rep_json, "Emit JSON instead of CSV on standard output");
    report->add_option("--csv", rep_csv, "Also write the CSV to this path");

    std::string cmp_strategies = "svd_ratio", cmp_ratios = "0.9", cmp_bits = "2", cmp_hs;
    CLI::App *compare = app.add_subcommand("compare", "Sweep a config matrix and emit CSV");
    add_input_flags(compare);
    compare->add_option("--strategies", cmp_strategies, "Comma list of strategies");
    compare->add_option("--ratios", cmp_ratios, "rho grid: comma list or start:stop:step");
    compare->add_option("--bits-high", cmp_bits, "bits grid: comma list or start:stop:step");
    compare->add_option("--static-h", cmp_hs, "h grid for static strategies");
    compare->add_option("--group-size", conf.group_size, "Quantization group length");
    compare->add_option("--opt-steps", conf.opt_steps, "Straight-through descent steps");
    compare->add_option("--lr", conf.lr, "Straight-through learning rate");
    compare->add_option("--seed", conf.seed, "Seed for seeded strategies");
    compare->add_option("--output", output, "Also write the CSV to this path");
    compare->add_option("--threads", threads, "Worker threads (default: LORAQUANT_THREADS or 1)");

    std::string prj_input, prj_counts = "0:64:8";
    uint64_t prj_base = 0;
    int64_t prj_overhead = -1;
    CLI::App *project = app.add_subcommand("project", "Multi-adapter memory projection CSV");
    project->add_option("--input", prj_input, "Quantized .lqz path")->required();
    project->add_option("--base-bytes", prj_base, "Base model bytes added to every point");
    project->add_option("--overhead-bytes", prj_overhead,
                        "Per-adapter container overhead (default: measured from the file)");
    project->add_option("--counts", prj_counts, "Adapter-count grid: comma list or start:stop:step");
    project->add_option("--output", output, "Also write the CSV to this path");

    std::string syn_dtype = "f32";
    CLI::App *synthesize = app.add_subcommand("synthesize", "Write a synthetic .qla container");
    add_input_flags(synthesize);
    synthesize->add_option("--output", output, "Output .qla path")->required();
    synthesize->add_option("--dtype", syn_dtype, "Output storage type: f32 | f16");

    try {
        app.parse(argc, argv);
        if (quantize->parsed()) return cmd_quantize(in, conf, output, threads);
        if (reconstruct->parsed())
            return cmd_reconstruct(rec_input, output, rec_dense, rec_reference, rec_dtype);
        if (report->parsed()) return cmd_report(rep_input, rep_json, rep_csv);
        if (compare->parsed())
            return cmd_compare(in, output, cmp_strategies, cmp_ratios, cmp_bits, cmp_hs, conf,
                               threads);
        if (project->parsed())
            return cmd_project(prj_input, prj_base, prj_overhead, prj_counts, output);
        if (synthesize->parsed()) return cmd_synthesize(in, output, syn_dtype);
        return 2;
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::invalid_argument &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
