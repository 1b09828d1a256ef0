#include "x3d/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>

#include "x3d/binary_io.hpp"
#include "x3d/error.hpp"

namespace x3d {
namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <typename T>
T parse_value(std::string_view key, std::string_view text) {
    T value{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (text.empty() || ec != std::errc() || ptr != end) {
        throw ConfigError("invalid value '" + std::string(text) + "' for " + std::string(key));
    }
    return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
    if (text == "true") return true;
    if (text == "false") return false;
    throw ConfigError("invalid value '" + std::string(text) + "' for " + std::string(key) + " (true or false)");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view text) {
    std::vector<std::size_t> out;
    while (true) {
        const auto comma = text.find(',');
        out.push_back(parse_value<std::size_t>(key, trim(text.substr(0, comma))));
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    return out;
}

std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string format_real(float v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
    return buf;
}

std::string format_list(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

struct Field {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
};

template <typename T>
Field number(const char* key, T RunConfig::*member) {
    return {key, [member](const RunConfig& c) { return std::to_string(c.*member); },
            [member](RunConfig& c, std::string_view k, std::string_view v) { c.*member = parse_value<T>(k, v); }};
}

template <typename Owner, typename T>
Field nested(const char* key, Owner RunConfig::*owner, T Owner::*member) {
    return {key,
            [owner, member](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<T>) {
                    return format_real((c.*owner).*member);
                } else {
                    return std::to_string((c.*owner).*member);
                }
            },
            [owner, member](RunConfig& c, std::string_view k, std::string_view v) {
                (c.*owner).*member = parse_value<T>(k, v);
            }};
}

Field path(const char* key, std::filesystem::path RunConfig::*member) {
    return {key, [member](const RunConfig& c) { return (c.*member).string(); },
            [member](RunConfig& c, std::string_view, std::string_view v) { c.*member = std::filesystem::path(v); }};
}

// Encoding order; dataset.regime precedes the fields its preset sets.
const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        number("seed", &RunConfig::seed),
        path("paths.data", &RunConfig::data_dir),
        path("paths.out", &RunConfig::out_dir),
        path("paths.teacher", &RunConfig::teacher_checkpoint),
        {"dataset.regime", [](const RunConfig& c) { return std::string(to_string(c.dataset.regime)); },
         [](RunConfig& c, std::string_view, std::string_view v) {
             const Regime r = parse_regime(v);
             if (r != Regime::Custom) {
                 const auto preset = make_regime(r);
                 c.dataset.camera_noise_sigma = preset.camera_noise_sigma;
                 c.dataset.appearance_cue = preset.appearance_cue;
             }
             c.dataset.regime = r;
         }},
        nested("dataset.num_classes", &RunConfig::dataset, &DatasetSpec::num_classes),
        nested("dataset.clips_per_class", &RunConfig::dataset, &DatasetSpec::clips_per_class),
        {"dataset.clip_t", [](const RunConfig& c) { return std::to_string(c.dataset.extent.t); },
         [](RunConfig& c, std::string_view k, std::string_view v) { c.dataset.extent.t = parse_value<std::size_t>(k, v); }},
        {"dataset.clip_h", [](const RunConfig& c) { return std::to_string(c.dataset.extent.h); },
         [](RunConfig& c, std::string_view k, std::string_view v) { c.dataset.extent.h = parse_value<std::size_t>(k, v); }},
        {"dataset.clip_w", [](const RunConfig& c) { return std::to_string(c.dataset.extent.w); },
         [](RunConfig& c, std::string_view k, std::string_view v) { c.dataset.extent.w = parse_value<std::size_t>(k, v); }},
        nested("dataset.speed", &RunConfig::dataset, &DatasetSpec::speed),
        nested("dataset.camera_noise_sigma", &RunConfig::dataset, &DatasetSpec::camera_noise_sigma),
        {"dataset.appearance_cue", [](const RunConfig& c) { return std::string(c.dataset.appearance_cue ? "true" : "false"); },
         [](RunConfig& c, std::string_view k, std::string_view v) { c.dataset.appearance_cue = parse_bool(k, v); }},
        nested("dataset.train_fraction", &RunConfig::dataset, &DatasetSpec::train_fraction),
        nested("flow.lambda", &RunConfig::flow, &TvL1Params::lambda),
        nested("flow.theta", &RunConfig::flow, &TvL1Params::theta),
        nested("flow.tau", &RunConfig::flow, &TvL1Params::tau),
        nested("flow.warps_per_level", &RunConfig::flow, &TvL1Params::warps_per_level),
        nested("flow.iterations_per_warp", &RunConfig::flow, &TvL1Params::iterations_per_warp),
        nested("flow.pyramid_scale", &RunConfig::flow, &TvL1Params::pyramid_scale),
        nested("flow.min_level_size", &RunConfig::flow, &TvL1Params::min_level_size),
        nested("flow.clip_limit", &RunConfig::flow, &TvL1Params::clip_limit),
        {"stream.block_channels", [](const RunConfig& c) { return format_list(c.block_channels); },
         [](RunConfig& c, std::string_view k, std::string_view v) { c.block_channels = parse_list(k, v); }},
        {"distill.direction", [](const RunConfig& c) { return std::string(to_string(c.direction)); },
         [](RunConfig& c, std::string_view, std::string_view v) { c.direction = parse_direction(v); }},
        {"bridge.teacher_tap", [](const RunConfig& c) { return std::string(to_string(c.bridge.teacher_tap)); },
         [](RunConfig& c, std::string_view, std::string_view v) { c.bridge.teacher_tap = parse_tap(v); }},
        {"bridge.student_tap", [](const RunConfig& c) { return std::string(to_string(c.bridge.student_tap)); },
         [](RunConfig& c, std::string_view, std::string_view v) { c.bridge.student_tap = parse_tap(v); }},
        nested("loss.alpha", &RunConfig::loss, &LossWeights::alpha),
        nested("loss.beta", &RunConfig::loss, &LossWeights::beta),
        nested("loss.gamma", &RunConfig::loss, &LossWeights::gamma),
        nested("optimizer.learning_rate", &RunConfig::optimizer, &OptimizerConfig::learning_rate),
        nested("optimizer.momentum", &RunConfig::optimizer, &OptimizerConfig::momentum),
        nested("optimizer.weight_decay", &RunConfig::optimizer, &OptimizerConfig::weight_decay),
        number("train.epochs", &RunConfig::epochs),
        number("train.batch_size", &RunConfig::batch_size),
        {"metrics.wall_time", [](const RunConfig& c) { return std::string(c.wall_time ? "true" : "false"); },
         [](RunConfig& c, std::string_view k, std::string_view v) { c.wall_time = parse_bool(k, v); }},
        number("sweep.parallel", &RunConfig::parallel),
    };
    return table;
}

}  // namespace

void RunConfig::validate() const {
    dataset_spec().validate();
    if (dataset.regime != Regime::Custom) {
        const auto preset = make_regime(dataset.regime);
        if (dataset.camera_noise_sigma != preset.camera_noise_sigma || dataset.appearance_cue != preset.appearance_cue) {
            throw ConfigError("dataset.camera_noise_sigma and dataset.appearance_cue differ from the " +
                              std::string(to_string(dataset.regime)) + " preset; set dataset.regime = custom");
        }
    }
    flow.validate();
    teacher_stream().validate();
    student_stream().validate();
    bridge.validate();
    loss.validate();
    train_config().validate();
    if (parallel == 0) throw ConfigError("sweep.parallel must be >= 1");
    if (out_dir.empty()) throw ConfigError("paths.out must not be empty");
    if (data_dir.empty()) throw ConfigError("paths.data must not be empty");
}

DatasetSpec RunConfig::dataset_spec() const {
    DatasetSpec s = dataset;
    s.seed = seed;
    return s;
}

StreamSpec RunConfig::teacher_stream() const {
    auto s = teacher_spec(direction, dataset.num_classes, {dataset.extent.t, dataset.extent.h, dataset.extent.w});
    s.block_channels = block_channels;
    return s;
}

StreamSpec RunConfig::student_stream() const {
    auto s = student_spec(direction, dataset.num_classes, {dataset.extent.t, dataset.extent.h, dataset.extent.w});
    s.block_channels = block_channels;
    return s;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.optimizer = optimizer;
    t.seed = seed;
    t.record_wall_time = wall_time;
    return t;
}

std::filesystem::path RunConfig::teacher_path() const {
    return teacher_checkpoint.empty() ? out_dir / "teacher" / "checkpoint.x3dc" : teacher_checkpoint;
}

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
    for (const auto& f : fields()) {
        if (key == f.key) {
            f.set(config, key, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void apply_assignment(RunConfig& config, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
    }
    apply_setting(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string encode_config(const RunConfig& config) {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
    return out;
}

RunConfig decode_config(std::string_view text, const std::string& context) {
    RunConfig config;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const auto line = trim(text.substr(0, nl));
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(context + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        try {
            apply_setting(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(context + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return config;
}

RunConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
    return decode_config(read_file(path), path.string());
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
    write_file_atomic(path, encode_config(config));
}

}  // namespace x3d
