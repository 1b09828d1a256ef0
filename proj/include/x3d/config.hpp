#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "x3d/cross_distill.hpp"
#include "x3d/optical_flow.hpp"
#include "x3d/optim.hpp"
#include "x3d/synth_data.hpp"

namespace x3d {

/// Every tunable of a pipeline run. Stored as flat `key = value` text with
/// dotted keys; see encode_config for the full key list.
struct RunConfig {
    std::uint64_t seed = 0;

    std::filesystem::path data_dir = "data";
    std::filesystem::path out_dir = "run";
    /// Empty means <out_dir>/teacher/checkpoint.x3dc.
    std::filesystem::path teacher_checkpoint;

    /// The dataset seed is always `seed`; the field inside is ignored.
    DatasetSpec dataset;
    TvL1Params flow;
    std::vector<std::size_t> block_channels{8, 16, 32, 64};

    DistillDirection direction = DistillDirection::FlowTeachesRgb;
    BridgeConfig bridge;
    LossWeights loss;

    OptimizerConfig optimizer;
    std::size_t epochs = 30;
    std::size_t batch_size = 6;
    bool wall_time = false;
    std::size_t parallel = 1;

    /// Throws ConfigError describing the first invalid field.
    void validate() const;

    DatasetSpec dataset_spec() const;
    StreamSpec teacher_stream() const;
    StreamSpec student_stream() const;
    TrainConfig train_config() const;
    std::filesystem::path teacher_path() const;

    bool operator==(const RunConfig&) const = default;
};

/// Sets one key from its text form. Throws ConfigError for unknown keys and
/// unparsable values. Setting dataset.regime to a preset also applies the
/// preset's camera noise and appearance cue.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

/// "key=value" form of apply_setting, as given to --set.
void apply_assignment(RunConfig& config, std::string_view assignment);

/// One `key = value` line per key, in a fixed order; reloads to an equal config.
std::string encode_config(const RunConfig& config);

/// Starts from the defaults and applies every line in order. Blank lines and
/// lines starting with '#' are skipped.
RunConfig decode_config(std::string_view text, const std::string& context = "config");

RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace x3d
