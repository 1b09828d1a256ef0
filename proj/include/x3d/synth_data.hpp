#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "x3d/optical_flow.hpp"
#include "x3d/tensor.hpp"

namespace x3d {

enum class MotionPattern {
    TranslateLeft,
    TranslateRight,
    TranslateUp,
    TranslateDown,
    OrbitCw,
    OrbitCcw,
    Expand,
    Contract,
};

inline constexpr std::size_t kNumMotionPatterns = 8;

std::string_view to_string(MotionPattern p);

/// The motion pattern alone determines the label.
struct ActionClassSpec {
    int class_id = 0;
    MotionPattern pattern = MotionPattern::TranslateLeft;
    double speed = 2.0;  ///< px/frame
};

/// Class i gets pattern i. Throws ConfigError for more than 8 classes.
std::vector<ActionClassSpec> action_classes(std::size_t num_classes, double speed);

enum class ShapeKind { Square, Disc, Triangle };

/// Dataset-wide rendering knobs.
struct SceneConfig {
    double camera_noise_sigma = 0.0;  ///< std-dev (px/frame) of the global camera step
    bool appearance_cue = false;      ///< foreground colour tied to class id
};

struct ClipExtent {
    std::size_t t = 8;
    std::size_t h = 32;
    std::size_t w = 32;

    bool operator==(const ClipExtent&) const = default;
};

/// What render_clip drew, frame by frame, before the camera shift.
struct RenderTrace {
    ShapeKind shape = ShapeKind::Disc;
    std::array<float, 3> foreground{};
    std::array<float, 3> background{};
    std::vector<std::array<double, 2>> centers;  ///< (x, y) per frame
    std::vector<double> radii;
    std::vector<std::array<int, 2>> camera_offsets;  ///< cumulative (dx, dy) per frame
};

/// Foreground colour used for `class_id` when the appearance cue is on.
std::array<float, 3> class_color(int class_id);

/// Per-frame camera steps: each axis draws round(N(0, sigma^2)).
std::vector<std::array<int, 2>> sample_camera_steps(double sigma, std::size_t count, std::uint64_t seed);

/// RGB clip (3,T,H,W) in [0,1]: one anti-aliased shape moving along the class
/// pattern over a static textured background, then a toroidal global shift per
/// frame following a random walk of camera steps. Pure function of its inputs.
/// Throws ShapeError for frames smaller than 16 px.
FloatArray render_clip(const ActionClassSpec& action, const SceneConfig& scene, ClipExtent extent,
                       std::uint64_t render_seed, RenderTrace* trace = nullptr);

// Clip file: "VCLP" | u32 C | u32 T | u32 H | u32 W | f32 data, little-endian.
std::string encode_clip(const FloatArray& clip);
FloatArray decode_clip(std::string_view bytes, const std::string& context = "clip");
void save_clip(const std::filesystem::path& path, const FloatArray& clip);
FloatArray load_clip(const std::filesystem::path& path);

enum class Split { Train, Test };
std::string_view to_string(Split s);

enum class Regime { MotionFavored, CameraNoisy, Custom };
std::string_view to_string(Regime r);
Regime parse_regime(std::string_view text);

/// Inputs that fully determine a dataset.
struct DatasetSpec {
    std::uint64_t seed = 0;
    Regime regime = Regime::Custom;
    std::size_t num_classes = 8;
    std::size_t clips_per_class = 20;
    ClipExtent extent{};
    double speed = 3.0;
    double camera_noise_sigma = 0.0;
    bool appearance_cue = false;
    double train_fraction = 0.8;

    void validate() const;
    bool operator==(const DatasetSpec&) const = default;
};

/// motion-favored: no camera noise, no appearance cue.
/// camera-noisy: camera noise sigma 3 px, appearance cue on.
DatasetSpec make_regime(Regime regime, std::uint64_t seed = 0);

struct ClipRecord {
    std::size_t id = 0;
    int class_id = 0;
    Split split = Split::Train;
    std::uint64_t render_seed = 0;

    bool operator==(const ClipRecord&) const = default;
};

struct DatasetManifest {
    DatasetSpec spec;
    std::vector<ClipRecord> clips;

    std::vector<std::size_t> indices(Split split) const;
    bool operator==(const DatasetManifest&) const = default;
};

/// Clip inventory with a per-class stratified, disjoint train/test split.
DatasetManifest build_manifest(const DatasetSpec& spec);

std::string encode_manifest(const DatasetManifest& manifest);
DatasetManifest decode_manifest(std::string_view text, const std::string& context = "manifest");

FloatArray render_manifest_clip(const DatasetManifest& manifest, const ClipRecord& record);

/// A manifest with every clip and its flow clip held in memory.
struct Dataset {
    DatasetManifest manifest;
    std::vector<FloatArray> rgb;   ///< (3,T,H,W) per clip id
    std::vector<FloatArray> flow;  ///< (2,T,H,W) per clip id

    std::vector<std::int32_t> labels() const;
};

/// Renders every clip and computes its flow clip.
Dataset build_dataset(const DatasetSpec& spec, const TvL1Params& flow_params);

/// Directory layout: manifest.txt, clips/<id>.vclp, flow/<id>.flo3.
std::filesystem::path clip_path(const std::filesystem::path& dir, std::size_t id);
std::filesystem::path flow_path(const std::filesystem::path& dir, std::size_t id);

/// Writes manifest.txt and all clip files; flow files too when `with_flow`.
DatasetManifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir, bool with_flow = false,
                                 const TvL1Params& flow_params = {});

/// Populates dir/flow from the clip files. Returns the number of files written.
std::size_t precompute_flow(const std::filesystem::path& dir, const TvL1Params& flow_params);

/// Loads manifest and clips; flow clips come from the cache when present and
/// are computed otherwise.
Dataset load_dataset(const std::filesystem::path& dir, const TvL1Params& flow_params);

}  // namespace x3d
