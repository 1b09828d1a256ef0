#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "x3d/tensor.hpp"

namespace x3d {

/// Row-major single-channel image, values nominally in [0, 1].
struct GrayImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;

    GrayImage() = default;
    GrayImage(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}

    float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
    float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }

    bool operator==(const GrayImage&) const = default;
};

/// Per-pixel displacement (u horizontal, v vertical) in pixels, such that
/// frame1(x + u, y + v) ~ frame0(x, y).
struct FlowField {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> u;
    std::vector<float> v;

    FlowField() = default;
    FlowField(std::size_t h, std::size_t w) : height(h), width(w), u(h * w, 0.0f), v(h * w, 0.0f) {}

    bool operator==(const FlowField&) const = default;
};

struct TvL1Params {
    double lambda = 0.15;        ///< data-term weight (intensities on a 0..255 scale)
    double theta = 0.3;          ///< coupling between u and the auxiliary field
    double tau = 0.25;           ///< dual step
    int warps_per_level = 3;
    int iterations_per_warp = 25;
    double pyramid_scale = 0.5;
    std::size_t min_level_size = 16;
    double clip_limit = 20.0;

    /// Throws ConfigError unless tau in (0, 0.25], scale in (0,1) and the
    /// remaining fields are positive.
    void validate() const;
    bool operator==(const TvL1Params&) const = default;
};

/// Optional diagnostics from compute_flow.
struct FlowTrace {
    std::size_t levels = 0;
    /// TV-L1 energy at the finest level, measured before the first warp and
    /// after every warp.
    std::vector<double> finest_energy;
};

/// Number of pyramid levels: the finest plus every coarser level whose smaller
/// side is still >= min_level_size.
std::size_t pyramid_levels(std::size_t height, std::size_t width, const TvL1Params& params);

/// Coarse-to-fine duality-based TV-L1 estimate of the flow from frame0 to frame1.
/// Throws ShapeError on unequal or too-small images, NonFiniteError on NaN/Inf input.
FlowField compute_flow(const GrayImage& frame0, const GrayImage& frame1, const TvL1Params& params,
                       FlowTrace* trace = nullptr);

/// TV-L1 energy lambda*sum|I1(x+u)-I0| + sum(|grad u| + |grad v|) on the 0..255
/// intensity scale.
double tvl1_energy(const GrayImage& frame0, const GrayImage& frame1, const FlowField& flow, double lambda);

/// Bilinear sample of `img` at (x + u, y + v); coordinates clamp to the border.
GrayImage warp_image(const GrayImage& img, const FlowField& flow);

/// Luma (0.299 R + 0.587 G + 0.114 B) of frame t of a (3,T,H,W) clip.
GrayImage clip_frame_gray(const FloatArray& rgb_clip, std::size_t t);

/// Flow clip (2,T,H,W) for an RGB clip (3,T,H,W), T >= 2: flow between each
/// consecutive pair, the last field repeated once, channels (u, v), values
/// divided by clip_limit.
FloatArray clip_to_flow_clip(const FloatArray& rgb_clip, const TvL1Params& params);

// Flow cache file: "FLO3" | u32 T | u32 H | u32 W | u plane (T*H*W f32) |
// v plane (T*H*W f32), little-endian. Holds a flow clip exactly as produced by
// clip_to_flow_clip.
std::string encode_flow_clip(const FloatArray& flow_clip);
FloatArray decode_flow_clip(std::string_view bytes, const std::string& context = "flow cache");
void save_flow_clip(const std::filesystem::path& path, const FloatArray& flow_clip);
FloatArray load_flow_clip(const std::filesystem::path& path);

}  // namespace x3d
