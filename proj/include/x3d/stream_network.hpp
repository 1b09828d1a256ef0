#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "x3d/ops.hpp"
#include "x3d/optim.hpp"
#include "x3d/tensor.hpp"

namespace x3d {

enum class TapPoint { Front, Medium, Rear, Output };

std::string_view to_string(TapPoint tap);
/// Accepts "front", "medium", "rear", "output".
TapPoint parse_tap(std::string_view text);

/// The three bridgeable levels, in tap order.
inline constexpr TapPoint kBridgeTaps[3] = {TapPoint::Front, TapPoint::Medium, TapPoint::Rear};

struct StreamSpec {
    std::size_t in_channels = 3;  ///< 3 for RGB, 2 for flow
    std::size_t num_classes = 8;
    std::vector<std::size_t> block_channels{8, 16, 32, 64};
    Triple clip_shape{8, 32, 32};

    /// "rgb" for 3 input channels, "flow" for 2.
    std::string stream_name() const;

    /// Throws ConfigError for bad channel counts or fewer than three blocks,
    /// ShapeError when some pooled extent would fall below 1.
    void validate() const;

    /// (channels, t, h, w) of a tap without the batch axis; Output is (C_last).
    Shape tap_shape(TapPoint tap) const;

    bool operator==(const StreamSpec&) const = default;
};

StreamSpec rgb_stream_spec(std::size_t num_classes, Triple clip_shape = {8, 32, 32});
StreamSpec flow_stream_spec(std::size_t num_classes, Triple clip_shape = {8, 32, 32});

/// Conv blocks (conv k=3 same padding, relu, maxpool; the first block pools
/// 1x2x2, the rest 2x2x2), global average pooling and a linear classifier.
/// Parameters are stored block by block (conv, bias) followed by the
/// classifier (w, b).
template <typename T>
struct BasicStreamNetwork {
    StreamSpec spec;
    std::vector<BasicParameter<T>> params;

    std::size_t num_blocks() const { return spec.block_channels.size(); }
    const BasicTensor<T>& conv_weight(std::size_t block) const { return params[2 * block].tensor; }
    const BasicTensor<T>& conv_bias(std::size_t block) const { return params[2 * block + 1].tensor; }
    const BasicTensor<T>& classifier_weight() const { return params[params.size() - 2].tensor; }
    const BasicTensor<T>& classifier_bias() const { return params[params.size() - 1].tensor; }
};

using StreamNetwork = BasicStreamNetwork<float>;

template <typename T>
struct BasicTapFeatures {
    BasicTensor<T> front;   ///< after block 1
    BasicTensor<T> medium;  ///< after block 2
    BasicTensor<T> rear;    ///< after block 3
    BasicTensor<T> output;  ///< pooled (N, C_last)
    BasicTensor<T> logits;  ///< (N, num_classes)

    const BasicTensor<T>& tap(TapPoint point) const;
};

using TapFeatures = BasicTapFeatures<float>;

/// He-normal initialised convolutions and classifier weights (std sqrt(2/fan_in),
/// one random stream per parameter name), zero biases. Bit-identical for equal
/// (spec, seed); the double network holds the float values widened.
template <typename T>
BasicStreamNetwork<T> build_stream(const StreamSpec& spec, std::uint64_t seed);

/// Rebuilds a network from named parameters (e.g. a decoded checkpoint).
/// Entries not belonging to this stream are ignored. Throws FormatError for a
/// missing parameter or a shape mismatch.
StreamNetwork stream_from_parameters(const StreamSpec& spec, std::span<const Parameter> params);

/// Widens a float network to double, sharing nothing.
BasicStreamNetwork<double> to_double(const StreamNetwork& net);

/// One pass producing every tap. Throws ShapeError unless the clip is
/// (N, in_channels, T, H, W) with the StreamSpec extents. When `region` is given it
/// receives the sign of every relu input and the winning offset of every
/// max-pool window, which identify the linear piece the pass ran through.
template <typename T>
BasicTapFeatures<T> forward(const BasicStreamNetwork<T>& net, const BasicTensor<T>& clip,
                            std::vector<std::uint32_t>* region = nullptr);

/// He-normal array of the given shape, std sqrt(2 / fan_in), seeded by name.
FloatArray he_normal(const Shape& shape, std::size_t fan_in, std::uint64_t seed, std::string_view name);

/// Aligns a teacher feature map with a student tap: adaptive average pooling of
/// (T,H,W) onto the student extents, then a learned 1x1x1 channel projection.
/// The teacher feature is detached, so no gradient reaches the teacher.
template <typename T>
struct BasicBridgeAdapter {
    Shape target_shape;              ///< student tap (C, T, H, W)
    std::size_t teacher_channels = 0;
    BasicParameter<T> weight;        ///< "bridge.adapter.w", (C_student, C_teacher, 1, 1, 1)
    BasicParameter<T> bias;          ///< "bridge.adapter.b", (C_student)
};

using BridgeAdapter = BasicBridgeAdapter<float>;

/// Identity projection when the channel counts agree, He-normal otherwise; zero bias.
template <typename T>
BasicBridgeAdapter<T> make_adapter(const Shape& teacher_tap_shape, const Shape& student_tap_shape, std::uint64_t seed);

template <typename T>
BasicTensor<T> adapt(const BasicBridgeAdapter<T>& adapter, const BasicTensor<T>& teacher_feature);

}  // namespace x3d
