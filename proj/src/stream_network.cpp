#include "x3d/stream_network.hpp"

#include <cmath>
#include <map>
#include <random>

#include "x3d/error.hpp"
#include "x3d/rng.hpp"

namespace x3d {
namespace {

constexpr Triple kKernel{3, 3, 3};
constexpr Triple kSamePad{1, 1, 1};

Triple pool_window(std::size_t block) { return block == 0 ? Triple{1, 2, 2} : Triple{2, 2, 2}; }

std::string param_prefix(const StreamSpec& spec) { return "stream." + spec.stream_name() + "."; }

std::vector<std::pair<std::string, Shape>> parameter_layout(const StreamSpec& spec) {
    std::vector<std::pair<std::string, Shape>> out;
    const auto prefix = param_prefix(spec);
    std::size_t cin = spec.in_channels;
    for (std::size_t b = 0; b < spec.block_channels.size(); ++b) {
        const std::size_t cout = spec.block_channels[b];
        const auto block = prefix + "block" + std::to_string(b + 1) + ".";
        out.emplace_back(block + "conv", Shape{cout, cin, kKernel.t, kKernel.h, kKernel.w});
        out.emplace_back(block + "bias", Shape{cout});
        cin = cout;
    }
    out.emplace_back(prefix + "classifier.w", Shape{spec.num_classes, cin});
    out.emplace_back(prefix + "classifier.b", Shape{spec.num_classes});
    return out;
}

template <typename T>
void record_relu(const NdArray<T>& pre, std::vector<std::uint32_t>& region) {
    for (T v : pre.data()) region.push_back(v > T(0));
}

// Offset of the first maximum in each window, in the same order maxpool3d uses.
template <typename T>
void record_pool(const NdArray<T>& x, Triple win, std::vector<std::uint32_t>& region) {
    const auto& s = x.shape();
    const std::size_t depth = s[2], H = s[3], W = s[4];
    const T* data = x.data().data();
    for (std::size_t nc = 0; nc < s[0] * s[1]; ++nc)
        for (std::size_t t = 0; t + win.t <= depth; t += win.t)
            for (std::size_t h = 0; h + win.h <= H; h += win.h)
                for (std::size_t w = 0; w + win.w <= W; w += win.w) {
                    std::uint32_t best_k = 0, k = 0;
                    T best = data[((nc * depth + t) * H + h) * W + w];
                    for (std::size_t dt = 0; dt < win.t; ++dt)
                        for (std::size_t dh = 0; dh < win.h; ++dh)
                            for (std::size_t dw = 0; dw < win.w; ++dw, ++k) {
                                const T v = data[((nc * depth + t + dt) * H + h + dh) * W + w + dw];
                                if (v > best) {
                                    best = v;
                                    best_k = k;
                                }
                            }
                    region.push_back(best_k);
                }
}

template <typename T>
NdArray<T> widen(const FloatArray& a) {
    if constexpr (std::is_same_v<T, float>) {
        return a;
    } else {
        return a.template cast<T>();
    }
}

}  // namespace

std::string_view to_string(TapPoint tap) {
    switch (tap) {
        case TapPoint::Front: return "front";
        case TapPoint::Medium: return "medium";
        case TapPoint::Rear: return "rear";
        case TapPoint::Output: return "output";
    }
    return "?";
}

TapPoint parse_tap(std::string_view text) {
    for (auto tap : {TapPoint::Front, TapPoint::Medium, TapPoint::Rear, TapPoint::Output}) {
        if (text == to_string(tap)) return tap;
    }
    throw ConfigError("unknown tap point '" + std::string(text) + "' (front, medium, rear, output)");
}

std::string StreamSpec::stream_name() const { return in_channels == 2 ? "flow" : "rgb"; }

void StreamSpec::validate() const {
    if (in_channels != 2 && in_channels != 3) {
        throw ConfigError("stream input channels must be 3 (rgb) or 2 (flow), got " + std::to_string(in_channels));
    }
    if (num_classes < 2) throw ConfigError("stream needs at least 2 classes");
    if (block_channels.size() < 3) throw ConfigError("stream needs at least 3 blocks to expose front/medium/rear taps");
    for (auto c : block_channels)
        if (c == 0) throw ConfigError("block channel counts must be positive");
    Triple ext = clip_shape;
    if (ext.t == 0 || ext.h == 0 || ext.w == 0) throw ShapeError("clip extents must be positive");
    for (std::size_t b = 0; b < block_channels.size(); ++b) {
        const Triple win = pool_window(b);
        ext = {ext.t / win.t, ext.h / win.h, ext.w / win.w};
        if (ext.t == 0 || ext.h == 0 || ext.w == 0) {
            throw ShapeError("pooling underflow: clip (" + std::to_string(clip_shape.t) + "," +
                             std::to_string(clip_shape.h) + "," + std::to_string(clip_shape.w) +
                             ") is too small for block " + std::to_string(b + 1));
        }
    }
}

Shape StreamSpec::tap_shape(TapPoint tap) const {
    if (tap == TapPoint::Output) return {block_channels.back()};
    const std::size_t block = static_cast<std::size_t>(tap);
    Triple ext = clip_shape;
    for (std::size_t b = 0; b <= block; ++b) {
        const Triple win = pool_window(b);
        ext = {ext.t / win.t, ext.h / win.h, ext.w / win.w};
    }
    return {block_channels[block], ext.t, ext.h, ext.w};
}

StreamSpec rgb_stream_spec(std::size_t num_classes, Triple clip_shape) {
    StreamSpec s;
    s.in_channels = 3;
    s.num_classes = num_classes;
    s.clip_shape = clip_shape;
    return s;
}

StreamSpec flow_stream_spec(std::size_t num_classes, Triple clip_shape) {
    StreamSpec s = rgb_stream_spec(num_classes, clip_shape);
    s.in_channels = 2;
    return s;
}

template <typename T>
const BasicTensor<T>& BasicTapFeatures<T>::tap(TapPoint point) const {
    switch (point) {
        case TapPoint::Front: return front;
        case TapPoint::Medium: return medium;
        case TapPoint::Rear: return rear;
        case TapPoint::Output: return output;
    }
    return output;
}

FloatArray he_normal(const Shape& shape, std::size_t fan_in, std::uint64_t seed, std::string_view name) {
    FloatArray a(shape);
    auto rng = named_stream(seed, name);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : a.data()) v = static_cast<float>(normal(rng));
    return a;
}

template <typename T>
BasicStreamNetwork<T> build_stream(const StreamSpec& spec, std::uint64_t seed) {
    spec.validate();
    BasicStreamNetwork<T> net;
    net.spec = spec;
    for (const auto& [name, shape] : parameter_layout(spec)) {
        FloatArray init(shape);
        if (shape.size() > 1) {
            const std::size_t fan_in = shape_numel(shape) / shape[0];
            init = he_normal(shape, fan_in, seed, name);
        }
        net.params.push_back({name, BasicTensor<T>::leaf(widen<T>(init), true), false});
    }
    return net;
}

StreamNetwork stream_from_parameters(const StreamSpec& spec, std::span<const Parameter> params) {
    spec.validate();
    std::map<std::string_view, const Parameter*> by_name;
    for (const auto& p : params) by_name[p.name] = &p;
    StreamNetwork net;
    net.spec = spec;
    for (const auto& [name, shape] : parameter_layout(spec)) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint lacks parameter '" + name + "'");
        const auto& value = it->second->tensor.value();
        if (value.shape() != shape) {
            throw FormatError("parameter '" + name + "' has shape " + shape_to_string(value.shape()) + ", expected " +
                              shape_to_string(shape));
        }
        net.params.push_back({name, Tensor::leaf(value, true), it->second->frozen});
    }
    return net;
}

BasicStreamNetwork<double> to_double(const StreamNetwork& net) {
    BasicStreamNetwork<double> out;
    out.spec = net.spec;
    for (const auto& p : net.params) {
        out.params.push_back({p.name, BasicTensor<double>::leaf(p.tensor.value().cast<double>(), true), p.frozen});
    }
    return out;
}

template <typename T>
BasicTapFeatures<T> forward(const BasicStreamNetwork<T>& net, const BasicTensor<T>& clip,
                            std::vector<std::uint32_t>* region) {
    const auto& spec = net.spec;
    const auto& s = clip.shape();
    if (s.size() != 5 || s[1] != spec.in_channels || s[2] != spec.clip_shape.t || s[3] != spec.clip_shape.h ||
        s[4] != spec.clip_shape.w) {
        throw ShapeError("stream " + spec.stream_name() + " expects clips (N," + std::to_string(spec.in_channels) + "," +
                         std::to_string(spec.clip_shape.t) + "," + std::to_string(spec.clip_shape.h) + "," +
                         std::to_string(spec.clip_shape.w) + "), got " + shape_to_string(s));
    }
    BasicTapFeatures<T> f;
    BasicTensor<T> x = clip;
    for (std::size_t b = 0; b < net.num_blocks(); ++b) {
        x = conv3d(x, net.conv_weight(b), net.conv_bias(b), Triple{1, 1, 1}, kSamePad);
        if (region) record_relu(x.value(), *region);
        x = relu(x);
        const Triple win = pool_window(b);
        if (region) record_pool(x.value(), win, *region);
        x = maxpool3d(x, win, win);
        if (b == 0) f.front = x;
        if (b == 1) f.medium = x;
        if (b == 2) f.rear = x;
    }
    f.output = global_avg_pool(x);
    f.logits = linear(f.output, net.classifier_weight(), net.classifier_bias());
    return f;
}

template <typename T>
BasicBridgeAdapter<T> make_adapter(const Shape& teacher_tap_shape, const Shape& student_tap_shape, std::uint64_t seed) {
    if (teacher_tap_shape.size() != 4 || student_tap_shape.size() != 4) {
        throw ShapeError("bridge adapter needs (C,T,H,W) tap shapes, got " + shape_to_string(teacher_tap_shape) +
                         " and " + shape_to_string(student_tap_shape));
    }
    const std::size_t ct = teacher_tap_shape[0], cs = student_tap_shape[0];
    const Shape wshape{cs, ct, 1, 1, 1};
    FloatArray w(wshape);
    if (ct == cs) {
        for (std::size_t i = 0; i < cs; ++i) w[i * ct + i] = 1.0f;
    } else {
        w = he_normal(wshape, ct, seed, "bridge.adapter.w");
    }
    BasicBridgeAdapter<T> a;
    a.target_shape = student_tap_shape;
    a.teacher_channels = ct;
    a.weight = {"bridge.adapter.w", BasicTensor<T>::leaf(widen<T>(w), true), false};
    a.bias = {"bridge.adapter.b", BasicTensor<T>::leaf(NdArray<T>({cs}), true), false};
    return a;
}

template <typename T>
BasicTensor<T> adapt(const BasicBridgeAdapter<T>& adapter, const BasicTensor<T>& teacher_feature) {
    const auto& s = teacher_feature.shape();
    if (s.size() != 5 || s[1] != adapter.teacher_channels) {
        throw ShapeError("bridge adapter expects teacher features (N," + std::to_string(adapter.teacher_channels) +
                         ",T,H,W), got " + shape_to_string(s));
    }
    const auto& tgt = adapter.target_shape;
    BasicTensor<T> x = teacher_feature.detach();
    if (s[2] != tgt[1] || s[3] != tgt[2] || s[4] != tgt[3]) x = adaptive_avg_pool3d(x, Triple{tgt[1], tgt[2], tgt[3]});
    return conv3d(x, adapter.weight.tensor, adapter.bias.tensor, Triple{1, 1, 1}, Triple{0, 0, 0});
}

template struct BasicTapFeatures<float>;
template struct BasicTapFeatures<double>;
template BasicStreamNetwork<float> build_stream<float>(const StreamSpec&, std::uint64_t);
template BasicStreamNetwork<double> build_stream<double>(const StreamSpec&, std::uint64_t);
template BasicTapFeatures<float> forward<float>(const BasicStreamNetwork<float>&, const BasicTensor<float>&,
                                                std::vector<std::uint32_t>*);
template BasicTapFeatures<double> forward<double>(const BasicStreamNetwork<double>&, const BasicTensor<double>&,
                                                  std::vector<std::uint32_t>*);
template BasicBridgeAdapter<float> make_adapter<float>(const Shape&, const Shape&, std::uint64_t);
template BasicBridgeAdapter<double> make_adapter<double>(const Shape&, const Shape&, std::uint64_t);
template BasicTensor<float> adapt<float>(const BasicBridgeAdapter<float>&, const BasicTensor<float>&);
template BasicTensor<double> adapt<double>(const BasicBridgeAdapter<double>&, const BasicTensor<double>&);

}  // namespace x3d
