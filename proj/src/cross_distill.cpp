#include "x3d/cross_distill.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <thread>

#include "x3d/checkpoint.hpp"
#include "x3d/error.hpp"
#include "x3d/ops.hpp"
#include "x3d/rng.hpp"

namespace x3d {
namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t init_seed(std::uint64_t seed, const StreamSpec& spec) {
    return derive_seed(seed, "init." + spec.stream_name());
}

const std::vector<FloatArray>& stream_inputs(const Dataset& data, const StreamSpec& spec) {
    return spec.in_channels == 3 ? data.rgb : data.flow;
}

void check_compatible(const Dataset& data, const StreamSpec& spec) {
    const auto& ds = data.manifest.spec;
    if (ds.num_classes != spec.num_classes) {
        throw ConfigError("stream has " + std::to_string(spec.num_classes) + " classes but the dataset has " +
                          std::to_string(ds.num_classes));
    }
    const Triple ext{ds.extent.t, ds.extent.h, ds.extent.w};
    if (!(ext == spec.clip_shape)) throw ConfigError("stream clip shape does not match the dataset clips");
    if (data.rgb.size() != data.manifest.clips.size() || data.flow.size() != data.manifest.clips.size()) {
        throw ConfigError("dataset is missing rgb or flow clips");
    }
}

FloatArray gather(const std::vector<FloatArray>& clips, std::span<const std::size_t> ids) {
    Shape shape = clips.at(ids.front()).shape();
    const std::size_t per = shape_numel(shape);
    shape.insert(shape.begin(), ids.size());
    FloatArray out(shape);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto& c = clips.at(ids[i]);
        std::copy(c.data().begin(), c.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return out;
}

// Rows `ids` of an (N, D) array.
FloatArray gather_rows(const FloatArray& table, std::span<const std::size_t> ids) {
    const std::size_t d = table.shape()[1];
    FloatArray out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                    out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return out;
}

std::vector<std::int32_t> gather_labels(const Dataset& data, std::span<const std::size_t> ids) {
    std::vector<std::int32_t> out;
    out.reserve(ids.size());
    for (auto id : ids) out.push_back(data.manifest.clips.at(id).class_id);
    return out;
}

std::size_t count_correct(const FloatArray& scores, std::span<const std::int32_t> labels) {
    const std::size_t c = scores.shape()[1];
    std::size_t hits = 0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        const float* row = scores.data().data() + n * c;
        hits += static_cast<std::int32_t>(std::max_element(row, row + c) - row) == labels[n];
    }
    return hits;
}

// Shuffled minibatches of the training split; one generator across epochs.
class Batcher {
   public:
    Batcher(std::vector<std::size_t> ids, std::size_t batch, std::uint64_t seed)
        : ids_(std::move(ids)), batch_(batch), rng_(named_stream(seed, "shuffle")) {
        if (ids_.empty()) throw ConfigError("training split is empty");
    }

    std::vector<std::vector<std::size_t>> next_epoch() {
        std::shuffle(ids_.begin(), ids_.end(), rng_);
        std::vector<std::vector<std::size_t>> out;
        for (std::size_t i = 0; i < ids_.size(); i += batch_) {
            out.emplace_back(ids_.begin() + static_cast<std::ptrdiff_t>(i),
                             ids_.begin() + static_cast<std::ptrdiff_t>(std::min(ids_.size(), i + batch_)));
        }
        return out;
    }

   private:
    std::vector<std::size_t> ids_;
    std::size_t batch_;
    SplitMix64 rng_;
};

// Clip-weighted means over one epoch.
struct EpochStats {
    LossBreakdown sum;
    std::size_t clips = 0;
    std::size_t correct = 0;

    void add(const LossBreakdown& b, std::size_t n, std::size_t hits) {
        const double w = static_cast<double>(n);
        sum.l1 += b.l1 * w;
        sum.l2 += b.l2 * w;
        sum.l3 += b.l3 * w;
        sum.total += b.total * w;
        clips += n;
        correct += hits;
    }

    TrainRunRecord record(Phase phase, std::size_t epoch) const {
        const double n = static_cast<double>(clips);
        TrainRunRecord r;
        r.phase = phase;
        r.epoch = epoch;
        r.loss = {sum.l1 / n, sum.l2 / n, sum.l3 / n, sum.total / n};
        r.train_acc = static_cast<double>(correct) / n;
        return r;
    }
};

void save_progress(const TrainConfig& config, std::span<const Parameter> params) {
    if (!config.checkpoint_path.empty()) save_checkpoint(config.checkpoint_path, params);
}

[[noreturn]] void diverged(Phase phase, std::size_t epoch, const TrainConfig& config, const std::exception& e) {
    std::string msg = std::string(to_string(phase)) + " training diverged in epoch " + std::to_string(epoch) + ": " +
                      e.what();
    if (!config.checkpoint_path.empty()) msg += " (last finite parameters in " + config.checkpoint_path.string() + ")";
    throw DivergenceError(msg, config.checkpoint_path.string());
}

double seconds_since(Clock::time_point start, const TrainConfig& config) {
    if (!config.record_wall_time) return 0.0;
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string format_g6(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

constexpr std::size_t kEvalBatch = 16;

// Mean student loss over the training split at the current parameters.
LossBreakdown mean_student_loss(const Dataset& data, const StreamNetwork& teacher, const TrainedStudent& s,
                                const LossWeights& weights) {
    NoGradGuard no_grad;
    const auto ids = data.manifest.indices(Split::Train);
    EpochStats stats;
    for (std::size_t i = 0; i < ids.size(); i += kEvalBatch) {
        const std::span<const std::size_t> batch(ids.data() + i, std::min(kEvalBatch, ids.size() - i));
        const auto labels = gather_labels(data, batch);
        const auto tf = forward(teacher, Tensor::leaf(gather(stream_inputs(data, teacher.spec), batch)));
        const auto sf = forward(s.net, Tensor::leaf(gather(stream_inputs(data, s.net.spec), batch)));
        stats.add(student_loss(sf, tf, s.bridge, s.adapter, weights, labels).breakdown, batch.size(), 0);
    }
    return stats.record(Phase::Student, 0).loss;
}

}  // namespace

std::string_view to_string(DistillDirection d) {
    return d == DistillDirection::FlowTeachesRgb ? "flow-teaches-rgb" : "rgb-teaches-flow";
}

DistillDirection parse_direction(std::string_view text) {
    if (text == "flow-teaches-rgb") return DistillDirection::FlowTeachesRgb;
    if (text == "rgb-teaches-flow") return DistillDirection::RgbTeachesFlow;
    throw ConfigError("unknown direction '" + std::string(text) + "' (flow-teaches-rgb, rgb-teaches-flow)");
}

void LossWeights::validate() const {
    for (float w : {alpha, beta, gamma}) {
        if (!std::isfinite(w) || w < 0.0f) throw ConfigError("loss weights must be finite and >= 0");
    }
    if (alpha == 0.0f && beta == 0.0f && gamma == 0.0f) throw ConfigError("loss weights cannot all be zero");
}

void BridgeConfig::validate() const {
    if (teacher_tap == TapPoint::Output || student_tap == TapPoint::Output) {
        throw ConfigError("bridge taps must be front, medium or rear");
    }
}

std::vector<BridgeConfig> all_bridges() {
    std::vector<BridgeConfig> out;
    for (auto t : kBridgeTaps)
        for (auto s : kBridgeTaps) out.push_back({t, s});
    return out;
}

StudentLoss student_loss(const TapFeatures& student, const TapFeatures& teacher, const BridgeConfig& bridge,
                         const BridgeAdapter& adapter, const LossWeights& weights,
                         std::span<const std::int32_t> labels) {
    bridge.validate();
    auto bridged = [&] { return mse(student.tap(bridge.student_tap), adapt(adapter, teacher.tap(bridge.teacher_tap))); };
    auto mimic = [&] { return mse(student.output, teacher.output.detach()); };

    Tensor l1, l2;
    if (weights.alpha != 0.0f) {
        l1 = bridged();
    } else {
        NoGradGuard no_grad;
        l1 = bridged();
    }
    if (weights.beta != 0.0f) {
        l2 = mimic();
    } else {
        NoGradGuard no_grad;
        l2 = mimic();
    }
    const auto ce = softmax_cross_entropy(student.logits, labels);

    Tensor total;
    auto push = [&total](const Tensor& term, float w) {
        if (w == 0.0f) return;
        const Tensor weighted = scale(term, w);
        total = total.defined() ? add(total, weighted) : weighted;
    };
    push(l1, weights.alpha);
    push(l2, weights.beta);
    push(ce.loss, weights.gamma);
    if (!total.defined()) throw ConfigError("loss weights cannot all be zero");

    StudentLoss out;
    out.total = total;
    out.breakdown = {l1.item(), l2.item(), ce.loss.item(), total.item()};
    return out;
}

std::string_view to_string(Phase p) {
    switch (p) {
        case Phase::Teacher: return "teacher";
        case Phase::Student: return "student";
        case Phase::Fusion: return "fusion";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    optimizer.validate();
}

StreamSpec student_spec(DistillDirection d, std::size_t num_classes, Triple clip_shape) {
    return d == DistillDirection::FlowTeachesRgb ? rgb_stream_spec(num_classes, clip_shape)
                                                 : flow_stream_spec(num_classes, clip_shape);
}

StreamSpec teacher_spec(DistillDirection d, std::size_t num_classes, Triple clip_shape) {
    return d == DistillDirection::FlowTeachesRgb ? flow_stream_spec(num_classes, clip_shape)
                                                 : rgb_stream_spec(num_classes, clip_shape);
}

TrainedStream train_teacher(const Dataset& data, const StreamSpec& spec, const TrainConfig& config) {
    config.validate();
    check_compatible(data, spec);
    TrainedStream out;
    out.net = build_stream<float>(spec, init_seed(config.seed, spec));
    auto& params = out.net.params;
    const auto& inputs = stream_inputs(data, spec);
    Sgd sgd(config.optimizer);
    Batcher batcher(data.manifest.indices(Split::Train), config.batch_size, config.seed);
    save_progress(config, params);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = Clock::now();
        EpochStats stats;
        try {
            for (const auto& batch : batcher.next_epoch()) {
                const auto labels = gather_labels(data, batch);
                zero_grad(params);
                const auto features = forward(out.net, Tensor::leaf(gather(inputs, batch)));
                const auto ce = softmax_cross_entropy(features.logits, labels);
                ce.loss.backward();
                sgd.step(params);
                const double l3 = ce.loss.item();
                stats.add({0.0, 0.0, l3, l3}, batch.size(), count_correct(ce.probabilities, labels));
            }
        } catch (const NonFiniteError& e) {
            diverged(Phase::Teacher, epoch, config, e);
        }
        auto record = stats.record(Phase::Teacher, epoch);
        record.test_acc = evaluate_stream(out.net, data, Split::Test).top1;
        record.seconds = seconds_since(start, config);
        out.history.push_back(record);
        save_progress(config, params);
    }
    zero_grad(params);
    return out;
}

std::vector<Parameter> freeze(const std::filesystem::path& checkpoint) {
    auto params = load_checkpoint(checkpoint);
    freeze_all(params);
    return params;
}

std::vector<Parameter> TrainedStudent::parameters() const {
    std::vector<Parameter> out = net.params;
    out.push_back(adapter.weight);
    out.push_back(adapter.bias);
    return out;
}

TrainedStudent train_student(const Dataset& data, const StreamNetwork& teacher, const StreamSpec& spec,
                             const BridgeConfig& bridge, const LossWeights& weights, const TrainConfig& config) {
    config.validate();
    weights.validate();
    bridge.validate();
    check_compatible(data, spec);
    check_compatible(data, teacher.spec);
    if (teacher.spec.in_channels == spec.in_channels) {
        throw ConfigError("teacher and student must be different streams (one rgb, one flow)");
    }

    TrainedStudent out;
    out.bridge = bridge;
    out.net = build_stream<float>(spec, init_seed(config.seed, spec));
    out.adapter = make_adapter<float>(teacher.spec.tap_shape(bridge.teacher_tap), spec.tap_shape(bridge.student_tap),
                                      derive_seed(config.seed, "adapter"));
    std::vector<Parameter> trainable = out.parameters();
    const auto& student_inputs = stream_inputs(data, spec);
    const auto& teacher_inputs = stream_inputs(data, teacher.spec);
    Sgd sgd(config.optimizer);
    Batcher batcher(data.manifest.indices(Split::Train), config.batch_size, config.seed);
    save_progress(config, trainable);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = Clock::now();
        EpochStats stats;
        try {
            for (const auto& batch : batcher.next_epoch()) {
                const auto labels = gather_labels(data, batch);
                TapFeatures tf;
                {
                    NoGradGuard no_grad;
                    tf = forward(teacher, Tensor::leaf(gather(teacher_inputs, batch)));
                }
                zero_grad(trainable);
                const auto sf = forward(out.net, Tensor::leaf(gather(student_inputs, batch)));
                const auto loss = student_loss(sf, tf, bridge, out.adapter, weights, labels);
                loss.total.backward();
                sgd.step(trainable);
                stats.add(loss.breakdown, batch.size(), count_correct(sf.logits.value(), labels));
            }
        } catch (const NonFiniteError& e) {
            diverged(Phase::Student, epoch, config, e);
        }
        auto record = stats.record(Phase::Student, epoch);
        record.test_acc = evaluate_stream(out.net, data, Split::Test).top1;
        record.seconds = seconds_since(start, config);
        out.history.push_back(record);
        save_progress(config, trainable);
    }
    zero_grad(trainable);
    return out;
}

TrainedStudent student_from_parameters(const StreamSpec& spec, const StreamSpec& teacher, const BridgeConfig& bridge,
                                       std::span<const Parameter> params) {
    bridge.validate();
    TrainedStudent out;
    out.bridge = bridge;
    out.net = stream_from_parameters(spec, params);
    out.adapter = make_adapter<float>(teacher.tap_shape(bridge.teacher_tap), spec.tap_shape(bridge.student_tap), 0);
    for (auto* slot : {&out.adapter.weight, &out.adapter.bias}) {
        auto it = std::find_if(params.begin(), params.end(), [&](const Parameter& p) { return p.name == slot->name; });
        if (it == params.end()) throw FormatError("checkpoint lacks parameter '" + slot->name + "'");
        if (it->tensor.shape() != slot->tensor.shape()) {
            throw FormatError("parameter '" + slot->name + "' has shape " + shape_to_string(it->tensor.shape()) +
                              ", expected " + shape_to_string(slot->tensor.shape()) + " for this bridge");
        }
        slot->tensor = Tensor::leaf(it->tensor.value(), true);
        slot->frozen = it->frozen;
    }
    return out;
}

FusionModel make_fusion(std::size_t num_classes) {
    FloatArray w({num_classes, 2 * num_classes});
    for (std::size_t c = 0; c < num_classes; ++c) {
        w[c * 2 * num_classes + c] = 0.5f;
        w[c * 2 * num_classes + num_classes + c] = 0.5f;
    }
    return {{"fusion.w", Tensor::leaf(std::move(w), true), false},
            {"fusion.b", Tensor::leaf(FloatArray({num_classes}), true), false}};
}

FusionModel fusion_from_parameters(std::span<const Parameter> params) {
    const Parameter* w = nullptr;
    const Parameter* b = nullptr;
    for (const auto& p : params) {
        if (p.name == "fusion.w") w = &p;
        if (p.name == "fusion.b") b = &p;
    }
    if (!w || !b) throw FormatError("checkpoint lacks fusion.w or fusion.b");
    const auto& ws = w->tensor.shape();
    const auto& bs = b->tensor.shape();
    if (ws.size() != 2 || bs.size() != 1 || ws[0] != bs[0] || ws[1] != 2 * bs[0]) {
        throw FormatError("fusion parameters have shapes " + shape_to_string(ws) + " and " + shape_to_string(bs) +
                          ", expected (C,2C) and (C)");
    }
    return {{w->name, Tensor::leaf(w->tensor.value(), true), w->frozen},
            {b->name, Tensor::leaf(b->tensor.value(), true), b->frozen}};
}

namespace {

FloatArray fused_inputs(const StreamNetwork& rgb, const StreamNetwork& flow, const Dataset& data,
                        std::span<const std::size_t> ids) {
    NoGradGuard no_grad;
    return concat_features(Tensor::leaf(stream_logits(rgb, data, ids)), Tensor::leaf(stream_logits(flow, data, ids)))
        .value();
}

}  // namespace

TrainedFusion train_fusion(const Dataset& data, const StreamNetwork& rgb, const StreamNetwork& flow,
                           const TrainConfig& config) {
    config.validate();
    if (rgb.spec.num_classes != flow.spec.num_classes) {
        throw ConfigError("cannot fuse streams with " + std::to_string(rgb.spec.num_classes) + " and " +
                          std::to_string(flow.spec.num_classes) + " classes");
    }
    if (rgb.spec.in_channels != 3 || flow.spec.in_channels != 2) {
        throw ConfigError("fusion expects an rgb stream and a flow stream");
    }
    check_compatible(data, rgb.spec);
    check_compatible(data, flow.spec);

    std::vector<std::size_t> all(data.manifest.clips.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const FloatArray table = fused_inputs(rgb, flow, data, all);
    const auto test_ids = data.manifest.indices(Split::Test);
    const auto test_labels = gather_labels(data, test_ids);

    TrainedFusion out;
    out.model = make_fusion(rgb.spec.num_classes);
    std::vector<Parameter> params = out.model.parameters();
    Sgd sgd(config.optimizer);
    Batcher batcher(data.manifest.indices(Split::Train), config.batch_size, derive_seed(config.seed, "fusion"));
    save_progress(config, params);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = Clock::now();
        EpochStats stats;
        try {
            for (const auto& batch : batcher.next_epoch()) {
                const auto labels = gather_labels(data, batch);
                zero_grad(params);
                const auto logits =
                    linear(Tensor::leaf(gather_rows(table, batch)), out.model.weight.tensor, out.model.bias.tensor);
                const auto ce = softmax_cross_entropy(logits, labels);
                ce.loss.backward();
                sgd.step(params);
                const double l3 = ce.loss.item();
                stats.add({0.0, 0.0, l3, l3}, batch.size(), count_correct(ce.probabilities, labels));
            }
        } catch (const NonFiniteError& e) {
            diverged(Phase::Fusion, epoch, config, e);
        }
        auto record = stats.record(Phase::Fusion, epoch);
        {
            NoGradGuard no_grad;
            const auto logits =
                linear(Tensor::leaf(gather_rows(table, test_ids)), out.model.weight.tensor, out.model.bias.tensor);
            record.test_acc = score_logits(logits.value(), test_labels).top1;
        }
        record.seconds = seconds_since(start, config);
        out.history.push_back(record);
        save_progress(config, params);
    }
    zero_grad(params);
    return out;
}

Evaluation score_logits(const FloatArray& logits, std::span<const std::int32_t> labels) {
    if (logits.rank() != 2 || logits.shape()[0] != labels.size()) {
        throw ShapeError("score_logits: logits " + shape_to_string(logits.shape()) + " do not match " +
                         std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) throw ShapeError("cannot evaluate an empty split");
    const std::size_t c = logits.shape()[1];
    Evaluation e;
    std::vector<std::size_t> hits(c, 0), counts(c, 0);
    std::size_t correct = 0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        const float* row = logits.data().data() + n * c;
        const auto pred = static_cast<std::int32_t>(std::max_element(row, row + c) - row);
        e.predictions.push_back(pred);
        const auto y = static_cast<std::size_t>(labels[n]);
        if (y >= c) throw ShapeError("label " + std::to_string(labels[n]) + " outside " + std::to_string(c) + " classes");
        ++counts[y];
        if (pred == labels[n]) {
            ++hits[y];
            ++correct;
        }
    }
    e.top1 = static_cast<double>(correct) / static_cast<double>(labels.size());
    for (std::size_t k = 0; k < c; ++k) {
        e.per_class.push_back(counts[k] ? static_cast<double>(hits[k]) / static_cast<double>(counts[k])
                                        : std::numeric_limits<double>::quiet_NaN());
    }
    return e;
}

FloatArray stream_logits(const StreamNetwork& net, const Dataset& data, std::span<const std::size_t> ids) {
    check_compatible(data, net.spec);
    if (ids.empty()) throw ShapeError("cannot evaluate an empty split");
    NoGradGuard no_grad;
    const auto& inputs = stream_inputs(data, net.spec);
    const std::size_t c = net.spec.num_classes;
    FloatArray out({ids.size(), c});
    for (std::size_t i = 0; i < ids.size(); i += kEvalBatch) {
        const std::span<const std::size_t> batch = ids.subspan(i, std::min(kEvalBatch, ids.size() - i));
        const auto logits = forward(net, Tensor::leaf(gather(inputs, batch))).logits.value();
        std::copy(logits.data().begin(), logits.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    return out;
}

Evaluation evaluate_stream(const StreamNetwork& net, const Dataset& data, Split split) {
    const auto ids = data.manifest.indices(split);
    if (ids.empty()) throw ShapeError("cannot evaluate an empty " + std::string(to_string(split)) + " split");
    return score_logits(stream_logits(net, data, ids), gather_labels(data, ids));
}

Evaluation evaluate_fusion(const FusionModel& fusion, const StreamNetwork& rgb, const StreamNetwork& flow,
                           const Dataset& data, Split split) {
    const auto ids = data.manifest.indices(split);
    if (ids.empty()) throw ShapeError("cannot evaluate an empty " + std::string(to_string(split)) + " split");
    NoGradGuard no_grad;
    const auto logits = linear(Tensor::leaf(fused_inputs(rgb, flow, data, ids)), fusion.weight.tensor, fusion.bias.tensor);
    return score_logits(logits.value(), gather_labels(data, ids));
}

std::optional<std::size_t> select_best(std::span<const SweepRun> runs) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        if (!runs[i].ok()) continue;
        if (!best) {
            best = i;
            continue;
        }
        const auto& a = runs[i];
        const auto& b = runs[*best];
        // Earlier index wins full ties because runs come in tap order.
        if (a.student_acc > b.student_acc || (a.student_acc == b.student_acc && a.final_total < b.final_total)) best = i;
    }
    return best;
}

SweepResult sweep_bridges(const Dataset& data, const StreamNetwork& teacher, DistillDirection direction,
                          const LossWeights& weights, const TrainConfig& config, std::size_t parallel,
                          const std::function<TrainConfig(const BridgeConfig&)>& run_config) {
    config.validate();
    weights.validate();
    auto spec = student_spec(direction, teacher.spec.num_classes, teacher.spec.clip_shape);
    spec.block_channels = teacher.spec.block_channels;
    if (teacher.spec.in_channels == spec.in_channels) {
        throw ConfigError("teacher stream does not match direction " + std::string(to_string(direction)));
    }

    SweepResult result;
    for (const auto& b : all_bridges()) result.runs.push_back(SweepRun{b, {}, 0.0, 0.0, 0.0, {}, {}, {}});

    auto run_one = [&](SweepRun& run) {
        try {
            const TrainConfig cfg = run_config ? run_config(run.bridge) : config;
            auto student = train_student(data, teacher, spec, run.bridge, weights, cfg);
            TrainConfig fusion_cfg = cfg;
            fusion_cfg.checkpoint_path.clear();
            const bool rgb_student = direction == DistillDirection::FlowTeachesRgb;
            const auto& rgb = rgb_student ? student.net : teacher;
            const auto& flow = rgb_student ? teacher : student.net;
            auto fusion = train_fusion(data, rgb, flow, fusion_cfg);
            run.history = student.history;
            run.history.insert(run.history.end(), fusion.history.begin(), fusion.history.end());
            run.student_acc = evaluate_stream(student.net, data, Split::Test).top1;
            run.fused_acc = evaluate_fusion(fusion.model, rgb, flow, data, Split::Test).top1;
            run.final_total = student.history.empty() ? mean_student_loss(data, teacher, student, weights).total
                                                      : student.history.back().loss.total;
            run.student = std::move(student);
            run.fusion = std::move(fusion.model);
        } catch (const Error& e) {
            run.error = e.what();
        }
    };

    const std::size_t workers = std::clamp<std::size_t>(parallel, 1, result.runs.size());
    if (workers == 1) {
        for (auto& run : result.runs) run_one(run);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < result.runs.size(); i = next++) run_one(result.runs[i]);
            });
        }
        for (auto& t : pool) t.join();
    }
    result.best = select_best(result.runs);
    return result;
}

std::string metrics_csv(std::span<const TrainRunRecord> records) {
    std::string out = "phase,epoch,l1,l2,l3,total,train_acc,test_acc,seconds\n";
    for (const auto& r : records) {
        out += std::string(to_string(r.phase)) + "," + std::to_string(r.epoch) + "," + format_g6(r.loss.l1) + "," +
               format_g6(r.loss.l2) + "," + format_g6(r.loss.l3) + "," + format_g6(r.loss.total) + "," +
               format_g6(r.train_acc) + "," + format_g6(r.test_acc) + "," + format_g6(r.seconds) + "\n";
    }
    return out;
}

std::string sweep_csv(std::span<const SweepRun> runs) {
    std::string out = "teacher_tap,student_tap,student_acc,fused_acc,final_total\n";
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& r : runs) {
        out += std::string(to_string(r.bridge.teacher_tap)) + "," + std::string(to_string(r.bridge.student_tap)) + "," +
               format_g6(r.ok() ? r.student_acc : nan) + "," + format_g6(r.ok() ? r.fused_acc : nan) + "," +
               format_g6(r.ok() ? r.final_total : nan) + "\n";
    }
    return out;
}

}  // namespace x3d
