#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "x3d/optim.hpp"
#include "x3d/stream_network.hpp"
#include "x3d/synth_data.hpp"

namespace x3d {

enum class DistillDirection { FlowTeachesRgb, RgbTeachesFlow };

std::string_view to_string(DistillDirection d);
/// Accepts "flow-teaches-rgb" and "rgb-teaches-flow".
DistillDirection parse_direction(std::string_view text);

/// Weights of the intermediate bridge (alpha), output bridge (beta) and
/// cross-entropy (gamma) terms.
struct LossWeights {
    float alpha = 1.0f;
    float beta = 1.0f;
    float gamma = 1.0f;

    /// Throws ConfigError for negative or non-finite weights, or all three zero.
    void validate() const;
    bool operator==(const LossWeights&) const = default;
};

struct BridgeConfig {
    TapPoint teacher_tap = TapPoint::Rear;
    TapPoint student_tap = TapPoint::Rear;

    /// Throws ConfigError unless both taps are Front, Medium or Rear.
    void validate() const;
    bool operator==(const BridgeConfig&) const = default;
};

/// The nine (teacher, student) tap pairs, teacher-major in tap order.
std::vector<BridgeConfig> all_bridges();

struct LossBreakdown {
    double l1 = 0.0;     ///< intermediate bridge mse
    double l2 = 0.0;     ///< output bridge mse
    double l3 = 0.0;     ///< cross entropy
    double total = 0.0;  ///< alpha*l1 + beta*l2 + gamma*l3

    bool operator==(const LossBreakdown&) const = default;
};

struct StudentLoss {
    Tensor total;  ///< differentiable; terms with zero weight are left out of the graph
    LossBreakdown breakdown;
};

/// Combines the three terms. Teacher features are detached; every term is
/// evaluated (for reporting) even when its weight is zero.
StudentLoss student_loss(const TapFeatures& student, const TapFeatures& teacher, const BridgeConfig& bridge,
                         const BridgeAdapter& adapter, const LossWeights& weights,
                         std::span<const std::int32_t> labels);

enum class Phase { Teacher, Student, Fusion };
std::string_view to_string(Phase p);

struct TrainRunRecord {
    Phase phase = Phase::Teacher;
    std::size_t epoch = 0;  ///< 1-based
    LossBreakdown loss;     ///< means over the epoch's training clips
    double train_acc = 0.0;
    double test_acc = 0.0;
    double seconds = 0.0;   ///< 0 unless TrainConfig::record_wall_time
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 6;
    OptimizerConfig optimizer{};
    std::uint64_t seed = 0;
    /// Wall time in the records makes them differ between identical runs.
    bool record_wall_time = false;
    /// When set, the parameters are written here after initialisation and after
    /// every finite epoch, so a diverged run leaves its last good state behind.
    std::filesystem::path checkpoint_path;

    void validate() const;
};

struct TrainedStream {
    StreamNetwork net;
    std::vector<TrainRunRecord> history;
};

/// Cross-entropy-only training of one stream (the teacher phase; also the
/// bridge-free baseline). The stream kind picks the RGB or flow clips.
/// Throws DivergenceError on a non-finite loss or gradient.
TrainedStream train_teacher(const Dataset& data, const StreamSpec& spec, const TrainConfig& config);

/// Loads a checkpoint and marks every parameter frozen. Throws
/// MissingCheckpointError or FormatError (including a CRC mismatch).
std::vector<Parameter> freeze(const std::filesystem::path& checkpoint);

struct TrainedStudent {
    StreamNetwork net;
    BridgeAdapter adapter;
    BridgeConfig bridge;
    std::vector<TrainRunRecord> history;

    /// Student parameters followed by the adapter's, as stored on disk.
    std::vector<Parameter> parameters() const;
};

/// Trains the student stream against a frozen teacher. Initialisation and
/// shuffling match train_teacher for the same seed and stream, so with
/// alpha = beta = 0 and gamma = 1 the two produce identical trajectories.
TrainedStudent train_student(const Dataset& data, const StreamNetwork& teacher, const StreamSpec& student_spec,
                             const BridgeConfig& bridge, const LossWeights& weights, const TrainConfig& config);

/// Rebuilds a student and its adapter from stored parameters.
TrainedStudent student_from_parameters(const StreamSpec& student_spec, const StreamSpec& teacher_spec,
                                       const BridgeConfig& bridge, std::span<const Parameter> params);

/// Linear layer over the concatenated [rgb, flow] logits.
struct FusionModel {
    Parameter weight;  ///< "fusion.w", (C, 2C)
    Parameter bias;    ///< "fusion.b", (C)

    std::size_t num_classes() const { return bias.tensor.size(); }
    std::vector<Parameter> parameters() const { return {weight, bias}; }
};

/// [I | I] / 2 and zero bias: the average of the two streams' logits.
FusionModel make_fusion(std::size_t num_classes);
FusionModel fusion_from_parameters(std::span<const Parameter> params);

struct TrainedFusion {
    FusionModel model;
    std::vector<TrainRunRecord> history;
};

/// Trains only the fusion layer; both streams stay fixed. Throws ConfigError
/// when the streams disagree on the class count.
TrainedFusion train_fusion(const Dataset& data, const StreamNetwork& rgb, const StreamNetwork& flow,
                           const TrainConfig& config);

struct Evaluation {
    double top1 = 0.0;
    std::vector<double> per_class;  ///< NaN for classes absent from the split
    std::vector<std::int32_t> predictions;
};

/// Arg-max accuracy of (N, C) logits. Throws ShapeError on an empty split.
Evaluation score_logits(const FloatArray& logits, std::span<const std::int32_t> labels);

/// (N, C) logits of a stream for the given clip ids, in order.
FloatArray stream_logits(const StreamNetwork& net, const Dataset& data, std::span<const std::size_t> ids);

Evaluation evaluate_stream(const StreamNetwork& net, const Dataset& data, Split split);
Evaluation evaluate_fusion(const FusionModel& fusion, const StreamNetwork& rgb, const StreamNetwork& flow,
                           const Dataset& data, Split split);

struct SweepRun {
    BridgeConfig bridge;
    std::vector<TrainRunRecord> history;
    double student_acc = 0.0;
    double fused_acc = 0.0;
    double final_total = 0.0;
    std::string error;  ///< non-empty when the run failed
    std::optional<TrainedStudent> student;
    std::optional<FusionModel> fusion;

    bool ok() const { return error.empty(); }
};

struct SweepResult {
    std::vector<SweepRun> runs;  ///< all_bridges() order
    std::optional<std::size_t> best;
};

/// Highest student accuracy, then lower final total, then earlier tap order.
/// Failed runs are skipped.
std::optional<std::size_t> select_best(std::span<const SweepRun> runs);

/// Trains one student per bridge pair against the same frozen teacher, plus a
/// fusion layer for each. Students copy the teacher's block widths. Runs are
/// independent; `parallel` > 1 spreads them over that many threads with
/// results identical to a serial sweep.
/// `run_config` may customise each run's TrainConfig (e.g. its checkpoint path).
SweepResult sweep_bridges(const Dataset& data, const StreamNetwork& teacher, DistillDirection direction,
                          const LossWeights& weights, const TrainConfig& config, std::size_t parallel = 1,
                          const std::function<TrainConfig(const BridgeConfig&)>& run_config = {});

/// "phase,epoch,l1,l2,l3,total,train_acc,test_acc,seconds" with %.6g floats.
std::string metrics_csv(std::span<const TrainRunRecord> records);
/// "teacher_tap,student_tap,student_acc,fused_acc,final_total"; failed runs
/// print "nan" metrics.
std::string sweep_csv(std::span<const SweepRun> runs);

/// Stream spec of the student / teacher for a direction.
StreamSpec student_spec(DistillDirection d, std::size_t num_classes, Triple clip_shape);
StreamSpec teacher_spec(DistillDirection d, std::size_t num_classes, Triple clip_shape);

}  // namespace x3d
