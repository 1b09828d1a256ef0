// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance            run criteria 1-9
//   acceptance 4 5        run only the listed criteria
//
// Exit status is 0 when every selected criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flow_oracle.hpp"
#include "loss_oracle.hpp"
#include "network_grad_check.hpp"
#include "op_grad_suite.hpp"
#include "test_util.hpp"
#include "x3d/binary_io.hpp"
#include "x3d/checkpoint.hpp"
#include "x3d/config.hpp"
#include "x3d/cross_distill.hpp"
#include "x3d/harness.hpp"
#include "x3d/optical_flow.hpp"
#include "x3d/synth_data.hpp"

using namespace x3d;
using namespace x3d::testing;

namespace {

struct Verdict {
    bool pass = true;
    std::ostringstream detail;
    std::string failures;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            failures += " [failed: " + what + "]";
        }
    }
};

std::string fmt(double v, int digits = 3) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

int cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(std::move(args), out, err);
    if (code != 0) std::fprintf(stderr, "x3d %s", err.str().c_str());
    return code;
}

std::vector<std::string> with(const char* command, std::vector<std::string> flags, std::vector<std::string> extra = {}) {
    flags.insert(flags.begin(), command);
    flags.insert(flags.end(), extra.begin(), extra.end());
    return flags;
}

// A full-size dataset shrunk to a few clips per class so pipelines finish quickly.
std::vector<std::string> small_pipeline(const std::filesystem::path& root, const std::string& run) {
    return {"--set", "paths.data=" + (root / "data").string(),
            "--set", "paths.out=" + (root / run).string(),
            "--set", "dataset.regime=motion-favored",
            "--set", "dataset.clips_per_class=4",
            "--set", "dataset.clip_h=24",
            "--set", "dataset.clip_w=24",
            "--set", "stream.block_channels=4,6,8,8",
            "--set", "train.epochs=3"};
}

// 1: every op against central differences, then the whole stream.
void gradient_suite(Verdict& v) {
    double worst_ratio = 0;
    for (const auto& r : op_gradient_suite()) {
        worst_ratio = std::max(worst_ratio, r.max_error / r.tolerance);
        v.require(r.passed(), r.op + " error " + sci(r.max_error) + " >= " + sci(r.tolerance));
    }
    double strict = 0, within = 0;
    std::size_t crossings = 0, coordinates = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto r = full_network_grad_check(seed);
        strict = std::max(strict, r.max_error);
        within = std::max(within, r.max_error_within_region);
        crossings += r.region_crossings;
        coordinates += r.coordinates;
    }
    v.require(within < 1e-3, "network error " + sci(within));
    v.require(crossings * 2 < coordinates, "most probes cross a kink");
    v.detail << "worst op error/tolerance " << fmt(worst_ratio, 4) << "; network max " << sci(within)
             << " on region-preserving probes (strict " << sci(strict) << ", " << crossings << "/" << coordinates
             << " probes cross a kink)";
}

// 2: a complete student + fusion pipeline leaves the teacher checkpoint byte for byte.
void freeze_invariance(Verdict& v) {
    const auto root = scratch_dir("acceptance_freeze");
    const auto flags = small_pipeline(root, "run");
    for (const char* step : {"gen-data", "precompute-flow", "train-teacher"}) v.require(cli(with(step, flags)) == 0, step);
    const auto teacher = root / "run" / "teacher" / "checkpoint.x3dc";
    const auto before = file_fingerprint(teacher);
    for (const char* step : {"train-student", "train-fusion", "evaluate"}) v.require(cli(with(step, flags)) == 0, step);
    const auto after = file_fingerprint(teacher);
    v.require(before == after, "teacher hash changed");
    v.detail << "teacher hash " << before << " before and " << after << " after";
}

// 3: alpha = beta = 0 reproduces cross-entropy-only training of the same stream.
void degeneration(Verdict& v) {
    auto spec = make_regime(Regime::MotionFavored, 3);
    spec.clips_per_class = 4;
    spec.extent = {8, 16, 16};
    const auto data = build_dataset(spec, TvL1Params{});
    auto stream = [](std::size_t channels) {
        StreamSpec s = channels == 3 ? rgb_stream_spec(8, {8, 16, 16}) : flow_stream_spec(8, {8, 16, 16});
        s.block_channels = {4, 6, 8, 8};
        return s;
    };
    TrainConfig cfg;
    cfg.epochs = 12;
    cfg.seed = 4;
    TrainConfig teacher_cfg = cfg;
    teacher_cfg.epochs = 2;
    const auto teacher = train_teacher(data, stream(2), teacher_cfg);
    const auto baseline = train_teacher(data, stream(3), cfg);
    const auto student = train_student(data, teacher.net, stream(3), {}, {0, 0, 1}, cfg);
    std::size_t identical = 0;
    for (std::size_t e = 0; e < std::min(baseline.history.size(), student.history.size()); ++e) {
        const auto& a = baseline.history[e];
        const auto& b = student.history[e];
        // l1 and l2 are still reported for the student, so only the trained terms are compared.
        if (a.loss.total == b.loss.total && a.loss.l3 == b.loss.l3 && a.train_acc == b.train_acc &&
            a.test_acc == b.test_acc) {
            ++identical;
        }
    }
    v.require(identical == cfg.epochs, "epoch records differ");
    v.require(encode_checkpoint(student.net.params) == encode_checkpoint(baseline.net.params), "final weights differ");
    v.require(baseline.history.back().loss.total < baseline.history.front().loss.total, "loss did not move");
    v.detail << identical << "/" << cfg.epochs << " epochs bit-identical, final weights "
             << (encode_checkpoint(student.net.params) == encode_checkpoint(baseline.net.params) ? "identical" : "differ");
}

// 4: total against an independent scalar recomputation, and linearity in each weight.
void loss_decomposition(Verdict& v) {
    StreamSpec spec = rgb_stream_spec(8, {8, 16, 16});
    spec.block_channels = {4, 6, 8, 8};
    const auto bridges = all_bridges();
    SplitMix64 rng(11);
    double worst = 0, worst_linear = 0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        const auto bridge = bridges[trial % bridges.size()];
        const std::size_t n = 1 + trial % 3;
        const auto student = random_taps(spec, n, 2 * trial + 1, true);
        const auto teacher = random_taps(spec, n, 2 * trial + 2, false);
        const auto adapter =
            make_adapter<float>(spec.tap_shape(bridge.teacher_tap), spec.tap_shape(bridge.student_tap), trial);
        std::vector<std::int32_t> labels;
        for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<std::int32_t>(rng() % 8));
        const LossWeights w{static_cast<float>(rng.uniform() * 2), static_cast<float>(rng.uniform() * 2),
                            static_cast<float>(0.1 + rng.uniform())};

        const auto loss = student_loss(student, teacher, bridge, adapter, w, labels).breakdown;
        const double l1 = ref_mse(student.tap(bridge.student_tap).value(), adapt(adapter, teacher.tap(bridge.teacher_tap)).value());
        const double l2 = ref_mse(student.output.value(), teacher.output.value());
        const double l3 = ref_cross_entropy(student.logits.value(), labels);
        const double expected = double(w.alpha) * l1 + double(w.beta) * l2 + double(w.gamma) * l3;
        worst = std::max(worst, std::abs(loss.total - expected) / std::max(1.0, std::abs(expected)));

        // Scale one weight at a time; the total moves by exactly that term.
        for (int which = 0; which < 3; ++which) {
            LossWeights scaled = w;
            float* slot = which == 0 ? &scaled.alpha : which == 1 ? &scaled.beta : &scaled.gamma;
            const float original = *slot;
            *slot *= 2.5f;
            const auto b = student_loss(student, teacher, bridge, adapter, scaled, labels).breakdown;
            const double term = which == 0 ? loss.l1 : which == 1 ? loss.l2 : loss.l3;
            const double delta = double(*slot - original) * term;
            worst_linear = std::max(worst_linear, std::abs(b.total - loss.total - delta) / std::max(1.0, std::abs(b.total)));
            v.require(b.l1 == loss.l1 && b.l2 == loss.l2 && b.l3 == loss.l3, "terms depend on the weights");
        }
    }
    v.require(worst < 1e-6, "decomposition error " + sci(worst));
    v.require(worst_linear < 1e-6, "linearity error " + sci(worst_linear));
    v.detail << "100 batches, max relative error " << sci(worst) << ", linearity error " << sci(worst_linear);
}

// 5: TV-L1 on integer translations of a textured 64x64 pattern, and on still frames.
void flow_accuracy(Verdict& v) {
    double worst = 0;
    std::size_t cases = 0;
    for (int dy = -4; dy <= 4; ++dy) {
        for (int dx = -4; dx <= 4; ++dx) {
            if (dx * dx + dy * dy > 16 || (dx == 0 && dy == 0)) continue;
            const auto f0 = periodic_texture(64, 500 + static_cast<std::uint64_t>(9 * (dy + 4) + dx + 4));
            const auto f1 = roll(f0, dx, dy);
            const auto oracle = block_matching(f0, f1, 5, 3);
            const double epe = mean_endpoint_error(compute_flow(f0, f1, TvL1Params{}), oracle, 8);
            worst = std::max(worst, epe);
            ++cases;
        }
    }
    float still = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto img = periodic_texture(64, seed);
        const auto f = compute_flow(img, img, TvL1Params{});
        for (std::size_t i = 0; i < f.u.size(); ++i) still = std::max({still, std::abs(f.u[i]), std::abs(f.v[i])});
    }
    v.require(worst < 0.5, "mean endpoint error " + fmt(worst));
    v.require(still < 1e-6f, "zero-motion magnitude " + sci(still));
    v.detail << cases << " shifts, worst mean EPE " << fmt(worst) << " px; zero-motion max |flow| " << sci(still);
}

// 6 and 7 share one set of runs per regime and seed.
struct RegimeRun {
    double rgb = 0;      // cross-entropy-only baselines
    double flow = 0;
    double teacher = 0;  // the stronger stream of the regime
    double student = 0;  // the weaker stream, trained against the teacher
    double baseline_student = 0;
    double fused = 0;    // teacher + student
    double seconds = 0;
};

RegimeRun regime_run(Regime regime, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig config;
    config.seed = seed;
    apply_setting(config, "dataset.regime", to_string(regime));
    config.direction =
        regime == Regime::CameraNoisy ? DistillDirection::RgbTeachesFlow : DistillDirection::FlowTeachesRgb;
    const auto data = build_dataset(config.dataset_spec(), config.flow);
    const auto train = config.train_config();
    const Triple clip{config.dataset.extent.t, config.dataset.extent.h, config.dataset.extent.w};

    const auto rgb = train_teacher(data, rgb_stream_spec(config.dataset.num_classes, clip), train);
    const auto flow = train_teacher(data, flow_stream_spec(config.dataset.num_classes, clip), train);
    const bool flow_teaches = config.direction == DistillDirection::FlowTeachesRgb;
    const auto& teacher = flow_teaches ? flow : rgb;
    const auto student = train_student(data, teacher.net, config.student_stream(), config.bridge, config.loss, train);
    const auto fusion = flow_teaches ? train_fusion(data, student.net, flow.net, train)
                                     : train_fusion(data, rgb.net, student.net, train);

    RegimeRun r;
    r.rgb = evaluate_stream(rgb.net, data, Split::Test).top1;
    r.flow = evaluate_stream(flow.net, data, Split::Test).top1;
    r.teacher = flow_teaches ? r.flow : r.rgb;
    r.baseline_student = flow_teaches ? r.rgb : r.flow;
    r.student = evaluate_stream(student.net, data, Split::Test).top1;
    r.fused = flow_teaches ? evaluate_fusion(fusion.model, student.net, flow.net, data, Split::Test).top1
                           : evaluate_fusion(fusion.model, rgb.net, student.net, data, Split::Test).top1;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

constexpr Regime kRegimes[] = {Regime::MotionFavored, Regime::CameraNoisy};
constexpr std::uint64_t kRegimeSeeds[] = {0, 1, 2};

const std::vector<std::vector<RegimeRun>>& regime_runs() {
    static const std::vector<std::vector<RegimeRun>> runs = [] {
        std::vector<std::vector<RegimeRun>> all;
        for (auto regime : kRegimes) {
            auto& row = all.emplace_back();
            for (auto seed : kRegimeSeeds) {
                row.push_back(regime_run(regime, seed));
                const auto& r = row.back();
                std::printf("  %s seed %llu: rgb %s flow %s student %s fused %s (%.0f s)\n",
                            std::string(to_string(regime)).c_str(), static_cast<unsigned long long>(seed),
                            fmt(r.rgb).c_str(), fmt(r.flow).c_str(), fmt(r.student).c_str(), fmt(r.fused).c_str(),
                            r.seconds);
                std::fflush(stdout);
            }
        }
        return all;
    }();
    return runs;
}

template <typename F>
double mean_of(const std::vector<RegimeRun>& runs, F field) {
    double s = 0;
    for (const auto& r : runs) s += field(r);
    return s / static_cast<double>(runs.size());
}

void regime_reproduction(Verdict& v) {
    const auto& runs = regime_runs();
    double seconds = 0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const double rgb = mean_of(runs[i], [](const RegimeRun& r) { return r.rgb; });
        const double flow = mean_of(runs[i], [](const RegimeRun& r) { return r.flow; });
        const bool flow_wins = kRegimes[i] == Regime::MotionFavored;
        v.require(flow_wins ? flow > rgb : rgb > flow, std::string(to_string(kRegimes[i])) + " ordering");
        v.detail << (i ? "; " : "") << to_string(kRegimes[i]) << " rgb " << fmt(rgb) << " flow " << fmt(flow);
        for (const auto& r : runs[i]) seconds += r.seconds;
    }
    v.detail << " (all regime runs " << fmt(seconds / 60.0, 1) << " CPU-min)";
}

void enhancement_effect(Verdict& v) {
    const auto& runs = regime_runs();
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const std::string name(to_string(kRegimes[i]));
        const double student = mean_of(runs[i], [](const RegimeRun& r) { return r.student; });
        const double baseline = mean_of(runs[i], [](const RegimeRun& r) { return r.baseline_student; });
        const double fused = mean_of(runs[i], [](const RegimeRun& r) { return r.fused; });
        const double best_single = mean_of(runs[i], [](const RegimeRun& r) { return std::max(r.teacher, r.student); });
        int wins = 0;
        for (const auto& r : runs[i]) wins += r.student > r.baseline_student;
        v.require(student >= baseline - 0.01, name + " student below baseline");
        v.require(wins >= 2, name + " student wins " + std::to_string(wins) + "/3");
        v.require(fused >= best_single - 0.02, name + " fusion below best single stream");
        v.detail << (i ? "; " : "") << name << " student " << fmt(student) << " vs baseline " << fmt(baseline) << " ("
                 << wins << "/3 wins), fused " << fmt(fused) << " vs best single " << fmt(best_single);
    }
}

// 8: nine sweep runs against one teacher, and a reproducible pick.
void sweep_integrity(Verdict& v) {
    const auto root = scratch_dir("acceptance_sweep");
    auto flags = small_pipeline(root, "run");
    for (const char* step : {"gen-data", "train-teacher"}) v.require(cli(with(step, flags)) == 0, step);
    v.require(cli(with("sweep", flags, {"--parallel", "1"})) == 0, "sweep");
    const RunLayout layout{root / "run"};

    std::size_t dirs = 0;
    for (const auto& entry : std::filesystem::directory_iterator(layout.sweep_dir())) dirs += entry.is_directory();
    std::set<std::string> hashes;
    for (const auto& b : all_bridges()) hashes.insert(read_file(layout.sweep_run_dir(b) / "teacher_fingerprint"));
    const auto summary = read_file(layout.sweep_summary());
    const auto best = read_file(layout.best_bridge());
    v.require(dirs == 9, std::to_string(dirs) + " run directories");
    v.require(hashes.size() == 1, std::to_string(hashes.size()) + " teacher hashes");
    v.require(hashes.count(file_fingerprint(layout.teacher_dir() / "checkpoint.x3dc") + "\n") == 1,
              "runs do not name the stored teacher");

    v.require(cli(with("sweep", flags, {"--parallel", "2"})) == 0, "parallel sweep");
    v.require(read_file(layout.sweep_summary()) == summary, "parallel summary differs");
    v.require(read_file(layout.best_bridge()) == best, "parallel pick differs");

    // Tie-break: accuracy, then lower final loss, then tap order.
    auto run = [](double acc, double total) {
        SweepRun r;
        r.student_acc = acc;
        r.final_total = total;
        return r;
    };
    const std::vector<SweepRun> tied{run(0.5, 1.0), run(0.7, 2.0), run(0.7, 1.5), run(0.7, 1.5)};
    v.require(select_best(tied) == std::optional<std::size_t>(2), "tie-break order");
    std::string pick = best;
    if (!pick.empty() && pick.back() == '\n') pick.pop_back();
    v.detail << dirs << " runs, " << hashes.size() << " teacher hash, best '" << pick << "' identical serial and parallel";
}

// 9: reruns are byte-identical, stored formats round-trip exactly.
void determinism(Verdict& v) {
    const auto root = scratch_dir("acceptance_determinism");
    std::size_t compared = 0;
    for (const char* run : {"a", "b"}) {
        const auto flags = small_pipeline(root / run, "run");
        for (const char* step : {"gen-data", "precompute-flow", "train-teacher", "train-student", "train-fusion", "evaluate"}) {
            v.require(cli(with(step, flags)) == 0, step);
        }
        // The report pairs each enhanced run with a baseline over the same teacher.
        const std::vector<std::string> baseline = {
            "--set", "loss.alpha=0", "--set", "loss.beta=0",
            "--set", "paths.teacher=" + (root / run / "run" / "teacher" / "checkpoint.x3dc").string()};
        for (const char* step : {"train-student", "train-fusion", "evaluate"}) {
            v.require(cli(with(step, small_pipeline(root / run, "baseline"), baseline)) == 0, step);
        }
        v.require(cli({"report", "--out", (root / run).string()}) == 0, "report");
    }
    const RunLayout a{root / "a" / "run"}, b{root / "b" / "run"};
    const auto a_data = root / "a" / "data", b_data = root / "b" / "data";
    for (const auto& [x, y] : std::vector<std::pair<std::filesystem::path, std::filesystem::path>>{
             {a.teacher_dir() / "checkpoint.x3dc", b.teacher_dir() / "checkpoint.x3dc"},
             {a.student_checkpoint(), b.student_checkpoint()},
             {a.fusion_checkpoint(), b.fusion_checkpoint()},
             {a.teacher_dir() / "metrics.csv", b.teacher_dir() / "metrics.csv"},
             {a.student_dir() / "metrics.csv", b.student_dir() / "metrics.csv"},
             {a.fusion_dir() / "metrics.csv", b.fusion_dir() / "metrics.csv"},
             {a.eval_csv(), b.eval_csv()},
             {root / "a" / "baseline" / "student" / "checkpoint.x3dc", root / "b" / "baseline" / "student" / "checkpoint.x3dc"},
             {root / "a" / "report.txt", root / "b" / "report.txt"},
             {root / "a" / "report.csv", root / "b" / "report.csv"},
             {a_data / "manifest.txt", b_data / "manifest.txt"},
             {clip_path(a_data, 0), clip_path(b_data, 0)},
             {flow_path(a_data, 0), flow_path(b_data, 0)}}) {
        v.require(read_file(x) == read_file(y), x.lexically_relative(root).string() + " differs");
        ++compared;
    }

    std::size_t round_trips = 0;
    for (const auto& ckpt : {a.teacher_dir() / "checkpoint.x3dc", a.student_checkpoint(), a.fusion_checkpoint()}) {
        const auto bytes = read_file(ckpt);
        v.require(encode_checkpoint(decode_checkpoint(bytes)) == bytes, ckpt.filename().string() + " round trip");
        ++round_trips;
    }
    const auto manifest = decode_manifest(read_file(a_data / "manifest.txt"));
    for (std::size_t id = 0; id < manifest.clips.size(); ++id) {
        const auto bytes = read_file(clip_path(a_data, id));
        const auto clip = decode_clip(bytes);
        v.require(encode_clip(clip) == bytes, "clip round trip");
        v.require(clip == render_manifest_clip(manifest, manifest.clips[id]), "stored clip differs from a fresh render");
        ++round_trips;
    }
    v.detail << compared << " artifact pairs byte-identical across reruns, " << round_trips << " files round-trip";
}

struct Criterion {
    int id;
    const char* name;
    std::function<void(Verdict&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "gradient suite", gradient_suite},
        {2, "freeze invariance", freeze_invariance},
        {3, "degeneration equivalence", degeneration},
        {4, "loss decomposition", loss_decomposition},
        {5, "tv-l1 accuracy", flow_accuracy},
        {6, "regime reproduction", regime_reproduction},
        {7, "enhancement effect", enhancement_effect},
        {8, "sweep integrity", sweep_integrity},
        {9, "determinism and formats", determinism},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) {
        char* end = nullptr;
        const long id = std::strtol(argv[i], &end, 10);
        if (*end != '\0' || id < 1 || id > 9) {
            std::fprintf(stderr, "usage: %s [criterion 1-9 ...]\n", argv[0]);
            return 2;
        }
        selected.insert(static_cast<int>(id));
    }

    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        Verdict v;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            c.run(v);
        } catch (const std::exception& e) {
            v.pass = false;
            v.failures += std::string(" [exception: ") + e.what() + "]";
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %d %s: %s (%.1f s) %s\n", c.id, c.name, v.pass ? "PASS" : "FAIL", seconds,
                    (v.detail.str() + v.failures).c_str());
        std::fflush(stdout);
        failures += !v.pass;
    }
    return failures == 0 ? 0 : 1;
}
