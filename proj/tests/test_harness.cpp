#include <doctest.h>

#include <sstream>

#include "test_util.hpp"
#include "x3d/binary_io.hpp"
#include "x3d/config.hpp"
#include "x3d/error.hpp"
#include "x3d/harness.hpp"

using namespace x3d;

namespace {

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(std::move(args), out, err);
    return {code, out.str(), err.str()};
}

// A pipeline small enough for a unit test.
std::vector<std::string> tiny(const std::filesystem::path& root, const std::string& run) {
    return {"--set", "paths.data=" + (root / "data").string(),
            "--set", "paths.out=" + (root / run).string(),
            "--set", "dataset.regime=motion-favored",
            "--set", "dataset.clips_per_class=3",
            "--set", "dataset.clip_h=16",
            "--set", "dataset.clip_w=16",
            "--set", "stream.block_channels=3,4,4,4",
            "--set", "train.epochs=2"};
}

std::vector<std::string> with(std::string command, std::vector<std::string> flags, std::vector<std::string> extra = {}) {
    flags.insert(flags.begin(), std::move(command));
    flags.insert(flags.end(), extra.begin(), extra.end());
    return flags;
}

}  // namespace

TEST_CASE("config text round-trips every key") {
    RunConfig c;
    c.seed = 12345678901234ull;
    c.data_dir = "some/data";
    c.teacher_checkpoint = "t.x3dc";
    c.dataset.regime = Regime::Custom;
    c.dataset.camera_noise_sigma = 1.0 / 3.0;
    c.dataset.speed = 2.5;
    c.dataset.appearance_cue = true;
    c.flow.lambda = 0.1;
    c.flow.warps_per_level = 2;
    c.block_channels = {4, 8, 8, 16};
    c.direction = DistillDirection::RgbTeachesFlow;
    c.bridge = {TapPoint::Front, TapPoint::Medium};
    c.loss = {0.1f, 0.2f, 0.3f};
    c.optimizer.learning_rate = 0.003f;
    c.epochs = 7;
    c.wall_time = true;
    c.parallel = 3;
    const auto text = encode_config(c);
    CHECK(decode_config(text) == c);
    CHECK(encode_config(decode_config(text)) == text);
    CHECK(text.find("optimizer.momentum = 0.899999976\n") != std::string::npos);
    CHECK(decode_config(encode_config(RunConfig{})) == RunConfig{});
}

TEST_CASE("config parsing errors") {
    CHECK_THROWS_AS(decode_config("nonsense.key = 1\n"), ConfigError);
    CHECK_THROWS_AS(decode_config("train.epochs = ten\n"), ConfigError);
    CHECK_THROWS_AS(decode_config("train.epochs\n"), ConfigError);
    CHECK_THROWS_AS(decode_config("dataset.appearance_cue = yes\n"), ConfigError);
    CHECK_THROWS_AS(decode_config("bridge.teacher_tap = output\n").validate(), ConfigError);
    CHECK_THROWS_AS(decode_config("loss.alpha = 0\nloss.beta = 0\nloss.gamma = 0\n").validate(), ConfigError);
    CHECK_THROWS_AS(decode_config("train.batch_size = 0\n").validate(), ConfigError);
    const auto c = decode_config("# comment\n\n  train.epochs =  4  \n");
    CHECK(c.epochs == 4);
}

TEST_CASE("regime presets and overrides") {
    RunConfig c;
    apply_assignment(c, "dataset.regime=camera-noisy");
    CHECK(c.dataset.camera_noise_sigma == 3.0);
    CHECK(c.dataset.appearance_cue);
    CHECK_NOTHROW(c.validate());
    apply_assignment(c, "dataset.camera_noise_sigma=1");
    CHECK_THROWS_AS(c.validate(), ConfigError);
    apply_assignment(c, "dataset.regime=custom");
    CHECK_NOTHROW(c.validate());
    // Last assignment wins.
    apply_assignment(c, "train.epochs=3");
    apply_assignment(c, "train.epochs=5");
    CHECK(c.epochs == 5);
    CHECK_THROWS_AS(apply_assignment(c, "train.epochs"), ConfigError);
}

TEST_CASE("derived specs follow the direction") {
    RunConfig c;
    c.block_channels = {4, 4, 4, 4};
    CHECK(c.teacher_stream().in_channels == 2);
    CHECK(c.student_stream().in_channels == 3);
    CHECK(c.student_stream().block_channels == c.block_channels);
    c.direction = DistillDirection::RgbTeachesFlow;
    CHECK(c.teacher_stream().in_channels == 3);
    CHECK(c.teacher_path() == std::filesystem::path("run/teacher/checkpoint.x3dc"));
    c.teacher_checkpoint = "elsewhere.x3dc";
    CHECK(c.teacher_path() == std::filesystem::path("elsewhere.x3dc"));
}

TEST_CASE("cli exit codes") {
    const auto root = x3d::testing::scratch_dir("cli_codes");
    auto r = cli({"frobnicate"});
    CHECK(r.code == 2);
    CHECK(r.err.rfind("error: usage:", 0) == 0);
    CHECK(cli({}).code == 2);
    CHECK(cli({"train-teacher", "--bogus-flag"}).code == 2);

    r = cli(with("gen-data", tiny(root, "run"), {"--set", "no.such.key=1"}));
    CHECK(r.code == 3);
    CHECK(r.err == "error: config: unknown config key 'no.such.key'\n");
    CHECK(cli(with("gen-data", tiny(root, "run"), {"--seed", "minus one"})).code == 3);
    CHECK(cli({"evaluate", "--config", (root / "absent.txt").string()}).code == 3);

    r = cli(with("train-student", tiny(root, "run")));
    CHECK(r.code == 4);
    CHECK(r.err.rfind("error: missing-checkpoint:", 0) == 0);
    CHECK(r.err.find('\n') == r.err.size() - 1);

    CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("full pipeline through the cli") {
    const auto root = x3d::testing::scratch_dir("cli_pipeline");
    const auto flags = tiny(root, "enhanced");
    for (const char* step : {"gen-data", "precompute-flow", "train-teacher", "train-student", "train-fusion", "evaluate"}) {
        const auto r = cli(with(step, flags));
        INFO(step << ": " << r.err);
        REQUIRE(r.code == 0);
    }
    const RunLayout enhanced{root / "enhanced"};
    for (const auto& f : {enhanced.config(), enhanced.teacher_dir() / "checkpoint.x3dc", enhanced.teacher_dir() / "metrics.csv",
                          enhanced.student_checkpoint(), enhanced.student_dir() / "metrics.csv",
                          enhanced.fusion_checkpoint(), enhanced.fusion_dir() / "metrics.csv", enhanced.eval_csv()}) {
        CHECK_MESSAGE(std::filesystem::exists(f), f.string());
    }
    // Every phase leaves its resolved config behind, and it reloads.
    const auto resolved = load_config(enhanced.student_dir() / "config.txt");
    CHECK(resolved.epochs == 2);
    CHECK(resolved.block_channels == std::vector<std::size_t>{3, 4, 4, 4});
    CHECK(read_file(enhanced.student_dir() / "metrics.csv").rfind("phase,epoch,l1,l2,l3,total,train_acc,test_acc,seconds\nstudent,1,", 0) == 0);
    CHECK(read_file(enhanced.eval_csv()).rfind("model,top1,class_0,", 0) == 0);

    // Baseline pipeline: same teacher, bridges switched off.
    const std::string teacher = "paths.teacher=" + enhanced.teacher_dir().string() + "/checkpoint.x3dc";
    const auto base_flags = tiny(root, "baseline");
    for (const char* step : {"train-student", "train-fusion", "evaluate"}) {
        const auto r = cli(with(step, base_flags, {"--set", "loss.alpha=0", "--set", "loss.beta=0", "--set", teacher}));
        INFO(step << ": " << r.err);
        REQUIRE(r.code == 0);
    }

    auto r = cli({"report", "--out", root.string()});
    REQUIRE(r.code == 0);
    const auto text = read_file(root / "report.txt");
    CHECK(r.out == text);
    CHECK(text.rfind("regime: motion-favored\npipeline    RGB    Flow   RGB+Flow\nbaseline    ", 0) == 0);
    CHECK(text.find("\nenhanced    ") != std::string::npos);
    const auto csv = read_file(root / "report.csv");
    CHECK(csv.rfind("regime,pipeline,rgb,flow,rgb_flow,runs\nmotion-favored,baseline,", 0) == 0);

    // Report numbers are the eval values rounded to 3 decimals.
    std::istringstream eval(read_file(enhanced.eval_csv()));
    std::string line;
    std::getline(eval, line);
    std::getline(eval, line);
    char rounded[16];
    std::snprintf(rounded, sizeof rounded, "%.3f", std::stod(line.substr(line.find(',') + 1)));
    CHECK(csv.find("motion-favored,enhanced," + std::string(rounded) + ",") != std::string::npos);

    // Regenerating from unchanged runs is byte-identical.
    CHECK(cli({"report", "--out", root.string()}).code == 0);
    CHECK(read_file(root / "report.txt") == text);
    CHECK(read_file(root / "report.csv") == csv);

    // Same resolved config twice gives the same bytes.
    const auto again = tiny(root, "again");
    for (const char* step : {"train-teacher", "train-student", "train-fusion"}) REQUIRE(cli(with(step, again)).code == 0);
    for (const char* phase : {"teacher", "student", "fusion"}) {
        CAPTURE(phase);
        CHECK(read_file(root / "again" / phase / "metrics.csv") == read_file(root / "enhanced" / phase / "metrics.csv"));
        CHECK(read_file(root / "again" / phase / "checkpoint.x3dc") ==
              read_file(root / "enhanced" / phase / "checkpoint.x3dc"));
    }
}

TEST_CASE("report names missing run data") {
    const auto root = x3d::testing::scratch_dir("cli_report_missing");
    save_config(root / "half" / "config.txt", RunConfig{});
    const auto r = cli({"report", "--out", root.string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("missing run data: half") != std::string::npos);
    CHECK(cli({"report", "--out", (root / "nowhere").string()}).code == 1);
}

TEST_CASE("sweep through the cli") {
    const auto root = x3d::testing::scratch_dir("cli_sweep");
    auto flags = tiny(root, "run");
    flags.insert(flags.end(), {"--set", "train.epochs=1"});
    for (const char* step : {"gen-data", "train-teacher"}) REQUIRE(cli(with(step, flags)).code == 0);
    const auto teacher_bytes = read_file(root / "run" / "teacher" / "checkpoint.x3dc");
    const auto r = cli(with("sweep", flags, {"--parallel", "2"}));
    INFO(r.err);
    REQUIRE(r.code == 0);

    const RunLayout layout{root / "run"};
    const auto summary = read_file(layout.sweep_summary());
    CHECK(std::count(summary.begin(), summary.end(), '\n') == 10);
    CHECK(r.out == summary);
    std::string fingerprint;
    for (const auto& b : all_bridges()) {
        const auto dir = layout.sweep_run_dir(b);
        CHECK(std::filesystem::exists(dir / "checkpoint.x3dc"));
        CHECK(std::filesystem::exists(dir / "fusion.x3dc"));
        const auto f = read_file(dir / "teacher_fingerprint");
        if (fingerprint.empty()) fingerprint = f;
        CHECK(f == fingerprint);
        CHECK(load_config(dir / "config.txt").bridge == b);
    }
    CHECK(read_file(root / "run" / "teacher" / "checkpoint.x3dc") == teacher_bytes);
    const auto best = read_file(layout.best_bridge());
    CHECK(best.size() > 1);

    // A serial rerun picks the same bridge and writes the same summary.
    REQUIRE(cli(with("sweep", flags, {"--parallel", "1"})).code == 0);
    CHECK(read_file(layout.sweep_summary()) == summary);
    CHECK(read_file(layout.best_bridge()) == best);
}
