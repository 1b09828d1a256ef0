#include "x3d/harness.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>

#include "x3d/binary_io.hpp"
#include "x3d/checkpoint.hpp"
#include "x3d/error.hpp"

namespace x3d {
namespace {

constexpr const char* kCheckpointFile = "checkpoint.x3dc";
constexpr const char* kMetricsFile = "metrics.csv";

void write_text(const std::filesystem::path& path, const std::string& text) { write_file_atomic(path, text); }

// Loads a stream from a checkpoint that may hold extra (adapter) parameters.
StreamNetwork load_stream(const StreamSpec& spec, const std::filesystem::path& path, bool frozen) {
    auto params = frozen ? freeze(path) : load_checkpoint(path);
    return stream_from_parameters(spec, params);
}

struct Streams {
    StreamNetwork rgb;
    StreamNetwork flow;
};

Streams load_both_streams(const RunConfig& config) {
    const RunLayout layout{config.out_dir};
    auto teacher = load_stream(config.teacher_stream(), config.teacher_path(), true);
    auto student = load_stream(config.student_stream(), layout.student_checkpoint(), true);
    if (config.direction == DistillDirection::FlowTeachesRgb) return {std::move(student), std::move(teacher)};
    return {std::move(teacher), std::move(student)};
}

std::string format_g6(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string format_fixed3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

void write_phase(const std::filesystem::path& dir, const RunConfig& config, std::span<const TrainRunRecord> history) {
    write_text(dir / kMetricsFile, metrics_csv(history));
    save_config(dir / "config.txt", config);
}

const char* kEvalRows[] = {"rgb", "flow", "rgb+flow"};

}  // namespace

std::filesystem::path RunLayout::sweep_run_dir(const BridgeConfig& bridge) const {
    return sweep_dir() / (std::string(to_string(bridge.teacher_tap)) + "-" + std::string(to_string(bridge.student_tap)));
}

DatasetManifest run_gen_data(const RunConfig& config) {
    config.validate();
    auto manifest = generate_dataset(config.dataset_spec(), config.data_dir);
    save_config(config.data_dir / "config.txt", config);
    return manifest;
}

std::size_t run_precompute_flow(const RunConfig& config) {
    config.validate();
    return precompute_flow(config.data_dir, config.flow);
}

Dataset load_run_dataset(const RunConfig& config) {
    config.validate();
    auto data = load_dataset(config.data_dir, config.flow);
    if (!(data.manifest.spec == config.dataset_spec())) {
        throw ConfigError("dataset in " + config.data_dir.string() +
                          " was generated with different dataset settings or seed; rerun gen-data");
    }
    return data;
}

TrainedStream run_train_teacher(const RunConfig& config) {
    const auto data = load_run_dataset(config);
    const RunLayout layout{config.out_dir};
    auto train = config.train_config();
    train.checkpoint_path = config.teacher_path();
    auto result = train_teacher(data, config.teacher_stream(), train);
    write_phase(layout.teacher_dir(), config, result.history);
    save_config(layout.config(), config);
    return result;
}

TrainedStudent run_train_student(const RunConfig& config) {
    config.validate();
    const RunLayout layout{config.out_dir};
    const auto teacher = load_stream(config.teacher_stream(), config.teacher_path(), true);
    const auto data = load_run_dataset(config);
    auto train = config.train_config();
    train.checkpoint_path = layout.student_checkpoint();
    auto result = train_student(data, teacher, config.student_stream(), config.bridge, config.loss, train);
    write_phase(layout.student_dir(), config, result.history);
    save_config(layout.config(), config);
    return result;
}

TrainedFusion run_train_fusion(const RunConfig& config) {
    config.validate();
    const RunLayout layout{config.out_dir};
    const auto streams = load_both_streams(config);
    const auto data = load_run_dataset(config);
    auto train = config.train_config();
    train.checkpoint_path = layout.fusion_checkpoint();
    auto result = train_fusion(data, streams.rgb, streams.flow, train);
    write_phase(layout.fusion_dir(), config, result.history);
    save_config(layout.config(), config);
    return result;
}

RunEvaluation run_evaluate(const RunConfig& config) {
    config.validate();
    const RunLayout layout{config.out_dir};
    const auto streams = load_both_streams(config);
    const auto fusion = fusion_from_parameters(load_checkpoint(layout.fusion_checkpoint()));
    const auto data = load_run_dataset(config);

    RunEvaluation e;
    e.rgb = evaluate_stream(streams.rgb, data, Split::Test);
    e.flow = evaluate_stream(streams.flow, data, Split::Test);
    e.fused = evaluate_fusion(fusion, streams.rgb, streams.flow, data, Split::Test);

    std::string csv = "model,top1";
    for (std::size_t c = 0; c < config.dataset.num_classes; ++c) csv += ",class_" + std::to_string(c);
    csv += "\n";
    const Evaluation* rows[] = {&e.rgb, &e.flow, &e.fused};
    for (std::size_t i = 0; i < 3; ++i) {
        csv += std::string(kEvalRows[i]) + "," + format_g6(rows[i]->top1);
        for (double a : rows[i]->per_class) csv += "," + format_g6(a);
        csv += "\n";
    }
    write_text(layout.eval_csv(), csv);
    save_config(layout.config(), config);
    return e;
}

SweepResult run_sweep(const RunConfig& config) {
    config.validate();
    const RunLayout layout{config.out_dir};
    const auto teacher_file = config.teacher_path();
    const auto teacher = load_stream(config.teacher_stream(), teacher_file, true);
    const auto data = load_run_dataset(config);

    const auto base = config.train_config();
    auto result = sweep_bridges(data, teacher, config.direction, config.loss, base, config.parallel,
                                [&](const BridgeConfig& bridge) {
                                    auto t = base;
                                    t.checkpoint_path = layout.sweep_run_dir(bridge) / kCheckpointFile;
                                    return t;
                                });

    const std::string teacher_hash = file_fingerprint(teacher_file);
    for (const auto& run : result.runs) {
        const auto dir = layout.sweep_run_dir(run.bridge);
        RunConfig run_config = config;
        run_config.bridge = run.bridge;
        write_phase(dir, run_config, run.history);
        write_text(dir / "teacher_fingerprint", teacher_hash + "\n");
        if (run.fusion) save_checkpoint(dir / "fusion.x3dc", run.fusion->parameters());
        if (!run.ok()) write_text(dir / "error.txt", run.error + "\n");
    }
    write_text(layout.sweep_summary(), sweep_csv(result.runs));
    std::string best = "none\n";
    if (result.best) {
        const auto& b = result.runs[*result.best].bridge;
        best = std::string(to_string(b.teacher_tap)) + " " + std::string(to_string(b.student_tap)) + "\n";
    }
    write_text(layout.best_bridge(), best);
    save_config(layout.config(), config);
    return result;
}

namespace {

// Top-1 per eval row of one run.
std::map<std::string, double> read_eval(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);
    if (line.rfind("model,top1", 0) != 0) throw FormatError(path.string() + ": unexpected header");
    std::map<std::string, double> out;
    while (std::getline(in, line)) {
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos) throw FormatError(path.string() + ": malformed row");
        out[line.substr(0, c1)] = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    }
    for (const char* row : kEvalRows) {
        if (!out.count(row)) throw FormatError(path.string() + ": missing row '" + row + "'");
    }
    return out;
}

struct Cell {
    double sum[3] = {0, 0, 0};
    std::size_t runs = 0;
};

}  // namespace

std::string run_report(const std::filesystem::path& root) {
    if (!std::filesystem::is_directory(root)) throw IoError("run directory " + root.string() + " does not exist");
    std::vector<std::filesystem::path> dirs;
    if (std::filesystem::exists(root / "config.txt")) dirs.push_back(root);
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        const auto& p = entry.path();
        // Dataset directories also carry a config.txt but hold no results.
        if (entry.is_directory() && std::filesystem::exists(p / "config.txt") && !std::filesystem::exists(p / "manifest.txt")) {
            dirs.push_back(p);
        }
    }
    std::sort(dirs.begin() + (dirs.empty() || dirs.front() != root ? 0 : 1), dirs.end());

    // (regime, pipeline) with pipeline 0 = baseline, 1 = enhanced.
    std::map<std::pair<Regime, int>, Cell> cells;
    std::vector<std::string> missing;
    for (const auto& dir : dirs) {
        const RunLayout layout{dir};
        if (!std::filesystem::exists(layout.eval_csv())) {
            if (dir != root) missing.push_back(dir.filename().string());
            continue;
        }
        const auto config = load_config(layout.config());
        const auto eval = read_eval(layout.eval_csv());
        const int pipeline = config.loss.alpha == 0.0f && config.loss.beta == 0.0f ? 0 : 1;
        auto& cell = cells[{config.dataset.regime, pipeline}];
        for (int i = 0; i < 3; ++i) cell.sum[i] += eval.at(kEvalRows[i]);
        ++cell.runs;
    }
    if (cells.empty() && missing.empty()) missing.push_back(root.filename().string());

    std::vector<Regime> regimes;
    for (const auto& [key, cell] : cells) {
        if (std::find(regimes.begin(), regimes.end(), key.first) == regimes.end()) regimes.push_back(key.first);
    }
    for (auto r : regimes) {
        for (int p = 0; p < 2; ++p) {
            if (!cells.count({r, p})) {
                missing.push_back(std::string(to_string(r)) + (p == 0 ? "/baseline" : "/enhanced"));
            }
        }
    }
    if (!missing.empty()) {
        std::string names;
        for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
        throw IoError("missing run data: " + names);
    }

    std::string text;
    std::string csv = "regime,pipeline,rgb,flow,rgb_flow,runs\n";
    for (auto r : regimes) {
        if (!text.empty()) text += "\n";
        text += "regime: " + std::string(to_string(r)) + "\n";
        text += "pipeline    RGB    Flow   RGB+Flow\n";
        for (int p = 0; p < 2; ++p) {
            const auto& cell = cells.at({r, p});
            const char* name = p == 0 ? "baseline" : "enhanced";
            std::string acc[3];
            for (int i = 0; i < 3; ++i) acc[i] = format_fixed3(cell.sum[i] / static_cast<double>(cell.runs));
            char line[96];
            std::snprintf(line, sizeof line, "%-10s  %-5s  %-5s  %s\n", name, acc[0].c_str(), acc[1].c_str(),
                          acc[2].c_str());
            text += line;
            csv += std::string(to_string(r)) + "," + name + "," + acc[0] + "," + acc[1] + "," + acc[2] + "," +
                   std::to_string(cell.runs) + "\n";
        }
    }
    write_text(root / "report.txt", text);
    write_text(root / "report.csv", csv);
    return text;
}

namespace {

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

int fail(std::ostream& err, ExitCode code, std::string_view kind, const std::string& message) {
    err << "error: " << kind << ": " << one_line(message) << "\n";
    return static_cast<int>(code);
}

}  // namespace

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Two-stream video action recognition with cross-stream distillation", "x3d"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> sets;
    std::string seed, out_dir, parallel;
    app.add_option("--config", config_path, "flat key = value config file");
    app.add_option("--set", sets, "override one key, key=value (repeatable, last wins)")->take_all();
    app.add_option("--seed", seed, "shorthand for --set seed=N");
    app.add_option("--out", out_dir, "shorthand for --set paths.out=DIR");
    app.add_option("--parallel", parallel, "shorthand for --set sweep.parallel=N");

    const char* commands[][2] = {
        {"gen-data", "render the synthetic dataset into paths.data"},
        {"precompute-flow", "compute and cache TV-L1 flow for paths.data"},
        {"train-teacher", "train the teacher stream with cross-entropy only"},
        {"train-student", "train the student stream against the frozen teacher"},
        {"train-fusion", "train the fusion layer over both frozen streams"},
        {"evaluate", "test-split accuracy of both streams and the fusion"},
        {"sweep", "train one student per bridge pair and pick the best"},
        {"report", "tabulate baseline vs enhanced runs under paths.out"},
    };
    for (const auto& c : commands) app.add_subcommand(c[0], c[1]);

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return static_cast<int>(ExitCode::Ok);
    } catch (const CLI::ParseError& e) {
        return fail(err, ExitCode::Usage, "usage", e.what());
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
        for (const auto& s : sets) apply_assignment(config, s);
        if (!seed.empty()) apply_setting(config, "seed", seed);
        if (!out_dir.empty()) apply_setting(config, "paths.out", out_dir);
        if (!parallel.empty()) apply_setting(config, "sweep.parallel", parallel);
        if (command != "report") config.validate();

        const RunLayout layout{config.out_dir};
        if (command == "gen-data") {
            const auto m = run_gen_data(config);
            out << "wrote " << m.clips.size() << " clips to " << config.data_dir.string() << "\n";
        } else if (command == "precompute-flow") {
            out << "cached flow for " << run_precompute_flow(config) << " clips\n";
        } else if (command == "train-teacher") {
            const auto r = run_train_teacher(config);
            out << "teacher test accuracy " << format_fixed3(r.history.empty() ? 0.0 : r.history.back().test_acc) << "\n";
        } else if (command == "train-student") {
            const auto r = run_train_student(config);
            out << "student test accuracy " << format_fixed3(r.history.empty() ? 0.0 : r.history.back().test_acc) << "\n";
        } else if (command == "train-fusion") {
            const auto r = run_train_fusion(config);
            out << "fusion test accuracy " << format_fixed3(r.history.empty() ? 0.0 : r.history.back().test_acc) << "\n";
        } else if (command == "evaluate") {
            const auto e = run_evaluate(config);
            out << "rgb " << format_fixed3(e.rgb.top1) << " flow " << format_fixed3(e.flow.top1) << " rgb+flow "
                << format_fixed3(e.fused.top1) << "\n";
        } else if (command == "sweep") {
            const auto r = run_sweep(config);
            out << sweep_csv(r.runs);
            if (!r.best) return fail(err, ExitCode::Failure, "sweep", "every bridge run failed");
        } else if (command == "report") {
            out << run_report(config.out_dir);
        }
        return static_cast<int>(ExitCode::Ok);
    } catch (const ConfigError& e) {
        return fail(err, ExitCode::InvalidConfig, "config", e.what());
    } catch (const MissingCheckpointError& e) {
        return fail(err, ExitCode::MissingCheckpoint, "missing-checkpoint", e.what());
    } catch (const DivergenceError& e) {
        return fail(err, ExitCode::Failure, "divergence", e.what());
    } catch (const Error& e) {
        return fail(err, ExitCode::Failure, "runtime", e.what());
    } catch (const std::exception& e) {
        return fail(err, ExitCode::Failure, "internal", e.what());
    }
}

}  // namespace x3d
