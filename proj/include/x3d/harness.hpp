#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "x3d/config.hpp"
#include "x3d/cross_distill.hpp"

namespace x3d {

enum class ExitCode : int {
    Ok = 0,
    Failure = 1,  ///< I/O, format, divergence and other runtime errors
    Usage = 2,    ///< unknown subcommand or malformed command line
    InvalidConfig = 3,
    MissingCheckpoint = 4,
};

/// Files of one run directory (paths.out).
struct RunLayout {
    std::filesystem::path root;

    std::filesystem::path config() const { return root / "config.txt"; }
    std::filesystem::path teacher_dir() const { return root / "teacher"; }
    std::filesystem::path student_dir() const { return root / "student"; }
    std::filesystem::path fusion_dir() const { return root / "fusion"; }
    std::filesystem::path sweep_dir() const { return root / "sweep"; }
    std::filesystem::path student_checkpoint() const { return student_dir() / "checkpoint.x3dc"; }
    std::filesystem::path fusion_checkpoint() const { return fusion_dir() / "checkpoint.x3dc"; }
    std::filesystem::path eval_csv() const { return root / "eval.csv"; }
    std::filesystem::path sweep_summary() const { return root / "sweep_summary.csv"; }
    std::filesystem::path best_bridge() const { return root / "best_bridge"; }
    /// sweep/<teacher tap>-<student tap>
    std::filesystem::path sweep_run_dir(const BridgeConfig& bridge) const;
};

/// Renders the dataset into paths.data (clips, manifest, config.txt).
DatasetManifest run_gen_data(const RunConfig& config);
/// Fills the flow cache of paths.data; returns the number of clips.
std::size_t run_precompute_flow(const RunConfig& config);
/// Loads paths.data and checks it was generated from config's dataset settings.
Dataset load_run_dataset(const RunConfig& config);

/// Each phase writes checkpoint.x3dc, metrics.csv and config.txt into its
/// directory of the run layout (the teacher checkpoint goes to paths.teacher
/// when that is set).
TrainedStream run_train_teacher(const RunConfig& config);
TrainedStudent run_train_student(const RunConfig& config);
TrainedFusion run_train_fusion(const RunConfig& config);

struct RunEvaluation {
    Evaluation rgb;
    Evaluation flow;
    Evaluation fused;
};

/// Test-split accuracy of both streams and the fusion; writes eval.csv.
RunEvaluation run_evaluate(const RunConfig& config);

/// Nine students against the stored teacher; writes one directory per bridge,
/// sweep_summary.csv and best_bridge.
SweepResult run_sweep(const RunConfig& config);

/// Averages eval.csv over the runs below `root` (root itself and its direct
/// subdirectories that hold a config.txt, datasets excepted) and writes report.txt and report.csv.
/// Returns the text table. Throws IoError naming every run without results.
std::string run_report(const std::filesystem::path& root);

/// The `x3d` command line. Never throws; failures print one `error: ...`
/// line to `err` and return the matching ExitCode.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace x3d
