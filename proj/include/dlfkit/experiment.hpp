#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dlfkit/dlf.hpp"

namespace dlfkit {

/// One property check executed by `verify`.
struct PropertyResult {
    std::string name;
    bool pass = false;
    double measured = 0.0;
    double tolerance = 0.0;
};

struct VerifyReport {
    std::string suite;
    std::uint64_t seed = 0;
    std::vector<PropertyResult> results;
    bool passed() const;
    std::string to_json() const;
};

/// Runs the named invariant suite (all | diffusion | affine | gradcheck |
/// sgcl) with fixed seeds. Throws on unknown suite names.
VerifyReport run_verify_suite(const std::string& suite, std::uint64_t seed);

/// Command entry points shared by the CLI and tests. Each returns the
/// process exit code: 0 success, 1 verification failure, 2 config error.
/// All data files they emit are pure functions of (config, seed);
/// wall-clock timestamps only ever land in <out>/run_manifest.json.
int cmd_verify(const std::string& suite, const std::string& out_dir,
               std::optional<std::uint64_t> seed);
int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed);
int cmd_sweep(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed);
int cmd_demo_generate(const std::string& config_path, const std::string& out_dir,
                      std::optional<std::uint64_t> seed);

// ---- pieces reused by the acceptance tests ----

struct SweepCell {
    std::string method;  // "dlf" | "baseline"
    std::string corruption;  // "clean" or a CorruptionKind name
    double magnitude = 0.0;
    std::uint64_t seed = 0;
    double fg_f1 = 0.0;
    double center_mae = 0.0;
};

struct SweepConfig {
    TrainConfig train = TrainConfig::defaults();
    SceneConfig scene;
    int n_train_scenes = 80;
    int n_eval_scenes = 40;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::vector<std::string> methods = {"dlf", "baseline"};
    std::vector<CorruptionSpec> grid;

    static SweepConfig defaults();
    std::string to_json() const;
    static SweepConfig from_json(const std::string& text);
};

/// Trains one model per (method, seed) and evaluates it clean plus on every
/// grid point. Parallelism is capped by DLFKIT_THREADS (default: hardware
/// concurrency); each cell runs single-threaded for determinism.
std::vector<SweepCell> run_sweep(const SweepConfig& cfg);

}  // namespace dlfkit
