#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "colodiff/config.hpp"

// One function per CLI verb. Each writes its outputs plus the fully resolved
// config and a rerun manifest into the --out directory, prints a one-line
// summary to stdout, and reports failures by throwing (the CLI maps the
// error taxonomy to exit codes).
namespace colodiff::cmd {

struct CommonArgs {
    std::filesystem::path config_path;  // empty = built-in defaults
    bool seed_set = false;
    uint64_t seed = 0;  // overrides the config seed when seed_set
    std::filesystem::path out;
};

// Resolve defaults <- config file <- --seed override.
RunConfig load_config(const CommonArgs& args);

void cmd_gen_data(const CommonArgs& args);

void cmd_fit_codec(const CommonArgs& args, const std::filesystem::path& data);

void cmd_fit_extractor(const CommonArgs& args, const std::filesystem::path& data);

struct TrainArgs {
    std::filesystem::path data;
    std::filesystem::path codec;
    std::filesystem::path resume;  // empty = fresh run
    int max_steps_override = -1;   // -1 = use config
};
void cmd_train(const CommonArgs& args, const TrainArgs& ta);

struct SampleArgs {
    std::filesystem::path ckpt;   // train output dir or a bare checkpoint dir
    std::filesystem::path codec;
    int label = -1;               // -1 = cycle through all classes
    int steps = -1;               // -1 = config
    int count = -1;               // -1 = config
    bool use_raw = false;         // default: EMA weights
};
void cmd_sample(const CommonArgs& args, const SampleArgs& sa);

struct EvalArgs {
    std::filesystem::path real;       // dataset dir
    std::filesystem::path gen;        // sample output dir or another dataset dir
    std::filesystem::path extractor;
};
void cmd_eval(const CommonArgs& args, const EvalArgs& ea);

struct BenchArgs {
    std::filesystem::path ckpt;
    std::filesystem::path codec;
    std::filesystem::path data;
    std::filesystem::path extractor;
    bool use_raw = false;
};
void cmd_bench_steps(const CommonArgs& args, const BenchArgs& ba);

struct AblateArgs {
    std::filesystem::path data;
    std::filesystem::path codec;
    std::filesystem::path extractor;
    std::string variant;
    int max_steps_override = -1;
};
void cmd_ablate(const CommonArgs& args, const AblateArgs& aa);

}  // namespace colodiff::cmd
