#include <cstdio>
#include <cstdlib>
#include <exception>
#include <string>

#include <CLI11.hpp>

#if defined(_OPENMP)
#include <omp.h>
#endif

#include "colodiff/error.hpp"
#include "../src/commands.hpp"

namespace {

// COLODIFF_THREADS caps worker parallelism; default = available cores.
void apply_thread_cap() {
#if defined(_OPENMP)
    if (const char* env = std::getenv("COLODIFF_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) omp_set_num_threads(std::min(n, omp_get_num_procs()));
    }
#endif
}

}  // namespace

int main(int argc, char** argv) {
    apply_thread_cap();

    CLI::App app{"colodiff: conditional video diffusion on a synthetic dataset"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand name

    colodiff::cmd::CommonArgs common;
    std::string config_path, out_path;
    uint64_t seed = 0;
    app.add_option("--config", config_path, "JSON config overriding the defaults")
        ->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "seed overriding the config");
    app.add_option("--out", out_path, "output directory");

    std::string data_dir, codec_dir, extractor_dir, ckpt_dir, real_dir, gen_dir, resume_dir;
    std::string variant;
    int label = -1, steps = -1, count = -1, max_steps = -1;
    bool use_raw = false;

    auto* c_gen = app.add_subcommand("gen-data", "render the synthetic video dataset");
    auto* c_codec = app.add_subcommand("fit-codec", "fit the patch PCA codec");
    c_codec->add_option("--data", data_dir, "dataset directory")->required();
    auto* c_extr = app.add_subcommand("fit-extractor", "train the metric feature classifier");
    c_extr->add_option("--data", data_dir, "dataset directory")->required();
    auto* c_train = app.add_subcommand("train", "train the denoiser");
    c_train->add_option("--data", data_dir, "dataset directory")->required();
    c_train->add_option("--codec", codec_dir, "codec directory")->required();
    c_train->add_option("--resume", resume_dir, "checkpoint directory to resume from");
    c_train->add_option("--max-steps", max_steps, "override the configured step budget");
    auto* c_sample = app.add_subcommand("sample", "generate clips from a checkpoint");
    c_sample->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
    c_sample->add_option("--codec", codec_dir, "codec directory")->required();
    c_sample->add_option("--label", label, "class label; -1 cycles all classes");
    c_sample->add_option("--steps", steps, "sampling steps (default: config)");
    c_sample->add_option("--count", count, "number of clips (default: config)");
    c_sample->add_flag("--raw", use_raw, "use raw weights instead of EMA");
    auto* c_eval = app.add_subcommand("eval", "score a generated set against real clips");
    c_eval->add_option("--real", real_dir, "real dataset directory")->required();
    c_eval->add_option("--gen", gen_dir, "generated set (sample output or dataset dir)")
        ->required();
    c_eval->add_option("--extractor", extractor_dir, "extractor directory")->required();
    auto* c_bench = app.add_subcommand("bench-steps", "time/score several step counts");
    c_bench->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
    c_bench->add_option("--codec", codec_dir, "codec directory")->required();
    c_bench->add_option("--data", data_dir, "dataset directory")->required();
    c_bench->add_option("--extractor", extractor_dir, "extractor directory")->required();
    c_bench->add_flag("--raw", use_raw, "use raw weights instead of EMA");
    auto* c_ablate = app.add_subcommand("ablate", "train and score one model variant");
    c_ablate->add_option("--data", data_dir, "dataset directory")->required();
    c_ablate->add_option("--codec", codec_dir, "codec directory")->required();
    c_ablate->add_option("--extractor", extractor_dir, "extractor directory")->required();
    c_ablate->add_option("--variant", variant, "model variant")->required();
    c_ablate->add_option("--max-steps", max_steps, "override the configured step budget");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    common.config_path = config_path;
    common.seed_set = seed_opt->count() > 0;
    common.seed = seed;
    common.out = out_path;

    try {
        if (out_path.empty()) colodiff::throw_param("--out is required");
        if (c_gen->parsed()) {
            colodiff::cmd::cmd_gen_data(common);
        } else if (c_codec->parsed()) {
            colodiff::cmd::cmd_fit_codec(common, data_dir);
        } else if (c_extr->parsed()) {
            colodiff::cmd::cmd_fit_extractor(common, data_dir);
        } else if (c_train->parsed()) {
            colodiff::cmd::TrainArgs ta{data_dir, codec_dir, resume_dir, max_steps};
            colodiff::cmd::cmd_train(common, ta);
        } else if (c_sample->parsed()) {
            colodiff::cmd::SampleArgs sa{ckpt_dir, codec_dir, label, steps, count, use_raw};
            colodiff::cmd::cmd_sample(common, sa);
        } else if (c_eval->parsed()) {
            colodiff::cmd::EvalArgs ea{real_dir, gen_dir, extractor_dir};
            colodiff::cmd::cmd_eval(common, ea);
        } else if (c_bench->parsed()) {
            colodiff::cmd::BenchArgs ba{ckpt_dir, codec_dir, data_dir, extractor_dir, use_raw};
            colodiff::cmd::cmd_bench_steps(common, ba);
        } else if (c_ablate->parsed()) {
            colodiff::cmd::AblateArgs aa{data_dir, codec_dir, extractor_dir, variant,
                                         max_steps};
            colodiff::cmd::cmd_ablate(common, aa);
        }
    } catch (const colodiff::ParameterError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const colodiff::DimensionError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const colodiff::NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const colodiff::DivergenceError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const colodiff::ContractError& e) {
        std::fprintf(stderr, "internal contract violation: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
