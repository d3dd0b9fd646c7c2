#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace colodiff {

// Every runtime default in one document. JSON configs may override any
// subset; unknown keys are rejected so typos fail loudly. The fully resolved
// config is written next to every command's outputs.
struct DataConfig {
    int classes = 3;
    int clips_per_class = 600;
    int frames = 8;
    int size = 32;
    double object_amp = 0.55;   // object/tint contrast
    double noise_amp = 0.05;    // background texture amplitude
    double max_step = 2.5;      // per-frame center displacement bound (pixels)
};

struct CodecConfig {
    int q = 4;       // patch side in pixels
    int c_lat = 4;   // latent channels
    int fit_clips = 256;
    int holdout_clips = 64;
};

struct ScheduleConfig {
    int T = 250;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct ModelConfig {
    int dim = 64;
    int heads = 4;
    int pairs = 4;   // N interleaved (spatial, temporal) pairs
    int patch = 2;   // token patch side in latent cells
    int d_cond = 64;
    std::string variant = "content_aware";
};

struct TrainConfig {
    int batch = 16;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    int max_steps = 20000;
    double val_frac = 0.1;
    int eval_every = 50;
    int patience = 10;
    double ema_decay = 0.999;
    int checkpoint_every = 0;  // 0 = only final
    int log_every = 10;
};

struct SampleConfig {
    int steps = 250;
    int count = 16;
    bool use_ema = true;
};

struct MetricsConfig {
    int feature_dim = 32;
    int hidden = 64;
    int extractor_steps = 400;
    int extractor_batch = 64;
    double extractor_lr = 3e-3;
    int splits = 4;
    int fid_floor = 64;   // minimum frames per side
    int fvd_floor = 32;   // minimum clips per side
};

struct BenchConfig {
    std::vector<int> steps_list = {250, 100, 50, 10, 5};
    int clips = 24;
};

struct RunConfig {
    uint64_t seed = 1;
    DataConfig data;
    CodecConfig codec;
    ScheduleConfig schedule;
    ModelConfig model;
    TrainConfig train;
    SampleConfig sample;
    MetricsConfig metrics;
    BenchConfig bench;

    // Parse, validate, and overlay onto defaults; throws ParameterError on
    // unknown keys, type errors, or out-of-range values.
    static RunConfig from_json_text(const std::string& text);
    static RunConfig from_file(const std::filesystem::path& path);
    std::string to_json_text() const;  // fully resolved, pretty-printed
    void validate() const;
};

inline const std::vector<std::string> kVariants = {
    "spatial_only", "timestream", "onehot", "random_enc", "prototypes", "content_aware"};

bool is_known_variant(const std::string& v);

}  // namespace colodiff
