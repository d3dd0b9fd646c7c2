#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "colodiff/config.hpp"
#include "colodiff/tensor.hpp"

// Class-conditional toy videos: a textured drifting background plus one
// class-specific moving object per clip. Three bundled classes (disc, ring,
// blob) differ in shape, palette, texture band, and motion law, so they are
// linearly separable for the metric classifier while sharing enough pixel
// statistics that one global codec serves all of them.
namespace colodiff::synth {

struct ClassSpec {
    int id = 0;
    std::string name;          // disc | ring | blob
    int texture_grid = 3;      // value-noise lattice size (frequency band)
    double speed_min = 0.5;    // pixels per frame
    double speed_max = 1.5;
    double osc_amp = 0.3;      // oscillation amplitude, pixels
    double radius_min = 5.0;
    double radius_max = 7.0;
    std::array<double, 3> bg_base{};   // background RGB
    std::array<double, 3> tint{};      // object RGB
};

std::vector<ClassSpec> default_class_specs(int n_classes);

struct ClipMeta {
    int id = 0;
    int label = 0;
    uint64_t seed = 0;
    std::string file;
    std::vector<std::array<double, 2>> centers;  // per-frame object center (x, y)
};

// One clip [F, 3, size, size] in [0,1], fully determined by (spec, cfg, seed).
Tensor<float> render_clip(const ClassSpec& spec, const DataConfig& cfg, uint64_t seed,
                          std::vector<std::array<double, 2>>* centers_out = nullptr);

struct Dataset {
    DataConfig cfg;
    std::vector<Tensor<float>> clips;  // each [F, 3, size, size]
    std::vector<int> labels;
    std::vector<ClipMeta> meta;
};

// In-memory generation (clip i of class c uses derive_seed(seed, global id)).
Dataset generate_dataset(const DataConfig& cfg, uint64_t seed);

// Disk layout: dir/clips/clip_%05d.cdt1 + dir/index.json.
void write_dataset(const Dataset& ds, uint64_t seed, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Mean per-pixel absolute difference between consecutive frames.
double temporal_smoothness(const Tensor<float>& clip);

}  // namespace colodiff::synth
