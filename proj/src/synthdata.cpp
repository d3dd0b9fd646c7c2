#include "colodiff/synthdata.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "colodiff/error.hpp"
#include "colodiff/io.hpp"
#include "colodiff/rng.hpp"

namespace colodiff::synth {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<ClassSpec> default_class_specs(int n_classes) {
    if (n_classes < 1 || n_classes > 3)
        throw_param("bundled specs cover 1..3 classes, got ", n_classes);
    std::vector<ClassSpec> specs = {
        {0, "disc", 3, 0.6, 1.4, 0.25, 5.0, 7.0, {0.45, 0.42, 0.40}, {0.78, 0.35, 0.30}},
        {1, "ring", 5, 0.3, 0.9, 0.45, 6.0, 8.0, {0.40, 0.44, 0.42}, {0.32, 0.62, 0.78}},
        {2, "blob", 7, 1.0, 2.0, 0.10, 5.0, 7.0, {0.44, 0.40, 0.44}, {0.46, 0.74, 0.36}},
    };
    specs.resize(static_cast<size_t>(n_classes));
    return specs;
}

namespace {

// Bilinear value noise on a g x g lattice, evaluated at fractional lattice
// coordinates; returns roughly [-1, 1].
double value_noise(const std::vector<double>& lattice, int g, double u, double v) {
    u = u - std::floor(u / g) * g;
    v = v - std::floor(v / g) * g;
    const int i0 = static_cast<int>(u) % g, j0 = static_cast<int>(v) % g;
    const int i1 = (i0 + 1) % g, j1 = (j0 + 1) % g;
    const double fu = u - std::floor(u), fv = v - std::floor(v);
    const double a = lattice[size_t(i0 * g + j0)], b = lattice[size_t(i1 * g + j0)];
    const double c = lattice[size_t(i0 * g + j1)], d = lattice[size_t(i1 * g + j1)];
    const double su = fu * fu * (3 - 2 * fu), sv = fv * fv * (3 - 2 * fv);
    return (a * (1 - su) + b * su) * (1 - sv) + (c * (1 - su) + d * su) * sv;
}

// Reflect x into [lo, hi] (triangular wave), keeping motion inside frame.
double reflect(double x, double lo, double hi) {
    const double span = hi - lo;
    if (span <= 0) return lo;
    double y = std::fmod(x - lo, 2 * span);
    if (y < 0) y += 2 * span;
    return lo + (y <= span ? y : 2 * span - y);
}

double soft_step(double edge_hi_minus_x, double width) {
    // 1 well inside the shape, 0 outside, smooth over ~width pixels
    return 1.0 / (1.0 + std::exp(-edge_hi_minus_x / width));
}

}  // namespace

Tensor<float> render_clip(const ClassSpec& spec, const DataConfig& cfg, uint64_t seed,
                          std::vector<std::array<double, 2>>* centers_out) {
    const int F = cfg.frames, S = cfg.size;
    Rng rng(seed);

    // Per-clip draws, in a fixed order so clips are reproducible.
    const int g = spec.texture_grid;
    std::vector<double> lattice(static_cast<size_t>(g) * g);
    for (auto& v : lattice) v = 2.0 * rng.uniform() - 1.0;
    const double radius =
        spec.radius_min + (spec.radius_max - spec.radius_min) * rng.uniform();
    const double margin = spec.radius_max + 2.0;
    const double px0 = margin + (S - 2 * margin) * rng.uniform();
    const double py0 = margin + (S - 2 * margin) * rng.uniform();
    const double speed = spec.speed_min + (spec.speed_max - spec.speed_min) * rng.uniform();
    const double dir = 2.0 * M_PI * rng.uniform();
    const double vx = speed * std::cos(dir), vy = speed * std::sin(dir);
    const double osc_phase = 2.0 * M_PI * rng.uniform();
    const double osc_freq = 0.5 + 0.3 * rng.uniform();  // radians per frame
    const double blob_phase = 2.0 * M_PI * rng.uniform();
    const double tex_du = 0.10 + 0.10 * rng.uniform();  // background drift, lattice units
    const double tex_dv = 0.10 + 0.10 * rng.uniform();

    Tensor<float> clip({F, 3, S, S});
    if (centers_out) centers_out->clear();

    const double ring_width = 2.6;
    const double edge = 1.1;  // soft edge width in pixels
    for (int f = 0; f < F; ++f) {
        // Oscillation stays bounded so displacement per frame stays below
        // speed + 2*osc_amp*osc_freq <= cfg.max_step for bundled specs.
        const double ox = -std::sin(dir) * spec.osc_amp * std::sin(osc_freq * f + osc_phase);
        const double oy = std::cos(dir) * spec.osc_amp * std::sin(osc_freq * f + osc_phase);
        const double cx = reflect(px0 + vx * f, margin, S - margin) + ox;
        const double cy = reflect(py0 + vy * f, margin, S - margin) + oy;
        if (centers_out) centers_out->push_back({cx, cy});

        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const double u = (double(x) / S) * g + tex_du * f;
                const double v = (double(y) / S) * g + tex_dv * f;
                const double tex = value_noise(lattice, g, u, v);
                const double dx = x - cx, dy = y - cy;
                const double d = std::sqrt(dx * dx + dy * dy);
                double mask;
                if (spec.name == "ring") {
                    const double band = std::abs(d - radius);
                    mask = soft_step(ring_width - band, edge);
                } else if (spec.name == "blob") {
                    const double theta = std::atan2(dy, dx);
                    const double r_theta =
                        radius * (1.0 + 0.28 * std::sin(3.0 * theta + blob_phase));
                    mask = soft_step(r_theta - d, edge);
                } else {  // disc
                    mask = soft_step(radius - d, edge);
                }
                const double shade = 0.85 + 0.15 * std::max(0.0, 1.0 - d / (radius + 2.0));
                for (int c = 0; c < 3; ++c) {
                    const double bg = spec.bg_base[size_t(c)] + cfg.noise_amp * tex;
                    const double obj =
                        spec.bg_base[size_t(c)] +
                        cfg.object_amp * (spec.tint[size_t(c)] - spec.bg_base[size_t(c)]) *
                            2.0 * shade;
                    const double val = bg * (1.0 - mask) + obj * mask;
                    clip.data[size_t(((f * 3 + c) * S + y) * S + x)] =
                        static_cast<float>(std::clamp(val, 0.0, 1.0));
                }
            }
    }
    return clip;
}

Dataset generate_dataset(const DataConfig& cfg, uint64_t seed) {
    if (cfg.clips_per_class < 1) throw_param("clips_per_class must be >= 1");
    const auto specs = default_class_specs(cfg.classes);
    Dataset ds;
    ds.cfg = cfg;
    int id = 0;
    for (int c = 0; c < cfg.classes; ++c) {
        for (int i = 0; i < cfg.clips_per_class; ++i, ++id) {
            ClipMeta m;
            m.id = id;
            m.label = c;
            m.seed = derive_seed(seed, static_cast<uint64_t>(id));
            char buf[32];
            std::snprintf(buf, sizeof buf, "clips/clip_%05d.cdt1", id);
            m.file = buf;
            ds.clips.push_back(render_clip(specs[size_t(c)], cfg, m.seed, &m.centers));
            ds.labels.push_back(c);
            ds.meta.push_back(std::move(m));
        }
    }
    return ds;
}

void write_dataset(const Dataset& ds, uint64_t seed, const fs::path& dir) {
    fs::create_directories(dir / "clips");
    json idx;
    idx["seed"] = seed;
    idx["config"] = {{"classes", ds.cfg.classes},
                     {"clips_per_class", ds.cfg.clips_per_class},
                     {"frames", ds.cfg.frames},
                     {"size", ds.cfg.size},
                     {"object_amp", ds.cfg.object_amp},
                     {"noise_amp", ds.cfg.noise_amp},
                     {"max_step", ds.cfg.max_step}};
    idx["clips"] = json::array();
    for (size_t i = 0; i < ds.clips.size(); ++i) {
        const auto& m = ds.meta[i];
        io::save_tensor(dir / m.file, ds.clips[i]);
        json centers = json::array();
        for (const auto& c : m.centers) centers.push_back({c[0], c[1]});
        idx["clips"].push_back(
            {{"id", m.id}, {"file", m.file}, {"label", m.label}, {"seed", m.seed},
             {"centers", centers}});
    }
    std::ofstream os(dir / "index.json");
    if (!os) throw NumericError("cannot write dataset index in " + dir.string());
    os << idx.dump(2) << "\n";
}

Dataset load_dataset(const fs::path& dir) {
    std::ifstream is(dir / "index.json");
    if (!is) throw_param("no dataset index at ", (dir / "index.json").string());
    json idx;
    try {
        is >> idx;
    } catch (const json::exception& e) {
        throw_param("bad dataset index: ", e.what());
    }
    Dataset ds;
    const auto& c = idx.at("config");
    ds.cfg.classes = c.at("classes").get<int>();
    ds.cfg.clips_per_class = c.at("clips_per_class").get<int>();
    ds.cfg.frames = c.at("frames").get<int>();
    ds.cfg.size = c.at("size").get<int>();
    ds.cfg.object_amp = c.at("object_amp").get<double>();
    ds.cfg.noise_amp = c.at("noise_amp").get<double>();
    ds.cfg.max_step = c.at("max_step").get<double>();
    for (const auto& e : idx.at("clips")) {
        ClipMeta m;
        m.id = e.at("id").get<int>();
        m.file = e.at("file").get<std::string>();
        m.label = e.at("label").get<int>();
        m.seed = e.at("seed").get<uint64_t>();
        for (const auto& p : e.at("centers"))
            m.centers.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        Tensor<float> clip = io::load_tensor(dir / m.file);
        if (clip.rank() != 4 || clip.extent(1) != 3)
            throw_dim("clip ", m.file, " has unexpected shape ", shape_str(clip.shape));
        ds.clips.push_back(std::move(clip));
        ds.labels.push_back(m.label);
        ds.meta.push_back(std::move(m));
    }
    if (ds.clips.empty()) throw_param("dataset at ", dir.string(), " is empty");
    return ds;
}

double temporal_smoothness(const Tensor<float>& clip) {
    if (clip.rank() != 4) throw_dim("temporal_smoothness expects [F,C,H,W]");
    const int64_t F = clip.extent(0);
    if (F < 2) throw_param("temporal_smoothness needs >= 2 frames");
    const int64_t per = clip.numel() / F;
    double acc = 0.0;
    for (int64_t f = 0; f + 1 < F; ++f)
        for (int64_t i = 0; i < per; ++i)
            acc += std::abs(double(clip.data[size_t((f + 1) * per + i)]) -
                            double(clip.data[size_t(f * per + i)]));
    return acc / double((F - 1) * per);
}

}  // namespace colodiff::synth
