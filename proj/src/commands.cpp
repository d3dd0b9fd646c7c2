#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "colodiff/codec.hpp"
#include "colodiff/denoiser.hpp"
#include "colodiff/diffusion.hpp"
#include "colodiff/error.hpp"
#include "colodiff/io.hpp"
#include "colodiff/metrics.hpp"
#include "colodiff/rng.hpp"
#include "colodiff/synthdata.hpp"
#include "colodiff/trainer.hpp"

namespace colodiff::cmd {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Resolved config + rerun manifest, written into every output directory.
void write_artifacts(const fs::path& out, const RunConfig& rc, const std::string& verb,
                     const json& cmd_fields) {
    fs::create_directories(out);
    {
        std::ofstream os(out / "config.json");
        if (!os) throw NumericError("cannot write config.json in " + out.string());
        os << rc.to_json_text() << "\n";
    }
    json man;
    man["verb"] = verb;
    man["seed"] = rc.seed;
    man["args"] = cmd_fields;
    std::ofstream os(out / "command.json");
    if (!os) throw NumericError("cannot write command.json in " + out.string());
    os << man.dump(2) << "\n";
}

void require_dir(const fs::path& p, const char* what) {
    if (p.empty()) throw_param("missing required ", what, " directory");
    if (!fs::exists(p)) throw_param(what, " directory not found: ", p.string());
}

DenoiserConfig make_model_config(const RunConfig& rc, const DataConfig& dc,
                                 const codec::CodecParams& cp) {
    if (dc.size % cp.q != 0)
        throw_param("codec patch ", cp.q, " does not divide frame size ", dc.size);
    DenoiserConfig mc;
    mc.frames = dc.frames;
    mc.c_lat = cp.c_lat;
    mc.lat_h = dc.size / cp.q;
    mc.lat_w = dc.size / cp.q;
    mc.patch = rc.model.patch;
    mc.dim = rc.model.dim;
    mc.heads = rc.model.heads;
    mc.pairs = rc.model.pairs;
    mc.d_cond = rc.model.d_cond;
    mc.n_classes = dc.classes;
    mc.variant = rc.model.variant;
    mc.validate();
    return mc;
}

// A checkpoint path may be a bare checkpoint (manifest.json) or a training
// output directory holding model/ and ema/.
DenoiserModel<float> load_model(const fs::path& ckpt, bool use_raw) {
    require_dir(ckpt, "checkpoint");
    if (fs::exists(ckpt / "manifest.json")) return DenoiserModel<float>::load(ckpt);
    const fs::path sub = ckpt / (use_raw ? "model" : "ema");
    if (!fs::exists(sub / "manifest.json"))
        throw_param("no checkpoint manifest under ", ckpt.string());
    return DenoiserModel<float>::load(sub);
}

struct ClipSet {
    std::vector<Tensor<float>> clips;  // pixel [F,3,H,W]
    std::vector<int> labels;
};

// Accepts a dataset directory (index.json) or a sample output directory
// (manifest.json with a clips array).
ClipSet load_clip_set(const fs::path& dir) {
    require_dir(dir, "clip set");
    ClipSet cs;
    if (fs::exists(dir / "index.json")) {
        synth::Dataset ds = synth::load_dataset(dir);
        cs.clips = std::move(ds.clips);
        cs.labels = std::move(ds.labels);
        return cs;
    }
    if (!fs::exists(dir / "manifest.json"))
        throw_param("clip set ", dir.string(), " has neither index.json nor manifest.json");
    std::ifstream is(dir / "manifest.json");
    json man;
    try {
        is >> man;
    } catch (const json::exception& e) {
        throw_param("bad clip set manifest: ", e.what());
    }
    if (!man.contains("clips")) throw_param("manifest in ", dir.string(), " lists no clips");
    for (const auto& c : man.at("clips")) {
        const fs::path cdir = dir / c.at("dir").get<std::string>();
        cs.clips.push_back(io::load_tensor(cdir / "pixels.cdt1"));
        cs.labels.push_back(c.at("label").get<int>());
    }
    if (cs.clips.empty()) throw_param("clip set ", dir.string(), " is empty");
    return cs;
}

// Deterministic class-balanced subset: per class, clips in dataset order.
std::vector<size_t> balanced_indices(const std::vector<int>& labels, size_t want) {
    int n_classes = 0;
    for (int lb : labels) n_classes = std::max(n_classes, lb + 1);
    std::vector<std::vector<size_t>> per(static_cast<size_t>(n_classes));
    for (size_t i = 0; i < labels.size(); ++i) per[size_t(labels[i])].push_back(i);
    std::vector<size_t> idx;
    for (size_t round = 0; idx.size() < want; ++round) {
        bool any = false;
        for (auto& bucket : per) {
            if (round < bucket.size() && idx.size() < want) {
                idx.push_back(bucket[round]);
                any = true;
            }
        }
        if (!any) break;  // every class exhausted
    }
    return idx;
}

struct GenResult {
    std::vector<Tensor<float>> latents;        // each [F,C,h,w]
    std::vector<int> labels;
    std::vector<double> clip_wall_seconds;     // per clip (mean over its chunk)
    double total_wall_seconds = 0.0;
};

// Reverse-process sampling for a list of labels. The initial noise of clip i
// comes from derive_seed(seed, i), so a clip's output is independent of the
// batch chunking and of how many clips are requested.
GenResult generate_clips(const DenoiserModel<float>& model, const NoiseSchedule& ns,
                         int steps, const std::vector<int>& labels, uint64_t seed,
                         int chunk) {
    const auto& cfg = model.cfg;
    if (chunk < 1) throw_param("chunk must be >= 1");
    const std::vector<int> plan = make_substep_plan(ns.T, steps);
    GenResult gr;
    gr.labels = labels;
    const int64_t per = int64_t(cfg.frames) * cfg.c_lat * cfg.lat_h * cfg.lat_w;
    for (size_t base = 0; base < labels.size(); base += size_t(chunk)) {
        const int b = int(std::min<size_t>(size_t(chunk), labels.size() - base));
        Tensor<float> z({b, cfg.frames, cfg.c_lat, cfg.lat_h, cfg.lat_w});
        std::vector<int> chunk_labels(labels.begin() + long(base),
                                      labels.begin() + long(base) + b);
        for (int i = 0; i < b; ++i) {
            Rng nr(derive_seed(seed, base + size_t(i)));
            for (int64_t j = 0; j < per; ++j)
                z[int64_t(i) * per + j] = float(nr.normal());
        }
        const double t0 = now_seconds();
        Tensor<float> out = ddim_sample(
            ns, plan, std::move(z), [&](const Tensor<float>& zt, int k) {
                std::vector<int> ts(size_t(b), k);
                return model.forward(nullptr, zt, ts, chunk_labels)->value;
            });
        const double wall = now_seconds() - t0;
        gr.total_wall_seconds += wall;
        for (int i = 0; i < b; ++i) {
            Tensor<float> clip({cfg.frames, cfg.c_lat, cfg.lat_h, cfg.lat_w});
            std::copy_n(out.ptr() + int64_t(i) * per, per, clip.ptr());
            gr.latents.push_back(std::move(clip));
            gr.clip_wall_seconds.push_back(wall / double(b));
        }
    }
    return gr;
}

std::vector<int> cycled_labels(int count, int n_classes, int fixed_label) {
    std::vector<int> labels(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i)
        labels[size_t(i)] = (fixed_label < 0) ? i % n_classes : fixed_label;
    return labels;
}

// FID / FVD-analog / IS / label agreement between two pixel clip sets.
json evaluate_sets(const ClipSet& real, const ClipSet& gen,
                   const metrics::FeatureExtractor& fx, const MetricsConfig& mc) {
    json rep;
    Tensor<float> real_frames = metrics::stack_frames(real.clips);
    Tensor<float> gen_frames = metrics::stack_frames(gen.clips);
    rep["fid"] = metrics::fid(real_frames, gen_frames, fx, mc.fid_floor);
    rep["fvd"] = metrics::fvd_analog(real.clips, gen.clips, fx, mc.fvd_floor);

    // Overall IS; trims to the largest multiple of the split count.
    const size_t n_use = (gen.clips.size() / size_t(mc.splits)) * size_t(mc.splits);
    if (n_use < size_t(mc.splits)) throw_param("too few clips for ", mc.splits, " IS splits");
    Tensor<float> probs({int64_t(n_use), int64_t(fx.n_classes)});
    for (size_t i = 0; i < n_use; ++i) {
        Tensor<float> p = fx.clip_probs(gen.clips[i]);
        std::copy_n(p.data.data(), p.numel(), probs.ptr() + int64_t(i) * fx.n_classes);
    }
    auto [is_mean, is_std] = metrics::inception_score_from_probs(probs, mc.splits);
    rep["is_mean"] = is_mean;
    rep["is_std"] = is_std;
    rep["is_clips_used"] = n_use;

    // Per-class IS and classifier agreement with the intended label.
    json per_class = json::array();
    int64_t agree_total = 0;
    std::vector<std::vector<size_t>> by_label(size_t(fx.n_classes));
    for (size_t i = 0; i < gen.clips.size(); ++i)
        if (gen.labels[i] >= 0 && gen.labels[i] < fx.n_classes)
            by_label[size_t(gen.labels[i])].push_back(i);
    for (int c = 0; c < fx.n_classes; ++c) {
        const auto& idx = by_label[size_t(c)];
        json row;
        row["label"] = c;
        row["count"] = idx.size();
        if (!idx.empty()) {
            int splits_c = std::min<int>(mc.splits, int(idx.size()));
            while (int(idx.size()) % splits_c != 0) --splits_c;
            Tensor<float> pc({int64_t(idx.size()), int64_t(fx.n_classes)});
            int64_t agree = 0;
            for (size_t j = 0; j < idx.size(); ++j) {
                Tensor<float> p = fx.clip_probs(gen.clips[idx[j]]);
                std::copy_n(p.data.data(), p.numel(), pc.ptr() + int64_t(j) * fx.n_classes);
                int best = 0;
                for (int k = 1; k < fx.n_classes; ++k)
                    if (p[k] > p[best]) best = k;
                if (best == c) ++agree;
            }
            auto [m, s] = metrics::inception_score_from_probs(pc, splits_c);
            row["is_mean"] = m;
            row["is_std"] = s;
            row["splits"] = splits_c;
            row["agreement"] = double(agree) / double(idx.size());
            agree_total += agree;
        }
        per_class.push_back(row);
    }
    rep["per_class"] = per_class;
    rep["agreement_overall"] = double(agree_total) / double(gen.clips.size());

    rep["counts"] = {{"real_clips", real.clips.size()},
                     {"gen_clips", gen.clips.size()},
                     {"real_frames", real_frames.extent(0)},
                     {"gen_frames", gen_frames.extent(0)}};
    rep["extractor_holdout_accuracy"] = fx.holdout_accuracy;
    return rep;
}

// Shared by cmd_train and cmd_ablate: encode the dataset, train, persist.
json run_training(const RunConfig& rc, const synth::Dataset& ds,
                  const codec::CodecParams& cp, const fs::path& out,
                  const fs::path& resume, int max_steps_override) {
    const DenoiserConfig mc = make_model_config(rc, ds.cfg, cp);
    std::vector<Tensor<float>> latents;
    latents.reserve(ds.clips.size());
    for (const auto& clip : ds.clips) latents.push_back(codec::encode(cp, clip));

    DenoiserModel<float> model = DenoiserModel<float>::init(mc, rc.seed);
    Trainer trainer(model, NoiseSchedule::linear(rc.schedule.T, rc.schedule.beta_start,
                                                 rc.schedule.beta_end),
                    rc.train, std::move(latents), ds.labels, rc.seed);
    if (!resume.empty()) {
        require_dir(resume, "resume checkpoint");
        trainer.load_state(resume);
    }

    fs::create_directories(out);
    std::ofstream log(out / "train_log.jsonl", resume.empty() ? std::ios::trunc
                                                              : std::ios::app);
    if (!log) throw NumericError("cannot open training log in " + out.string());

    const int budget = (max_steps_override > 0) ? max_steps_override : rc.train.max_steps;
    const int to_run = std::max(0, budget - trainer.step());
    const double t0 = now_seconds();
    TrainOutcome oc = trainer.run(to_run, [&](const TrainStepLog& rec) {
        json line;
        line["step"] = rec.step;
        line["loss"] = rec.loss;
        line["wall_ms"] = rec.wall_ms;
        if (rec.has_val) line["val_loss"] = rec.val_loss;
        log << line.dump() << "\n";
        if (rec.has_val)
            std::printf("step %6d  loss %.4f  val %.4f\n", rec.step, rec.loss, rec.val_loss);
    });
    const double wall = now_seconds() - t0;
    log.flush();
    trainer.save_state(out);

    json rep;
    rep["steps_done"] = oc.steps_done;
    rep["last_loss"] = oc.last_loss;
    rep["best_val"] = std::isfinite(oc.best_val) ? oc.best_val : -1.0;
    rep["early_stopped"] = oc.early_stopped;
    rep["param_count"] = model.param_count();
    rep["variant"] = mc.variant;
    rep["train_clips"] = trainer.train_size();
    rep["val_clips"] = trainer.val_size();
    rep["wall_seconds"] = wall;
    std::ofstream os(out / "train_report.json");
    os << rep.dump(2) << "\n";
    return rep;
}

// Balanced generated set for eval-style reporting, decoded to pixels.
ClipSet generate_pixel_set(const DenoiserModel<float>& model, const NoiseSchedule& ns,
                           const codec::CodecParams& cp, int steps, int count,
                           uint64_t seed, GenResult* raw = nullptr) {
    const std::vector<int> labels = cycled_labels(count, model.cfg.n_classes, -1);
    GenResult gr = generate_clips(model, ns, steps, labels, seed, 8);
    ClipSet out;
    out.labels = gr.labels;
    out.clips.reserve(gr.latents.size());
    for (const auto& lat : gr.latents) out.clips.push_back(codec::decode(cp, lat));
    if (raw) *raw = std::move(gr);
    return out;
}

}  // namespace

RunConfig load_config(const CommonArgs& args) {
    RunConfig rc;
    if (!args.config_path.empty()) rc = RunConfig::from_file(args.config_path);
    if (args.seed_set) rc.seed = args.seed;
    rc.validate();
    return rc;
}

void cmd_gen_data(const CommonArgs& args) {
    const RunConfig rc = load_config(args);
    synth::Dataset ds = synth::generate_dataset(rc.data, rc.seed);
    synth::write_dataset(ds, rc.seed, args.out);
    write_artifacts(args.out, rc, "gen-data", json::object());
    std::printf("gen-data: %zu clips (%d classes x %d) at %dx%d, %d frames -> %s\n",
                ds.clips.size(), rc.data.classes, rc.data.clips_per_class, rc.data.size,
                rc.data.size, rc.data.frames, args.out.string().c_str());
}

void cmd_fit_codec(const CommonArgs& args, const fs::path& data) {
    const RunConfig rc = load_config(args);
    require_dir(data, "dataset");
    synth::Dataset ds = synth::load_dataset(data);
    const size_t n = ds.clips.size();
    if (n < 2) throw_param("codec fit needs at least 2 clips");

    // Deterministic shuffle, then front = fit set, tail = holdout.
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    Rng rng(derive_seed(rc.seed, 0x636f646563ull));
    for (size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[size_t(rng.uniform_int(int64_t(i)))]);
    const size_t n_hold = std::min<size_t>(size_t(rc.codec.holdout_clips), n / 2);
    const size_t n_fit = std::min<size_t>(size_t(rc.codec.fit_clips), n - n_hold);
    std::vector<Tensor<float>> fit_clips;
    for (size_t i = 0; i < n_fit; ++i) fit_clips.push_back(ds.clips[order[i]]);

    codec::CodecParams cp = codec::fit_codec(fit_clips, rc.codec.q, rc.codec.c_lat);
    codec::save_codec(cp, args.out);

    double psnr_sum = 0.0, psnr_min = 1e9;
    double idem = 0.0;
    for (size_t i = 0; i < n_hold; ++i) {
        const auto& clip = ds.clips[order[n - 1 - i]];
        Tensor<float> lat = codec::encode(cp, clip);
        Tensor<float> rec = codec::decode(cp, lat);
        const double p = codec::psnr(clip, rec);
        psnr_sum += p;
        psnr_min = std::min(psnr_min, p);
        Tensor<float> rec2 = codec::decode(cp, codec::encode(cp, rec));
        idem = std::max(idem, double(max_abs_diff(rec, rec2)));
    }
    json rep;
    rep["fit_clips"] = n_fit;
    rep["holdout_clips"] = n_hold;
    rep["psnr_mean"] = n_hold ? psnr_sum / double(n_hold) : 0.0;
    rep["psnr_min"] = n_hold ? psnr_min : 0.0;
    rep["idempotence_max_abs"] = idem;
    rep["eigenvalues"] = cp.eigenvalues;
    std::ofstream os(args.out / "codec_report.json");
    os << rep.dump(2) << "\n";
    write_artifacts(args.out, rc, "fit-codec", {{"data", data.string()}});
    std::printf("fit-codec: q=%d c_lat=%d psnr_mean=%.2f dB (min %.2f) over %zu holdout clips\n",
                cp.q, cp.c_lat, rep["psnr_mean"].get<double>(), rep["psnr_min"].get<double>(),
                n_hold);
}

void cmd_fit_extractor(const CommonArgs& args, const fs::path& data) {
    const RunConfig rc = load_config(args);
    require_dir(data, "dataset");
    synth::Dataset ds = synth::load_dataset(data);
    metrics::FeatureExtractor fx =
        metrics::train_extractor(ds, rc.metrics, derive_seed(rc.seed, 0x65787472ull));
    fx.save(args.out);
    json rep;
    rep["holdout_accuracy"] = fx.holdout_accuracy;
    rep["feat_dim"] = fx.feat_dim;
    rep["n_classes"] = fx.n_classes;
    std::ofstream os(args.out / "extractor_report.json");
    os << rep.dump(2) << "\n";
    write_artifacts(args.out, rc, "fit-extractor", {{"data", data.string()}});
    std::printf("fit-extractor: holdout accuracy %.4f\n", fx.holdout_accuracy);
}

void cmd_train(const CommonArgs& args, const TrainArgs& ta) {
    const RunConfig rc = load_config(args);
    require_dir(ta.data, "dataset");
    require_dir(ta.codec, "codec");
    synth::Dataset ds = synth::load_dataset(ta.data);
    codec::CodecParams cp = codec::load_codec(ta.codec);
    json rep = run_training(rc, ds, cp, args.out, ta.resume, ta.max_steps_override);
    write_artifacts(args.out, rc, "train",
                    {{"data", ta.data.string()},
                     {"codec", ta.codec.string()},
                     {"resume", ta.resume.string()}});
    std::printf("train: %d steps, last loss %.4f, best val %.4f%s -> %s\n",
                rep["steps_done"].get<int>(), rep["last_loss"].get<double>(),
                rep["best_val"].get<double>(),
                rep["early_stopped"].get<bool>() ? " (early stop)" : "",
                args.out.string().c_str());
}

void cmd_sample(const CommonArgs& args, const SampleArgs& sa) {
    const RunConfig rc = load_config(args);
    require_dir(sa.codec, "codec");
    DenoiserModel<float> model = load_model(sa.ckpt, sa.use_raw);
    codec::CodecParams cp = codec::load_codec(sa.codec);
    const int steps = (sa.steps > 0) ? sa.steps : rc.sample.steps;
    const int count = (sa.count > 0) ? sa.count : rc.sample.count;
    if (count < 1) throw_param("sample count must be >= 1");
    if (sa.label >= model.cfg.n_classes)
        throw_param("label ", sa.label, " out of range for ", model.cfg.n_classes, " classes");
    const NoiseSchedule ns =
        NoiseSchedule::linear(rc.schedule.T, rc.schedule.beta_start, rc.schedule.beta_end);

    const std::vector<int> labels = cycled_labels(count, model.cfg.n_classes, sa.label);
    // chunk=1: honest per-clip wall time in each manifest
    GenResult gr = generate_clips(model, ns, steps, labels, rc.seed, 1);

    fs::create_directories(args.out);
    json top;
    top["kind"] = "samples";
    top["count"] = count;
    top["steps"] = steps;
    top["seed"] = rc.seed;
    top["use_ema"] = !sa.use_raw;
    top["clips"] = json::array();
    for (int i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "clip_%05d", i);
        const fs::path cdir = args.out / name;
        fs::create_directories(cdir);
        io::save_tensor(cdir / "latent.cdt1", gr.latents[size_t(i)]);
        Tensor<float> pixels = codec::decode(cp, gr.latents[size_t(i)]);
        io::save_tensor(cdir / "pixels.cdt1", pixels);
        const int64_t F = pixels.extent(0);
        const int64_t per = pixels.numel() / F;
        for (int64_t f = 0; f < F; ++f) {
            Tensor<float> frame({pixels.extent(1), pixels.extent(2), pixels.extent(3)});
            std::copy_n(pixels.ptr() + f * per, per, frame.ptr());
            char fname[32];
            std::snprintf(fname, sizeof fname, "frame_%03d.ppm", int(f));
            io::save_ppm(cdir / fname, frame);
        }
        const double wall = gr.clip_wall_seconds[size_t(i)];
        json cm;
        cm["label"] = labels[size_t(i)];
        cm["steps"] = steps;
        cm["seed"] = derive_seed(rc.seed, uint64_t(i));
        cm["wall_seconds"] = wall;
        cm["frames_per_sec"] = wall > 0 ? double(F) / wall : 0.0;
        cm["frames"] = F;
        std::ofstream os(cdir / "manifest.json");
        os << cm.dump(2) << "\n";
        json entry = cm;
        entry["dir"] = name;
        top["clips"].push_back(entry);
    }
    top["total_wall_seconds"] = gr.total_wall_seconds;
    std::ofstream os(args.out / "manifest.json");
    os << top.dump(2) << "\n";
    write_artifacts(args.out, rc, "sample",
                    {{"ckpt", sa.ckpt.string()},
                     {"codec", sa.codec.string()},
                     {"label", sa.label},
                     {"steps", steps},
                     {"count", count},
                     {"use_raw", sa.use_raw}});
    std::printf("sample: %d clips, %d steps, %.2fs total (%.2f frames/s) -> %s\n", count,
                steps, gr.total_wall_seconds,
                double(count * model.cfg.frames) / std::max(gr.total_wall_seconds, 1e-9),
                args.out.string().c_str());
}

void cmd_eval(const CommonArgs& args, const EvalArgs& ea) {
    const RunConfig rc = load_config(args);
    require_dir(ea.extractor, "extractor");
    metrics::FeatureExtractor fx = metrics::FeatureExtractor::load(ea.extractor);
    ClipSet real = load_clip_set(ea.real);
    ClipSet gen = load_clip_set(ea.gen);
    json rep = evaluate_sets(real, gen, fx, rc.metrics);
    rep["seed"] = rc.seed;
    fs::create_directories(args.out);
    std::ofstream os(args.out / "metrics.json");
    os << rep.dump(2) << "\n";
    write_artifacts(args.out, rc, "eval",
                    {{"real", ea.real.string()},
                     {"gen", ea.gen.string()},
                     {"extractor", ea.extractor.string()}});
    std::printf("eval: fid=%.4f fvd=%.4f is=%.3f+/-%.3f agreement=%.3f -> %s\n",
                rep["fid"].get<double>(), rep["fvd"].get<double>(),
                rep["is_mean"].get<double>(), rep["is_std"].get<double>(),
                rep["agreement_overall"].get<double>(), args.out.string().c_str());
}

void cmd_bench_steps(const CommonArgs& args, const BenchArgs& ba) {
    const RunConfig rc = load_config(args);
    require_dir(ba.data, "dataset");
    require_dir(ba.codec, "codec");
    require_dir(ba.extractor, "extractor");
    DenoiserModel<float> model = load_model(ba.ckpt, ba.use_raw);
    codec::CodecParams cp = codec::load_codec(ba.codec);
    metrics::FeatureExtractor fx = metrics::FeatureExtractor::load(ba.extractor);
    synth::Dataset ds = synth::load_dataset(ba.data);
    const NoiseSchedule ns =
        NoiseSchedule::linear(rc.schedule.T, rc.schedule.beta_start, rc.schedule.beta_end);

    // One fixed real-feature side shared by every row.
    const size_t n_real = std::min<size_t>(ds.clips.size(), 96);
    std::vector<Tensor<float>> real_clips;
    for (size_t idx : balanced_indices(ds.labels, n_real))
        real_clips.push_back(ds.clips[idx]);
    const metrics::FrechetStats real_stats =
        metrics::fit_gaussian(fx.frame_features(metrics::stack_frames(real_clips)));

    const int count = rc.bench.clips;
    json rows = json::array();
    for (int steps : rc.bench.steps_list) {
        const std::vector<int> labels = cycled_labels(count, model.cfg.n_classes, -1);
        GenResult gr =
            generate_clips(model, ns, steps, labels, derive_seed(rc.seed, uint64_t(steps)), 8);
        std::vector<Tensor<float>> gen_clips;
        gen_clips.reserve(gr.latents.size());
        for (const auto& lat : gr.latents) gen_clips.push_back(codec::decode(cp, lat));
        Tensor<float> gen_frames = metrics::stack_frames(gen_clips);
        if (gen_frames.extent(0) < rc.metrics.fid_floor)
            throw_param("bench clip budget yields ", gen_frames.extent(0),
                        " frames, below the FID floor ", rc.metrics.fid_floor);
        const double fid_v = metrics::frechet_distance(
            real_stats, metrics::fit_gaussian(fx.frame_features(gen_frames)));
        json row;
        row["steps"] = steps;
        row["wall_seconds"] = gr.total_wall_seconds;
        row["frames_per_sec"] =
            double(count * model.cfg.frames) / std::max(gr.total_wall_seconds, 1e-9);
        row["fid"] = fid_v;
        rows.push_back(row);
        std::printf("bench-steps: steps=%4d wall=%7.2fs fps=%7.2f fid=%.4f\n", steps,
                    gr.total_wall_seconds, row["frames_per_sec"].get<double>(), fid_v);
    }
    json rep;
    rep["clips_per_row"] = count;
    rep["real_clips"] = n_real;
    rep["seed"] = rc.seed;
    rep["rows"] = rows;
    fs::create_directories(args.out);
    std::ofstream os(args.out / "bench.json");
    os << rep.dump(2) << "\n";
    write_artifacts(args.out, rc, "bench-steps",
                    {{"ckpt", ba.ckpt.string()},
                     {"codec", ba.codec.string()},
                     {"data", ba.data.string()},
                     {"extractor", ba.extractor.string()}});
}

void cmd_ablate(const CommonArgs& args, const AblateArgs& aa) {
    RunConfig rc = load_config(args);
    if (!is_known_variant(aa.variant))
        throw_param("unknown variant '", aa.variant, "'");
    rc.model.variant = aa.variant;
    require_dir(aa.data, "dataset");
    require_dir(aa.codec, "codec");
    require_dir(aa.extractor, "extractor");
    synth::Dataset ds = synth::load_dataset(aa.data);
    codec::CodecParams cp = codec::load_codec(aa.codec);
    metrics::FeatureExtractor fx = metrics::FeatureExtractor::load(aa.extractor);

    json train_rep = run_training(rc, ds, cp, args.out, {}, aa.max_steps_override);

    DenoiserModel<float> model = load_model(args.out, /*use_raw=*/false);
    const NoiseSchedule ns =
        NoiseSchedule::linear(rc.schedule.T, rc.schedule.beta_start, rc.schedule.beta_end);
    int count = std::max(rc.sample.count, rc.metrics.fvd_floor);
    const int granule = model.cfg.n_classes * rc.metrics.splits;
    count = ((count + granule - 1) / granule) * granule;
    ClipSet gen = generate_pixel_set(model, ns, cp, rc.sample.steps, count,
                                     derive_seed(rc.seed, 0x61626c617465ull));

    const size_t n_real = std::min<size_t>(ds.clips.size(), std::max<size_t>(96, size_t(count)));
    ClipSet real;
    for (size_t idx : balanced_indices(ds.labels, n_real)) {
        real.clips.push_back(ds.clips[idx]);
        real.labels.push_back(ds.labels[idx]);
    }

    json rep;
    rep["variant"] = aa.variant;
    rep["param_count"] = train_rep["param_count"];
    rep["train"] = train_rep;
    rep["sample_steps"] = rc.sample.steps;
    rep["metrics"] = evaluate_sets(real, gen, fx, rc.metrics);
    std::ofstream os(args.out / "ablate_report.json");
    os << rep.dump(2) << "\n";
    write_artifacts(args.out, rc, "ablate",
                    {{"data", aa.data.string()},
                     {"codec", aa.codec.string()},
                     {"extractor", aa.extractor.string()},
                     {"variant", aa.variant}});
    std::printf("ablate[%s]: params=%lld fvd=%.4f is=%.3f -> %s\n", aa.variant.c_str(),
                static_cast<long long>(rep["param_count"].get<int64_t>()),
                rep["metrics"]["fvd"].get<double>(), rep["metrics"]["is_mean"].get<double>(),
                args.out.string().c_str());
}

}  // namespace colodiff::cmd
