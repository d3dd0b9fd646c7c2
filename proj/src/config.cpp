#include "colodiff/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "colodiff/error.hpp"

namespace colodiff {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& ctx,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw_param("config section '", ctx, "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw_param("unknown config key '", ctx, ".", it.key(), "'");
    }
}

template <typename T>
void get_to(const json& j, const char* key, T& dst, const std::string& ctx) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(dst);
    } catch (const json::exception& e) {
        throw_param("config key '", ctx, ".", key, "': ", e.what());
    }
}

}  // namespace

bool is_known_variant(const std::string& v) {
    for (const auto& k : kVariants)
        if (k == v) return true;
    return false;
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw_param("config is not valid JSON: ", e.what());
    }
    check_keys(j, "",
               {"seed", "data", "codec", "schedule", "model", "train", "sample", "metrics",
                "bench"});
    RunConfig c;
    get_to(j, "seed", c.seed, "");
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, "data",
                   {"classes", "clips_per_class", "frames", "size", "object_amp",
                    "noise_amp", "max_step"});
        get_to(d, "classes", c.data.classes, "data");
        get_to(d, "clips_per_class", c.data.clips_per_class, "data");
        get_to(d, "frames", c.data.frames, "data");
        get_to(d, "size", c.data.size, "data");
        get_to(d, "object_amp", c.data.object_amp, "data");
        get_to(d, "noise_amp", c.data.noise_amp, "data");
        get_to(d, "max_step", c.data.max_step, "data");
    }
    if (j.contains("codec")) {
        const auto& d = j.at("codec");
        check_keys(d, "codec", {"q", "c_lat", "fit_clips", "holdout_clips"});
        get_to(d, "q", c.codec.q, "codec");
        get_to(d, "c_lat", c.codec.c_lat, "codec");
        get_to(d, "fit_clips", c.codec.fit_clips, "codec");
        get_to(d, "holdout_clips", c.codec.holdout_clips, "codec");
    }
    if (j.contains("schedule")) {
        const auto& d = j.at("schedule");
        check_keys(d, "schedule", {"T", "beta_start", "beta_end"});
        get_to(d, "T", c.schedule.T, "schedule");
        get_to(d, "beta_start", c.schedule.beta_start, "schedule");
        get_to(d, "beta_end", c.schedule.beta_end, "schedule");
    }
    if (j.contains("model")) {
        const auto& d = j.at("model");
        check_keys(d, "model", {"dim", "heads", "pairs", "patch", "d_cond", "variant"});
        get_to(d, "dim", c.model.dim, "model");
        get_to(d, "heads", c.model.heads, "model");
        get_to(d, "pairs", c.model.pairs, "model");
        get_to(d, "patch", c.model.patch, "model");
        get_to(d, "d_cond", c.model.d_cond, "model");
        get_to(d, "variant", c.model.variant, "model");
    }
    if (j.contains("train")) {
        const auto& d = j.at("train");
        check_keys(d, "train",
                   {"batch", "lr", "beta1", "beta2", "eps", "weight_decay", "max_steps",
                    "val_frac", "eval_every", "patience", "ema_decay", "checkpoint_every",
                    "log_every"});
        get_to(d, "batch", c.train.batch, "train");
        get_to(d, "lr", c.train.lr, "train");
        get_to(d, "beta1", c.train.beta1, "train");
        get_to(d, "beta2", c.train.beta2, "train");
        get_to(d, "eps", c.train.eps, "train");
        get_to(d, "weight_decay", c.train.weight_decay, "train");
        get_to(d, "max_steps", c.train.max_steps, "train");
        get_to(d, "val_frac", c.train.val_frac, "train");
        get_to(d, "eval_every", c.train.eval_every, "train");
        get_to(d, "patience", c.train.patience, "train");
        get_to(d, "ema_decay", c.train.ema_decay, "train");
        get_to(d, "checkpoint_every", c.train.checkpoint_every, "train");
        get_to(d, "log_every", c.train.log_every, "train");
    }
    if (j.contains("sample")) {
        const auto& d = j.at("sample");
        check_keys(d, "sample", {"steps", "count", "use_ema"});
        get_to(d, "steps", c.sample.steps, "sample");
        get_to(d, "count", c.sample.count, "sample");
        get_to(d, "use_ema", c.sample.use_ema, "sample");
    }
    if (j.contains("metrics")) {
        const auto& d = j.at("metrics");
        check_keys(d, "metrics",
                   {"feature_dim", "hidden", "extractor_steps", "extractor_batch",
                    "extractor_lr", "splits", "fid_floor", "fvd_floor"});
        get_to(d, "feature_dim", c.metrics.feature_dim, "metrics");
        get_to(d, "hidden", c.metrics.hidden, "metrics");
        get_to(d, "extractor_steps", c.metrics.extractor_steps, "metrics");
        get_to(d, "extractor_batch", c.metrics.extractor_batch, "metrics");
        get_to(d, "extractor_lr", c.metrics.extractor_lr, "metrics");
        get_to(d, "splits", c.metrics.splits, "metrics");
        get_to(d, "fid_floor", c.metrics.fid_floor, "metrics");
        get_to(d, "fvd_floor", c.metrics.fvd_floor, "metrics");
    }
    if (j.contains("bench")) {
        const auto& d = j.at("bench");
        check_keys(d, "bench", {"steps_list", "clips"});
        get_to(d, "steps_list", c.bench.steps_list, "bench");
        get_to(d, "clips", c.bench.clips, "bench");
    }
    c.validate();
    return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw_param("cannot open config file: ", path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return from_json_text(ss.str());
}

void RunConfig::validate() const {
    if (data.classes < 1) throw_param("data.classes must be >= 1");
    if (data.classes > 3) throw_param("data.classes > 3 needs additional class specs");
    if (data.clips_per_class < 1) throw_param("data.clips_per_class must be >= 1");
    if (data.frames < 1) throw_param("data.frames must be >= 1");
    if (data.size < 8) throw_param("data.size must be >= 8");
    if (codec.q < 1 || data.size % codec.q != 0)
        throw_param("codec.q must divide data.size");
    if (codec.c_lat < 1 || codec.c_lat > 3 * codec.q * codec.q)
        throw_param("codec.c_lat outside [1, 3*q*q]");
    if (schedule.T < 1) throw_param("schedule.T must be >= 1");
    if (!(schedule.beta_start > 0.0) || !(schedule.beta_end < 1.0) ||
        schedule.beta_start > schedule.beta_end)
        throw_param("schedule betas must satisfy 0 < start <= end < 1");
    if (model.dim < 1 || model.heads < 1 || model.dim % model.heads != 0)
        throw_param("model.dim must be a positive multiple of model.heads");
    if (model.pairs < 1) throw_param("model.pairs must be >= 1");
    const int lat_side = data.size / codec.q;
    if (model.patch < 1 || lat_side % model.patch != 0)
        throw_param("model.patch must divide the latent side ", lat_side);
    if (model.d_cond < 2 || model.d_cond % 2 != 0)
        throw_param("model.d_cond must be even and >= 2");
    if (model.d_cond < data.classes)
        throw_param("model.d_cond must be >= class count for one-hot encodings");
    if (!is_known_variant(model.variant))
        throw_param("model.variant '", model.variant, "' not in the known set");
    if (train.batch < 1) throw_param("train.batch must be >= 1");
    if (!(train.lr > 0.0)) throw_param("train.lr must be > 0");
    if (train.max_steps < 1) throw_param("train.max_steps must be >= 1");
    if (!(train.val_frac >= 0.0) || train.val_frac >= 1.0)
        throw_param("train.val_frac must be in [0, 1)");
    if (train.patience < 1) throw_param("train.patience must be >= 1");
    if (!(train.ema_decay >= 0.0) || train.ema_decay >= 1.0)
        throw_param("train.ema_decay must be in [0, 1)");
    if (sample.steps < 1 || sample.steps > schedule.T)
        throw_param("sample.steps outside [1, T]");
    if (sample.count < 1) throw_param("sample.count must be >= 1");
    if (metrics.splits < 1) throw_param("metrics.splits must be >= 1");
    if (metrics.feature_dim < 2) throw_param("metrics.feature_dim must be >= 2");
    if (bench.clips < 1) throw_param("bench.clips must be >= 1");
    for (int s : bench.steps_list)
        if (s < 1 || s > schedule.T) throw_param("bench.steps_list entry outside [1, T]");
}

std::string RunConfig::to_json_text() const {
    json j;
    j["seed"] = seed;
    j["data"] = {{"classes", data.classes},
                 {"clips_per_class", data.clips_per_class},
                 {"frames", data.frames},
                 {"size", data.size},
                 {"object_amp", data.object_amp},
                 {"noise_amp", data.noise_amp},
                 {"max_step", data.max_step}};
    j["codec"] = {{"q", codec.q},
                  {"c_lat", codec.c_lat},
                  {"fit_clips", codec.fit_clips},
                  {"holdout_clips", codec.holdout_clips}};
    j["schedule"] = {{"T", schedule.T},
                     {"beta_start", schedule.beta_start},
                     {"beta_end", schedule.beta_end}};
    j["model"] = {{"dim", model.dim},     {"heads", model.heads},
                  {"pairs", model.pairs}, {"patch", model.patch},
                  {"d_cond", model.d_cond}, {"variant", model.variant}};
    j["train"] = {{"batch", train.batch},
                  {"lr", train.lr},
                  {"beta1", train.beta1},
                  {"beta2", train.beta2},
                  {"eps", train.eps},
                  {"weight_decay", train.weight_decay},
                  {"max_steps", train.max_steps},
                  {"val_frac", train.val_frac},
                  {"eval_every", train.eval_every},
                  {"patience", train.patience},
                  {"ema_decay", train.ema_decay},
                  {"checkpoint_every", train.checkpoint_every},
                  {"log_every", train.log_every}};
    j["sample"] = {{"steps", sample.steps}, {"count", sample.count}, {"use_ema", sample.use_ema}};
    j["metrics"] = {{"feature_dim", metrics.feature_dim},
                    {"hidden", metrics.hidden},
                    {"extractor_steps", metrics.extractor_steps},
                    {"extractor_batch", metrics.extractor_batch},
                    {"extractor_lr", metrics.extractor_lr},
                    {"splits", metrics.splits},
                    {"fid_floor", metrics.fid_floor},
                    {"fvd_floor", metrics.fvd_floor}};
    j["bench"] = {{"steps_list", bench.steps_list}, {"clips", bench.clips}};
    return j.dump(2) + "\n";
}

}  // namespace colodiff
