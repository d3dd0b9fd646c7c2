#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "colodiff/config.hpp"
#include "colodiff/denoiser.hpp"
#include "colodiff/diffusion.hpp"
#include "colodiff/error.hpp"
#include "colodiff/rng.hpp"

// Optimization machinery: decoupled-weight-decay Adam, EMA shadow weights,
// patience-based early stopping, and the deterministic training loop over
// encoded latent clips. All randomness flows from one serializable generator
// so a resumed run replays the interrupted one exactly.
namespace colodiff {

template <typename T>
struct AdamW {
    double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
    int64_t step_count = 0;
    std::vector<Tensor<T>> m, v;

    void init(const std::vector<Var<T>>& params) {
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(p->value.shape, T(0));
            v.emplace_back(p->value.shape, T(0));
        }
        step_count = 0;
    }

    // Consumes and clears accumulated gradients. Throws DivergenceError on
    // non-finite gradients before any parameter is touched.
    void step(const std::vector<Var<T>>& params) {
        if (params.size() != m.size()) throw_contract("optimizer/param list mismatch");
        for (size_t i = 0; i < params.size(); ++i) {
            if (!params[i]->has_grad) throw_contract("optimizer step before backward");
            if (!params[i]->grad.all_finite())
                throw DivergenceError("non-finite gradient in parameter " + std::to_string(i));
        }
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, double(step_count));
        const double bc2 = 1.0 - std::pow(beta2, double(step_count));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i]->value;
            auto& g = params[i]->grad;
            auto& mi = m[i];
            auto& vi = v[i];
            const int64_t n = p.numel();
            for (int64_t j = 0; j < n; ++j) {
                const double gj = double(g[j]);
                const double mj = beta1 * double(mi[j]) + (1.0 - beta1) * gj;
                const double vj = beta2 * double(vi[j]) + (1.0 - beta2) * gj * gj;
                mi[j] = static_cast<T>(mj);
                vi[j] = static_cast<T>(vj);
                const double mh = mj / bc1;
                const double vh = vj / bc2;
                double pj = double(p[j]);
                pj -= lr * weight_decay * pj;
                pj -= lr * mh / (std::sqrt(vh) + eps);
                p[j] = static_cast<T>(pj);
            }
            g.fill(T(0));
        }
    }
};

template <typename T>
struct Ema {
    double decay = 0.999;
    std::vector<Tensor<T>> shadow;

    void init(const std::vector<Var<T>>& params) {
        shadow.clear();
        for (const auto& p : params) shadow.push_back(p->value);
    }
    void update(const std::vector<Var<T>>& params) {
        if (params.size() != shadow.size()) throw_contract("ema/param list mismatch");
        for (size_t i = 0; i < params.size(); ++i) {
            auto& s = shadow[i];
            const auto& p = params[i]->value;
            for (int64_t j = 0; j < s.numel(); ++j)
                s[j] = static_cast<T>(decay * double(s[j]) + (1.0 - decay) * double(p[j]));
        }
    }
};

struct EarlyStop {
    int patience = 10;
    double min_delta = 1e-6;
    double best = std::numeric_limits<double>::infinity();
    int bad = 0;

    // Returns true when the run should stop.
    bool update(double val) {
        if (patience < 1) throw_param("early stop patience must be >= 1");
        if (val < best - min_delta) {
            best = val;
            bad = 0;
        } else {
            ++bad;
        }
        return bad >= patience;
    }
};

struct TrainStepLog {
    int step = 0;
    double loss = 0.0;
    bool has_val = false;
    double val_loss = 0.0;
    double wall_ms = 0.0;
};

struct TrainOutcome {
    int steps_done = 0;
    double last_loss = 0.0;
    double best_val = std::numeric_limits<double>::infinity();
    bool early_stopped = false;
};

class Trainer {
public:
    Trainer(DenoiserModel<float>& model, NoiseSchedule schedule, TrainConfig tc,
            std::vector<Tensor<float>> latents, std::vector<int> labels, uint64_t seed)
        : model_(model), ns_(std::move(schedule)), tc_(tc), seed_(seed), rng_(derive_seed(seed, 0x747261696eull)) {
        if (latents.size() != labels.size() || latents.empty())
            throw_param("trainer needs a nonempty latent/label set");
        for (const auto& l : latents)
            if (l.rank() != 4 || l.extent(0) != model.cfg.frames ||
                l.extent(1) != model.cfg.c_lat || l.extent(2) != model.cfg.lat_h ||
                l.extent(3) != model.cfg.lat_w)
                throw_dim("latent clip shape does not match model geometry");
        // Deterministic validation split: shuffle indices with a seed-derived
        // generator, carve off the tail fraction.
        const size_t n = latents.size();
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        Rng split_rng(derive_seed(seed, 0x73706c6974ull));
        for (size_t i = n; i > 1; --i) {
            const size_t j = static_cast<size_t>(split_rng.uniform_int(int64_t(i)));
            std::swap(order[i - 1], order[j]);
        }
        size_t n_val = static_cast<size_t>(std::floor(tc.val_frac * double(n)));
        if (tc.val_frac > 0.0 && n_val == 0) n_val = 1;
        if (n_val >= n) throw_param("validation split leaves no training data");
        for (size_t i = 0; i < n; ++i) {
            const size_t src = order[i];
            if (i < n - n_val) {
                train_latents_.push_back(latents[src]);
                train_labels_.push_back(labels[src]);
            } else {
                val_latents_.push_back(latents[src]);
                val_labels_.push_back(labels[src]);
            }
        }
        stopper_.patience = tc.patience;
        trainables_.clear();
        for (const auto& p : model_.params)
            if (p.trainable) trainables_.push_back(p.var);
        opt_.lr = tc.lr;
        opt_.beta1 = tc.beta1;
        opt_.beta2 = tc.beta2;
        opt_.eps = tc.eps;
        opt_.weight_decay = tc.weight_decay;
        opt_.init(trainables_);
        ema_.decay = tc.ema_decay;
        ema_.init(trainables_);
        build_val_probe();
    }

    size_t train_size() const { return train_latents_.size(); }
    size_t val_size() const { return val_latents_.size(); }
    int step() const { return step_; }
    const Ema<float>& ema() const { return ema_; }

    // One optimization step on a freshly drawn batch; returns the loss.
    double train_step() {
        const int B = tc_.batch;
        const auto& cfg = model_.cfg;
        Tensor<float> zt({B, cfg.frames, cfg.c_lat, cfg.lat_h, cfg.lat_w});
        Tensor<float> eps(zt.shape);
        std::vector<int> ts(static_cast<size_t>(B));
        std::vector<int> labels(static_cast<size_t>(B));
        const int64_t per = zt.numel() / B;
        for (int b = 0; b < B; ++b) {
            const size_t idx =
                static_cast<size_t>(rng_.uniform_int(int64_t(train_latents_.size())));
            const int t = 1 + static_cast<int>(rng_.uniform_int(ns_.T));
            ts[size_t(b)] = t;
            labels[size_t(b)] = train_labels_[idx];
            const auto& z0 = train_latents_[idx];
            const double ab = ns_.abar(t);
            const float s0 = static_cast<float>(std::sqrt(ab));
            const float s1 = static_cast<float>(std::sqrt(1.0 - ab));
            float* zp = zt.ptr() + b * per;
            float* ep = eps.ptr() + b * per;
            for (int64_t i = 0; i < per; ++i) {
                const float e = static_cast<float>(rng_.normal());
                ep[i] = e;
                zp[i] = s0 * z0[i] + s1 * e;
            }
        }
        Tape<float> tape;
        auto pred = model_.forward(&tape, zt, ts, labels);
        auto loss = mse_mean(&tape, pred, leaf(std::move(eps)));
        const double loss_v = double(loss->value[0]);
        if (!std::isfinite(loss_v))
            throw DivergenceError("training loss is non-finite at step " +
                                  std::to_string(step_ + 1));
        tape.backward(loss);
        opt_.step(trainables_);
        ema_.update(trainables_);
        ++step_;
        return loss_v;
    }

    // Loss on the fixed validation probe (precomputed z_t / eps / t), so the
    // series is comparable across evaluations and across resumes.
    double validation_loss() const {
        if (val_probe_z_.numel() == 1) return 0.0;
        auto pred = model_.forward(nullptr, val_probe_z_, val_probe_t_, val_probe_labels_);
        double acc = 0.0;
        for (int64_t i = 0; i < pred->value.numel(); ++i) {
            const double d = double(pred->value[i]) - double(val_probe_eps_[i]);
            acc += d * d;
        }
        return acc / double(pred->value.numel());
    }

    // Runs up to max_steps more steps (early stop permitting); emits one log
    // record per log_every steps and per evaluation.
    TrainOutcome run(int max_steps, const std::function<void(const TrainStepLog&)>& sink) {
        TrainOutcome out;
        const bool fresh = (step_ == 0);
        for (int i = 0; i < max_steps; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            const double loss = train_step();
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                          t0)
                    .count();
            if (fresh && i == 0) {
                // The first prediction is exactly zero, so the loss is a mean
                // of N unit-Gaussian squares: 1 with std sqrt(2/N). Tolerate
                // 6 sigma of sampling noise, never less than 0.1.
                const auto& mc = model_.cfg;
                const double n_vals = double(tc_.batch) * double(mc.frames) *
                                      double(mc.c_lat) * double(mc.lat_h) * double(mc.lat_w);
                const double tol = std::max(0.1, 6.0 * std::sqrt(2.0 / n_vals));
                if (std::abs(loss - 1.0) > tol)
                    throw_contract("initial loss ", loss,
                                   " is far from 1.0; zero-init head contract is broken");
            }
            out.last_loss = loss;
            out.steps_done = step_;
            TrainStepLog rec;
            rec.step = step_;
            rec.loss = loss;
            rec.wall_ms = ms;
            bool emit = (tc_.log_every > 0 && step_ % tc_.log_every == 0);
            if (tc_.eval_every > 0 && step_ % tc_.eval_every == 0 && !val_latents_.empty()) {
                rec.has_val = true;
                rec.val_loss = validation_loss();
                emit = true;
                const bool stop = stopper_.update(rec.val_loss);
                out.best_val = stopper_.best;
                if (stop) {
                    if (sink) sink(rec);
                    out.early_stopped = true;
                    return out;
                }
            }
            if (emit && sink) sink(rec);
        }
        return out;
    }

    // ---- persistence -------------------------------------------------------

    void save_state(const std::filesystem::path& dir) const {
        namespace fs = std::filesystem;
        model_.save(dir / "model", "raw");
        std::vector<Tensor<float>> ema_vals;
        size_t k = 0;
        for (const auto& p : model_.params) {
            if (p.trainable)
                ema_vals.push_back(ema_.shadow[k++]);
            else
                ema_vals.push_back(p.var->value);
        }
        model_.save_with(dir / "ema", ema_vals, "ema");
        fs::create_directories(dir / "opt");
        for (size_t i = 0; i < trainables_.size(); ++i) {
            io::save_tensor(dir / "opt" / ("m" + std::to_string(i) + ".cdt1"), opt_.m[i]);
            io::save_tensor(dir / "opt" / ("v" + std::to_string(i) + ".cdt1"), opt_.v[i]);
        }
        nlohmann::json st;
        st["step"] = step_;
        st["opt_step"] = opt_.step_count;
        st["rng"] = rng_.serialize();
        // +infinity (no evaluation yet) is not representable in JSON
        st["early_stop"] = {{"best", std::isfinite(stopper_.best)
                                         ? nlohmann::json(stopper_.best)
                                         : nlohmann::json()},
                            {"bad", stopper_.bad}};
        std::ofstream os(dir / "trainer.json");
        if (!os) throw NumericError("cannot write trainer state in " + dir.string());
        os << st.dump(2) << "\n";
    }

    void load_state(const std::filesystem::path& dir) {
        auto loaded = DenoiserModel<float>::load(dir / "model");
        if (loaded.params.size() != model_.params.size())
            throw_param("resume checkpoint does not match model");
        for (size_t i = 0; i < model_.params.size(); ++i)
            model_.params[i].var->value = loaded.params[i].var->value;
        auto ema_model = DenoiserModel<float>::load(dir / "ema");
        ema_.shadow.clear();
        for (size_t i = 0; i < model_.params.size(); ++i)
            if (model_.params[i].trainable)
                ema_.shadow.push_back(ema_model.params[i].var->value);
        for (size_t i = 0; i < trainables_.size(); ++i) {
            opt_.m[i] = io::load_tensor(dir / "opt" / ("m" + std::to_string(i) + ".cdt1"));
            opt_.v[i] = io::load_tensor(dir / "opt" / ("v" + std::to_string(i) + ".cdt1"));
        }
        std::ifstream is(dir / "trainer.json");
        if (!is) throw_param("no trainer state at ", (dir / "trainer.json").string());
        nlohmann::json st;
        is >> st;
        step_ = st.at("step").get<int>();
        opt_.step_count = st.at("opt_step").get<int64_t>();
        rng_.deserialize(st.at("rng").get<std::string>());
        const auto& best = st.at("early_stop").at("best");
        stopper_.best =
            best.is_null() ? std::numeric_limits<double>::infinity() : best.get<double>();
        stopper_.bad = st.at("early_stop").at("bad").get<int>();
    }

private:
    void build_val_probe() {
        if (val_latents_.empty()) {
            val_probe_z_ = Tensor<float>({1});
            return;
        }
        const auto& cfg = model_.cfg;
        const int n = static_cast<int>(std::min<size_t>(val_latents_.size(), 48));
        Rng vr(derive_seed(seed_, 0x76616cull));
        val_probe_z_ = Tensor<float>({n, cfg.frames, cfg.c_lat, cfg.lat_h, cfg.lat_w});
        val_probe_eps_ = Tensor<float>(val_probe_z_.shape);
        val_probe_t_.resize(size_t(n));
        val_probe_labels_.resize(size_t(n));
        const int64_t per = val_probe_z_.numel() / n;
        for (int b = 0; b < n; ++b) {
            const size_t idx = static_cast<size_t>(vr.uniform_int(int64_t(val_latents_.size())));
            const int t = 1 + static_cast<int>(vr.uniform_int(ns_.T));
            val_probe_t_[size_t(b)] = t;
            val_probe_labels_[size_t(b)] = val_labels_[idx];
            const double ab = ns_.abar(t);
            const float s0 = static_cast<float>(std::sqrt(ab));
            const float s1 = static_cast<float>(std::sqrt(1.0 - ab));
            float* zp = val_probe_z_.ptr() + b * per;
            float* ep = val_probe_eps_.ptr() + b * per;
            const auto& z0 = val_latents_[idx];
            for (int64_t i = 0; i < per; ++i) {
                const float e = static_cast<float>(vr.normal());
                ep[i] = e;
                zp[i] = s0 * z0[i] + s1 * e;
            }
        }
    }

    DenoiserModel<float>& model_;
    NoiseSchedule ns_;
    TrainConfig tc_;
    uint64_t seed_;
    Rng rng_;
    std::vector<Tensor<float>> train_latents_, val_latents_;
    std::vector<int> train_labels_, val_labels_;
    std::vector<Var<float>> trainables_;
    AdamW<float> opt_;
    Ema<float> ema_;
    EarlyStop stopper_;
    int step_ = 0;
    Tensor<float> val_probe_z_{{1}};
    Tensor<float> val_probe_eps_{{1}};
    std::vector<int> val_probe_t_;
    std::vector<int> val_probe_labels_;
};

}  // namespace colodiff
