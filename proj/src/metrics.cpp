#include "colodiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "colodiff/autograd.hpp"
#include "colodiff/error.hpp"
#include "colodiff/io.hpp"
#include "colodiff/rng.hpp"
#include "colodiff/trainer.hpp"

namespace colodiff::metrics {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// [N,3,H,W] or [N,input_dim] -> flat [N, input_dim]
Tensor<float> flatten_frames(const Tensor<float>& frames, int input_dim) {
    if (frames.rank() == 2) {
        if (frames.extent(1) != input_dim) throw_dim("frame feature width mismatch");
        return frames;
    }
    if (frames.rank() != 4) throw_dim("expected frames [N,3,H,W]");
    const int64_t n = frames.extent(0);
    const int64_t d = frames.numel() / n;
    if (d != input_dim)
        throw_dim("frame pixel count ", d, " does not match extractor input ", input_dim);
    return Tensor<float>({n, d}, frames.data);
}

void affine_forward(const Tensor<float>& x, const Tensor<float>& w, const Tensor<float>& b,
                    Tensor<float>& y, bool apply_gelu) {
    const int64_t n = x.extent(0), k = x.extent(1), m = w.extent(1);
    if (w.extent(0) != k || b.numel() != m)
        throw_dim("extractor layer shape mismatch: x ", shape_str(x.shape), " w ",
                  shape_str(w.shape));
    kern::gemm(x.data.data(), w.data.data(), y.ptr(), n, k, m);
    for (int64_t r = 0; r < n; ++r)
        for (int64_t j = 0; j < m; ++j) {
            float v = y[r * m + j] + b[j];
            y[r * m + j] = apply_gelu ? kern::gelu_scalar(v) : v;
        }
}

}  // namespace

Tensor<float> FeatureExtractor::frame_features(const Tensor<float>& frames) const {
    Tensor<float> x = flatten_frames(frames, input_dim);
    const int64_t n = x.extent(0);
    Tensor<float> h({n, int64_t(hidden)});
    affine_forward(x, w1, b1, h, true);
    Tensor<float> f({n, int64_t(feat_dim)});
    affine_forward(h, w2, b2, f, true);
    return f;
}

Tensor<float> FeatureExtractor::frame_probs(const Tensor<float>& frames) const {
    Tensor<float> f = frame_features(frames);
    const int64_t n = f.extent(0);
    Tensor<float> logits({n, int64_t(n_classes)});
    affine_forward(f, w3, b3, logits, false);
    Tensor<float> probs(logits.shape);
    kern::softmax_rows(logits.data.data(), probs.ptr(), n, n_classes);
    return probs;
}

Tensor<float> FeatureExtractor::clip_features(const Tensor<float>& clip) const {
    if (clip.rank() != 4) throw_dim("clip_features expects [F,3,H,W]");
    const int64_t F = clip.extent(0);
    if (F < 1) throw_param("clip has no frames");
    Tensor<float> f = frame_features(Tensor<float>({F, clip.numel() / F}, clip.data));
    Tensor<float> out({2 * int64_t(feat_dim)});
    out.fill(0.0f);
    for (int64_t fr = 0; fr < F; ++fr)
        for (int64_t j = 0; j < feat_dim; ++j) out[j] += f[fr * feat_dim + j] / float(F);
    if (F > 1) {
        for (int64_t fr = 0; fr + 1 < F; ++fr)
            for (int64_t j = 0; j < feat_dim; ++j)
                out[feat_dim + j] += std::abs(f[(fr + 1) * feat_dim + j] - f[fr * feat_dim + j]) /
                                     float(F - 1);
    }
    return out;
}

Tensor<float> FeatureExtractor::clip_probs(const Tensor<float>& clip) const {
    if (clip.rank() != 4) throw_dim("clip_probs expects [F,3,H,W]");
    const int64_t F = clip.extent(0);
    Tensor<float> f = frame_features(Tensor<float>({F, clip.numel() / F}, clip.data));
    Tensor<float> logits({F, int64_t(n_classes)});
    affine_forward(f, w3, b3, logits, false);
    Tensor<float> mean({int64_t(1), int64_t(n_classes)});
    mean.fill(0.0f);
    for (int64_t fr = 0; fr < F; ++fr)
        for (int64_t c = 0; c < n_classes; ++c) mean[c] += logits[fr * n_classes + c] / float(F);
    Tensor<float> probs(mean.shape);
    kern::softmax_rows(mean.data.data(), probs.ptr(), 1, n_classes);
    return Tensor<float>({int64_t(n_classes)}, std::move(probs.data));
}

int FeatureExtractor::classify_clip(const Tensor<float>& clip) const {
    Tensor<float> p = clip_probs(clip);
    int best = 0;
    for (int c = 1; c < n_classes; ++c)
        if (p[c] > p[best]) best = c;
    return best;
}

void FeatureExtractor::save(const fs::path& dir) const {
    fs::create_directories(dir);
    io::save_tensor(dir / "w1.cdt1", w1);
    io::save_tensor(dir / "b1.cdt1", b1);
    io::save_tensor(dir / "w2.cdt1", w2);
    io::save_tensor(dir / "b2.cdt1", b2);
    io::save_tensor(dir / "w3.cdt1", w3);
    io::save_tensor(dir / "b3.cdt1", b3);
    json j;
    j["input_dim"] = input_dim;
    j["hidden"] = hidden;
    j["feat_dim"] = feat_dim;
    j["n_classes"] = n_classes;
    j["holdout_accuracy"] = holdout_accuracy;
    std::ofstream os(dir / "extractor.json");
    if (!os) throw NumericError("cannot write extractor manifest in " + dir.string());
    os << j.dump(2) << "\n";
}

FeatureExtractor FeatureExtractor::load(const fs::path& dir) {
    std::ifstream is(dir / "extractor.json");
    if (!is) throw_param("no extractor manifest at ", (dir / "extractor.json").string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw_param("bad extractor manifest: ", e.what());
    }
    FeatureExtractor fx;
    fx.input_dim = j.at("input_dim").get<int>();
    fx.hidden = j.at("hidden").get<int>();
    fx.feat_dim = j.at("feat_dim").get<int>();
    fx.n_classes = j.at("n_classes").get<int>();
    fx.holdout_accuracy = j.at("holdout_accuracy").get<double>();
    fx.w1 = io::load_tensor(dir / "w1.cdt1");
    fx.b1 = io::load_tensor(dir / "b1.cdt1");
    fx.w2 = io::load_tensor(dir / "w2.cdt1");
    fx.b2 = io::load_tensor(dir / "b2.cdt1");
    fx.w3 = io::load_tensor(dir / "w3.cdt1");
    fx.b3 = io::load_tensor(dir / "b3.cdt1");
    return fx;
}

FeatureExtractor train_extractor(const synth::Dataset& ds, const MetricsConfig& mc,
                                 uint64_t seed) {
    if (ds.clips.empty()) throw_param("cannot train extractor on empty dataset");
    const int64_t F = ds.clips[0].extent(0);
    const int64_t input_dim = ds.clips[0].numel() / F;
    int n_classes = 0;
    for (int lb : ds.labels) n_classes = std::max(n_classes, lb + 1);

    // Clip-level split so holdout frames come from unseen clips.
    Rng rng(derive_seed(seed, 0x6665617473ull));
    std::vector<size_t> order(ds.clips.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[size_t(rng.uniform_int(int64_t(i)))]);
    const size_t n_train_clips = std::max<size_t>(1, order.size() * 8 / 10);

    std::vector<const float*> train_frames, hold_frames;
    std::vector<int> train_labels, hold_labels;
    for (size_t i = 0; i < order.size(); ++i) {
        const auto& clip = ds.clips[order[i]];
        const int lb = ds.labels[order[i]];
        for (int64_t f = 0; f < clip.extent(0); ++f) {
            const float* p = clip.data.data() + f * input_dim;
            if (i < n_train_clips) {
                train_frames.push_back(p);
                train_labels.push_back(lb);
            } else {
                hold_frames.push_back(p);
                hold_labels.push_back(lb);
            }
        }
    }
    if (train_frames.empty() || hold_frames.empty())
        throw_param("extractor split produced an empty side");

    auto w1 = leaf(rng.normal_tensor<float>({input_dim, mc.hidden},
                                            1.0 / std::sqrt(double(input_dim))));
    auto b1 = leaf(Tensor<float>({int64_t(mc.hidden)}, 0.0f));
    auto w2 = leaf(rng.normal_tensor<float>({int64_t(mc.hidden), int64_t(mc.feature_dim)},
                                            1.0 / std::sqrt(double(mc.hidden))));
    auto b2 = leaf(Tensor<float>({int64_t(mc.feature_dim)}, 0.0f));
    auto w3 = leaf(rng.normal_tensor<float>({int64_t(mc.feature_dim), int64_t(n_classes)},
                                            1.0 / std::sqrt(double(mc.feature_dim))));
    auto b3 = leaf(Tensor<float>({int64_t(n_classes)}, 0.0f));
    std::vector<Var<float>> params = {w1, b1, w2, b2, w3, b3};
    AdamW<float> opt;
    opt.lr = mc.extractor_lr;
    opt.init(params);

    const int B = std::min<int>(mc.extractor_batch, int(train_frames.size()));
    for (int step = 0; step < mc.extractor_steps; ++step) {
        Tensor<float> x({B, input_dim});
        std::vector<int> y(static_cast<size_t>(B));
        for (int b = 0; b < B; ++b) {
            const size_t idx = size_t(rng.uniform_int(int64_t(train_frames.size())));
            std::copy_n(train_frames[idx], input_dim, x.ptr() + b * input_dim);
            y[size_t(b)] = train_labels[idx];
        }
        Tape<float> tape;
        auto h = gelu(&tape, linear(&tape, leaf(std::move(x)), w1, b1));
        auto f = gelu(&tape, linear(&tape, h, w2, b2));
        auto logits = linear(&tape, f, w3, b3);
        auto loss = cross_entropy_mean(&tape, logits, y);
        tape.backward(loss);
        opt.step(params);
    }

    FeatureExtractor fx;
    fx.input_dim = int(input_dim);
    fx.hidden = mc.hidden;
    fx.feat_dim = mc.feature_dim;
    fx.n_classes = n_classes;
    fx.w1 = w1->value;
    fx.b1 = b1->value;
    fx.w2 = w2->value;
    fx.b2 = b2->value;
    fx.w3 = w3->value;
    fx.b3 = b3->value;

    Tensor<float> hx({int64_t(hold_frames.size()), input_dim});
    for (size_t i = 0; i < hold_frames.size(); ++i)
        std::copy_n(hold_frames[i], input_dim, hx.ptr() + int64_t(i) * input_dim);
    Tensor<float> probs = fx.frame_probs(hx);
    int64_t correct = 0;
    for (size_t i = 0; i < hold_frames.size(); ++i) {
        int best = 0;
        for (int c = 1; c < n_classes; ++c)
            if (probs[int64_t(i) * n_classes + c] > probs[int64_t(i) * n_classes + best])
                best = c;
        if (best == hold_labels[i]) ++correct;
    }
    fx.holdout_accuracy = double(correct) / double(hold_frames.size());
    return fx;
}

// ----------------------------------------------------------------- frechet --

FrechetStats fit_gaussian(const Tensor<float>& features) {
    if (features.rank() != 2) throw_dim("fit_gaussian expects [N,d]");
    const int64_t n = features.extent(0), d = features.extent(1);
    if (n < 2) throw_param("fit_gaussian needs >= 2 vectors, got ", n);
    FrechetStats st;
    st.n = n;
    st.mu = Eigen::VectorXd::Zero(d);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) st.mu(j) += double(features[i * d + j]);
    st.mu /= double(n);
    st.sigma = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd c(d);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < d; ++j) c(j) = double(features[i * d + j]) - st.mu(j);
        st.sigma.noalias() += c * c.transpose();
    }
    st.sigma /= double(n - 1);
    return st;
}

Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols()) throw_contract("matrix_sqrt_psd needs a square matrix");
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-6)
        throw_contract("matrix_sqrt_psd input asymmetric by ", asym, " (> 1e-6)");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    if (es.info() != Eigen::Success) throw_numeric("matrix sqrt eigensolve failed");
    Eigen::VectorXd ev = es.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = std::sqrt(std::max(ev(i), 0.0));
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double frechet_distance(const FrechetStats& r, const FrechetStats& g) {
    if (r.mu.size() != g.mu.size()) throw_param("frechet stats dimension mismatch");
    const Eigen::VectorXd dmu = r.mu - g.mu;
    const Eigen::MatrixXd sr = matrix_sqrt_psd(r.sigma);
    const Eigen::MatrixXd inner = sr * g.sigma * sr;
    const Eigen::MatrixXd root = matrix_sqrt_psd(0.5 * (inner + inner.transpose()));
    const double d2 = dmu.squaredNorm() + r.sigma.trace() + g.sigma.trace() - 2.0 * root.trace();
    return std::max(d2, 0.0);
}

// ------------------------------------------------------------------ scores --

double fid_from_features(const Tensor<float>& real_feats, const Tensor<float>& gen_feats) {
    return frechet_distance(fit_gaussian(real_feats), fit_gaussian(gen_feats));
}

double fid(const Tensor<float>& real_frames, const Tensor<float>& gen_frames,
           const FeatureExtractor& fx, int floor_frames) {
    if (real_frames.extent(0) < floor_frames || gen_frames.extent(0) < floor_frames)
        throw_param("fid needs >= ", floor_frames, " frames per side, got ",
                    real_frames.extent(0), " and ", gen_frames.extent(0));
    return fid_from_features(fx.frame_features(real_frames), fx.frame_features(gen_frames));
}

double fvd_analog(const std::vector<Tensor<float>>& real_clips,
                  const std::vector<Tensor<float>>& gen_clips, const FeatureExtractor& fx,
                  int floor_clips) {
    if (int(real_clips.size()) < floor_clips || int(gen_clips.size()) < floor_clips)
        throw_param("fvd_analog needs >= ", floor_clips, " clips per side, got ",
                    real_clips.size(), " and ", gen_clips.size());
    const int64_t F = real_clips[0].extent(0);
    for (const auto& c : real_clips)
        if (c.extent(0) != F) throw_param("fvd_analog clips must share a frame count");
    for (const auto& c : gen_clips)
        if (c.extent(0) != F) throw_param("fvd_analog clips must share a frame count");
    auto pool = [&](const std::vector<Tensor<float>>& clips) {
        Tensor<float> feats({int64_t(clips.size()), 2 * int64_t(fx.feat_dim)});
        for (size_t i = 0; i < clips.size(); ++i) {
            Tensor<float> f = fx.clip_features(clips[i]);
            std::copy_n(f.data.data(), f.numel(), feats.ptr() + int64_t(i) * f.numel());
        }
        return feats;
    };
    return fid_from_features(pool(real_clips), pool(gen_clips));
}

std::pair<double, double> inception_score_from_probs(const Tensor<float>& probs, int splits) {
    if (probs.rank() != 2) throw_dim("inception score expects probs [N,C]");
    const int64_t n = probs.extent(0), C = probs.extent(1);
    if (splits < 1) throw_param("splits must be >= 1");
    if (n < splits || n % splits != 0)
        throw_param("set size ", n, " not divisible into ", splits, " splits");
    const int64_t per = n / splits;
    std::vector<double> scores;
    for (int s = 0; s < splits; ++s) {
        std::vector<double> marginal(size_t(C), 0.0);
        for (int64_t i = s * per; i < (s + 1) * per; ++i)
            for (int64_t c = 0; c < C; ++c) marginal[size_t(c)] += double(probs[i * C + c]);
        for (auto& m : marginal) m /= double(per);
        double mean_kl = 0.0;
        for (int64_t i = s * per; i < (s + 1) * per; ++i) {
            double kl = 0.0;
            for (int64_t c = 0; c < C; ++c) {
                const double p = double(probs[i * C + c]);
                if (p > 0.0) kl += p * (std::log(p) - std::log(std::max(marginal[size_t(c)], 1e-300)));
            }
            mean_kl += kl;
        }
        scores.push_back(std::exp(mean_kl / double(per)));
    }
    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= double(splits);
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    return {mean, std::sqrt(var / double(splits))};
}

std::pair<double, double> inception_score(const std::vector<Tensor<float>>& clips,
                                          const FeatureExtractor& fx, int splits) {
    if (clips.empty()) throw_param("inception score needs a nonempty clip set");
    Tensor<float> probs({int64_t(clips.size()), int64_t(fx.n_classes)});
    for (size_t i = 0; i < clips.size(); ++i) {
        Tensor<float> p = fx.clip_probs(clips[i]);
        std::copy_n(p.data.data(), p.numel(), probs.ptr() + int64_t(i) * fx.n_classes);
    }
    return inception_score_from_probs(probs, splits);
}

Tensor<float> stack_frames(const std::vector<Tensor<float>>& clips) {
    if (clips.empty()) throw_param("stack_frames needs clips");
    const int64_t F = clips[0].extent(0), C = clips[0].extent(1), H = clips[0].extent(2),
                  W = clips[0].extent(3);
    Tensor<float> out({int64_t(clips.size()) * F, C, H, W});
    int64_t row = 0;
    const int64_t per = C * H * W;
    for (const auto& clip : clips) {
        if (clip.extent(1) != C || clip.extent(2) != H || clip.extent(3) != W)
            throw_dim("stack_frames clip geometry mismatch");
        for (int64_t f = 0; f < clip.extent(0); ++f, ++row)
            std::copy_n(clip.data.data() + f * per, per, out.ptr() + row * per);
    }
    return out;
}

}  // namespace colodiff::metrics
