#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "colodiff/autograd.hpp"
#include "colodiff/error.hpp"
#include "colodiff/io.hpp"
#include "colodiff/rng.hpp"

// The noise-prediction network: patch embedding with spatial/temporal
// positional encodings, N interleaved (spatial-attention, temporal-attention)
// block pairs with class/time modulation and value-stream noise injection,
// and a zero-initialized output head. Templated on the element type so the
// same graph runs in 64-bit mode for gradient checking.
namespace colodiff {

inline constexpr double kLnEps = 1e-5;

struct DenoiserConfig {
    int frames = 8;
    int c_lat = 4;
    int lat_h = 8;
    int lat_w = 8;
    int patch = 2;
    int dim = 64;
    int heads = 4;
    int pairs = 4;
    int d_cond = 64;
    int n_classes = 3;
    std::string variant = "content_aware";

    int64_t patch_dim() const { return int64_t(patch) * patch * c_lat; }
    int64_t n_patches() const {
        return int64_t(lat_h / patch) * int64_t(lat_w / patch);
    }
    bool temporal_blocks() const { return variant != "spatial_only"; }
    // Value-stream injection belongs to the full Content-Aware path; the
    // encoding ablations (onehot / random_enc / prototypes) keep only the
    // class-vector conditioning.
    bool injection() const {
        return variant == "content_aware" || variant == "timestream" ||
               variant == "spatial_only";
    }
    bool prototypes_trainable() const {
        return variant != "onehot" && variant != "random_enc";
    }

    void validate() const {
        if (frames < 1 || c_lat < 1 || lat_h < 1 || lat_w < 1)
            throw_param("denoiser geometry must be positive");
        if (patch < 1 || lat_h % patch != 0 || lat_w % patch != 0)
            throw_param("patch side ", patch, " must divide latent extents");
        if (dim < 1 || heads < 1 || dim % heads != 0)
            throw_param("dim must be a positive multiple of heads");
        if (pairs < 1) throw_param("pairs must be >= 1");
        if (d_cond < 2 || d_cond % 2 != 0) throw_param("d_cond must be even and >= 2");
        if (n_classes < 1) throw_param("n_classes must be >= 1");
        if (d_cond < n_classes) throw_param("d_cond must be >= n_classes");
    }
};

// Standard sinusoidal embedding of an integer timestep.
template <typename T>
Tensor<T> time_embedding(int t, int d) {
    if (t < 0) throw_param("time_embedding needs t >= 0");
    if (d < 2 || d % 2 != 0) throw_param("time_embedding dim must be even");
    Tensor<T> e({int64_t(d)});
    const int half = d / 2;
    for (int i = 0; i < half; ++i) {
        const double omega = std::exp(-std::log(10000.0) * double(i) / double(half));
        e[2 * i] = static_cast<T>(std::sin(double(t) * omega));
        e[2 * i + 1] = static_cast<T>(std::cos(double(t) * omega));
    }
    return e;
}

template <typename T>
struct AttnParams {
    Var<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

// Multi-head attention over the last-but-one axis of x [.., L, D], with the
// value stream optionally augmented as V + lambda * embed (embed in x's
// layout). probs_out, when given, receives the softmax weights [G*H, L, L].
template <typename T>
Var<T> attention_with_injection(Tape<T>* tape, const Var<T>& x, const Var<T>& embed,
                                const Var<T>& lambda, int heads, const AttnParams<T>& p,
                                Tensor<T>* probs_out = nullptr) {
    const int64_t D = x->value.shape.back();
    if (D % heads != 0) throw_param("attention dim ", D, " not divisible by heads ", heads);
    if (embed && !same_shape(embed->value.shape, x->value.shape))
        throw_dim("injection embed must match token shape");
    const int64_t dk = D / heads;
    auto q = linear(tape, x, p.wq, p.bq);
    auto k = linear(tape, x, p.wk, p.bk);
    auto v = linear(tape, x, p.wv, p.bv);
    if (embed) v = add_scaled(tape, v, embed, lambda);
    auto qh = split_heads(tape, q, heads);
    auto kh = split_heads(tape, k, heads);
    auto vh = split_heads(tape, v, heads);
    const T scale = static_cast<T>(1.0 / std::sqrt(double(dk)));
    auto scores = bmm_nt(tape, qh, kh, scale);
    auto probs = softmax_last(tape, scores);
    if (probs_out) *probs_out = probs->value;
    auto ctx = bmm_nn(tape, probs, vh);
    auto merged = merge_heads(tape, ctx, x->value.shape, heads);
    return linear(tape, merged, p.wo, p.bo);
}

template <typename T>
struct DenoiserModel {
    DenoiserConfig cfg;

    Var<T> w_in, b_in;
    Var<T> pos_spatial, pos_temporal;
    struct Block {
        bool temporal = false;
        AttnParams<T> attn;
        Var<T> w1, b1, w2, b2;   // position-wise MLP
        Var<T> wm, bm;           // cond -> [gamma_a, beta_a, alpha_a, gamma_m, beta_m, alpha_m]
        Var<T> lam;              // injection weight
    };
    std::vector<Block> blocks;
    Var<T> we1, be1, we2, be2;   // shared token embedder of the noisy input
    Var<T> wmf, bmf;             // cond -> [gamma_f, beta_f]
    Var<T> w_head, b_head;
    Var<T> prototypes;

    struct ParamRef {
        std::string name;
        Var<T> var;
        bool trainable = true;
    };
    std::vector<ParamRef> params;

    static DenoiserModel init(const DenoiserConfig& cfg, uint64_t seed) {
        cfg.validate();
        DenoiserModel m;
        m.cfg = cfg;
        Rng rng(derive_seed(seed, 0x6d6f64656cull));
        const int64_t D = cfg.dim, pd = cfg.patch_dim(), P = cfg.n_patches(),
                      F = cfg.frames, dc = cfg.d_cond, C = cfg.n_classes;
        auto gauss = [&](Shape s, double std) {
            return leaf(rng.template normal_tensor<T>(std::move(s), std));
        };
        auto zeros = [&](Shape s) { return leaf(Tensor<T>(std::move(s), T(0))); };

        m.w_in = gauss({pd, D}, 1.0 / std::sqrt(double(pd)));
        m.b_in = zeros({D});
        m.pos_spatial = gauss({P, D}, 1.0 / std::sqrt(double(D)));
        m.pos_temporal = gauss({F, D}, 1.0 / std::sqrt(double(D)));

        const double sD = 1.0 / std::sqrt(double(D));
        const double s4D = 1.0 / std::sqrt(double(4 * D));
        const int n_blocks = 2 * cfg.pairs;
        for (int b = 0; b < n_blocks; ++b) {
            Block blk;
            blk.temporal = (b % 2 == 1) && cfg.temporal_blocks();
            blk.attn.wq = gauss({D, D}, sD);
            blk.attn.bq = zeros({D});
            blk.attn.wk = gauss({D, D}, sD);
            blk.attn.bk = zeros({D});
            blk.attn.wv = gauss({D, D}, sD);
            blk.attn.bv = zeros({D});
            blk.attn.wo = gauss({D, D}, sD);
            blk.attn.bo = zeros({D});
            blk.w1 = gauss({D, 4 * D}, sD);
            blk.b1 = zeros({4 * D});
            blk.w2 = gauss({4 * D, D}, s4D);
            blk.b2 = zeros({D});
            blk.wm = zeros({dc, 6 * D});
            blk.bm = zeros({6 * D});
            // Scale slices start at 1 so sub-layers see LN(x) from step one;
            // the gates (alpha) still start at 0, keeping each block an
            // exact identity at initialization.
            for (int64_t j = 0; j < D; ++j) {
                blk.bm->value[j] = T(1);          // gamma (attention)
                blk.bm->value[3 * D + j] = T(1);  // gamma (MLP)
            }
            blk.lam = zeros({1});
            m.blocks.push_back(std::move(blk));
        }

        m.we1 = gauss({D, 4 * D}, sD);
        m.be1 = zeros({4 * D});
        m.we2 = zeros({4 * D, D});
        m.be2 = zeros({D});

        m.wmf = zeros({dc, 2 * D});
        m.bmf = zeros({2 * D});
        for (int64_t j = 0; j < D; ++j) m.bmf->value[j] = T(1);
        m.w_head = zeros({D, pd});
        m.b_head = zeros({pd});

        if (cfg.variant == "onehot") {
            m.prototypes = zeros({C, dc});
            for (int64_t c = 0; c < C; ++c) m.prototypes->value[c * dc + c] = T(1);
        } else if (cfg.variant == "random_enc") {
            Rng enc_rng(derive_seed(seed, 0x656e63ull));
            m.prototypes = leaf(enc_rng.template normal_tensor<T>({C, dc}, 1.0));
        } else {
            m.prototypes = gauss({C, dc}, 1.0);
        }

        m.build_registry();
        return m;
    }

    void build_registry() {
        params.clear();
        auto add = [&](std::string name, const Var<T>& v, bool trainable = true) {
            params.push_back(ParamRef{std::move(name), v, trainable});
        };
        add("w_in", w_in);
        add("b_in", b_in);
        add("pos_spatial", pos_spatial);
        add("pos_temporal", pos_temporal);
        for (size_t b = 0; b < blocks.size(); ++b) {
            char pre[16];
            std::snprintf(pre, sizeof pre, "block%02zu.", b);
            auto& blk = blocks[b];
            add(pre + std::string("wq"), blk.attn.wq);
            add(pre + std::string("bq"), blk.attn.bq);
            add(pre + std::string("wk"), blk.attn.wk);
            add(pre + std::string("bk"), blk.attn.bk);
            add(pre + std::string("wv"), blk.attn.wv);
            add(pre + std::string("bv"), blk.attn.bv);
            add(pre + std::string("wo"), blk.attn.wo);
            add(pre + std::string("bo"), blk.attn.bo);
            add(pre + std::string("w1"), blk.w1);
            add(pre + std::string("b1"), blk.b1);
            add(pre + std::string("w2"), blk.w2);
            add(pre + std::string("b2"), blk.b2);
            add(pre + std::string("wm"), blk.wm);
            add(pre + std::string("bm"), blk.bm);
            add(pre + std::string("lam"), blk.lam);
        }
        add("embed.w1", we1);
        add("embed.b1", be1);
        add("embed.w2", we2);
        add("embed.b2", be2);
        add("final.wm", wmf);
        add("final.bm", bmf);
        add("head.w", w_head);
        add("head.b", b_head);
        add("prototypes", prototypes, cfg.prototypes_trainable());
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& p : params) n += p.var->value.numel();
        return n;
    }

    // Batched forward. z [B,F,C,h,w]; t and labels hold one entry per batch
    // element. Returns the predicted noise with z's shape.
    // trace: per-block kind strings; block_outputs: the token stream [B,F,P,D]
    // entering the chain and after every block (both observation-only).
    Var<T> forward(Tape<T>* tape, const Tensor<T>& z, const std::vector<int>& t,
                   const std::vector<int>& labels, std::vector<std::string>* trace = nullptr,
                   std::vector<Tensor<T>>* block_outputs = nullptr) const {
        if (z.rank() != 5) throw_dim("forward expects [B,F,C,h,w], got ", shape_str(z.shape));
        const int64_t B = z.extent(0);
        if (z.extent(1) != cfg.frames || z.extent(2) != cfg.c_lat ||
            z.extent(3) != cfg.lat_h || z.extent(4) != cfg.lat_w)
            throw_dim("forward input geometry mismatch: ", shape_str(z.shape));
        if (static_cast<int64_t>(t.size()) != B || static_cast<int64_t>(labels.size()) != B)
            throw_dim("forward needs one (t, label) pair per batch element");
        for (int lb : labels)
            if (lb < 0 || lb >= cfg.n_classes) throw_param("label ", lb, " out of range");
        for (int ti : t)
            if (ti < 0) throw_param("timestep must be >= 0");

        const int64_t D = cfg.dim, dc = cfg.d_cond;
        auto zin = leaf(z);
        auto tok = extract_patches(tape, zin, cfg.patch);
        tok = linear(tape, tok, w_in, b_in);
        tok = add_tail(tape, tok, pos_spatial);
        tok = add_axis_embed(tape, tok, pos_temporal);

        // cond = prototype[label] + sinusoidal(t), per example
        Tensor<T> temb({B, dc});
        for (int64_t b = 0; b < B; ++b) {
            Tensor<T> e = time_embedding<T>(t[size_t(b)], cfg.d_cond);
            for (int64_t j = 0; j < dc; ++j) temb[b * dc + j] = e[j];
        }
        auto cond = add(tape, embedding_rows(tape, prototypes, labels), leaf(std::move(temb)));

        Var<T> emb, emb_t;
        if (cfg.injection()) {
            emb = linear(tape, gelu(tape, linear(tape, tok, we1, be1)), we2, be2);
            if (cfg.temporal_blocks()) emb_t = transpose_frames_patches(tape, emb);
        }

        auto x = tok;  // [B, F, P, D]
        if (block_outputs) block_outputs->push_back(x->value);
        for (const auto& blk : blocks) {
            if (trace) trace->push_back(blk.temporal ? "timestream" : "spatial");
            Var<T> xw = blk.temporal ? transpose_frames_patches(tape, x) : x;
            const Var<T>& ew = blk.temporal ? emb_t : emb;

            auto mod = linear(tape, cond, blk.wm, blk.bm);  // [B, 6D]
            auto ga = slice_last(tape, mod, 0, D);
            auto ba = slice_last(tape, mod, D, D);
            auto aa = slice_last(tape, mod, 2 * D, D);
            auto gm = slice_last(tape, mod, 3 * D, D);
            auto bm2 = slice_last(tape, mod, 4 * D, D);
            auto am = slice_last(tape, mod, 5 * D, D);

            auto h = normalize_last(tape, xw, static_cast<T>(kLnEps));
            h = shift_by_example(tape, scale_by_example(tape, h, ga), ba);
            auto a = attention_with_injection(tape, h, cfg.injection() ? ew : Var<T>{},
                                              blk.lam, cfg.heads, blk.attn);
            xw = add(tape, xw, scale_by_example(tape, a, aa));

            auto h2 = normalize_last(tape, xw, static_cast<T>(kLnEps));
            h2 = shift_by_example(tape, scale_by_example(tape, h2, gm), bm2);
            auto mo = linear(tape, gelu(tape, linear(tape, h2, blk.w1, blk.b1)), blk.w2,
                             blk.b2);
            xw = add(tape, xw, scale_by_example(tape, mo, am));

            x = blk.temporal ? transpose_frames_patches(tape, xw) : xw;
            if (block_outputs) block_outputs->push_back(x->value);
        }

        auto fm = linear(tape, cond, wmf, bmf);  // [B, 2D]
        auto gf = slice_last(tape, fm, 0, D);
        auto bf = slice_last(tape, fm, D, D);
        auto hf = normalize_last(tape, x, static_cast<T>(kLnEps));
        hf = shift_by_example(tape, scale_by_example(tape, hf, gf), bf);
        auto out_tok = linear(tape, hf, w_head, b_head);
        return merge_patches(tape, out_tok, cfg.c_lat, cfg.lat_h, cfg.lat_w, cfg.patch);
    }

    // Single-clip convenience: z [F,C,h,w] -> prediction of the same shape.
    Tensor<T> forward_clip(const Tensor<T>& z, int t, int label) const {
        if (z.rank() != 4) throw_dim("forward_clip expects [F,C,h,w]");
        Shape bs = z.shape;
        bs.insert(bs.begin(), 1);
        Tensor<T> zb(bs, z.data);
        auto out = forward(nullptr, zb, {t}, {label});
        return Tensor<T>(z.shape, std::move(out->value.data));
    }

    void save(const std::filesystem::path& dir, const std::string& kind = "raw") const {
        std::vector<Tensor<float>> vals;
        vals.reserve(params.size());
        for (const auto& p : params) vals.push_back(p.var->value.template cast<float>());
        save_with(dir, vals, kind);
    }

    void save_with(const std::filesystem::path& dir, const std::vector<Tensor<float>>& values,
                   const std::string& kind) const {
        if (values.size() != params.size())
            throw_contract("checkpoint value count mismatch");
        namespace fs = std::filesystem;
        fs::create_directories(dir / "params");
        nlohmann::json man;
        man["format"] = "colodiff-ckpt-1";
        man["kind"] = kind;
        man["config"] = {{"frames", cfg.frames}, {"c_lat", cfg.c_lat},
                         {"lat_h", cfg.lat_h},   {"lat_w", cfg.lat_w},
                         {"patch", cfg.patch},   {"dim", cfg.dim},
                         {"heads", cfg.heads},   {"pairs", cfg.pairs},
                         {"d_cond", cfg.d_cond}, {"n_classes", cfg.n_classes},
                         {"variant", cfg.variant}};
        man["params"] = nlohmann::json::array();
        for (size_t i = 0; i < params.size(); ++i) {
            const auto& p = params[i];
            if (!same_shape(values[i].shape, p.var->value.shape))
                throw_contract("checkpoint shape mismatch for ", p.name);
            const std::string file = "params/" + p.name + ".cdt1";
            io::save_tensor(dir / file, values[i]);
            man["params"].push_back({{"name", p.name},
                                     {"file", file},
                                     {"shape", values[i].shape},
                                     {"trainable", p.trainable}});
        }
        std::ofstream os(dir / "manifest.json");
        if (!os) throw NumericError("cannot write checkpoint manifest in " + dir.string());
        os << man.dump(2) << "\n";
    }

    static DenoiserModel load(const std::filesystem::path& dir) {
        std::ifstream is(dir / "manifest.json");
        if (!is) throw_param("no checkpoint manifest at ", (dir / "manifest.json").string());
        nlohmann::json man;
        try {
            is >> man;
        } catch (const nlohmann::json::exception& e) {
            throw_param("bad checkpoint manifest: ", e.what());
        }
        if (man.at("format").get<std::string>() != "colodiff-ckpt-1")
            throw_param("unsupported checkpoint format");
        DenoiserConfig cfg;
        const auto& c = man.at("config");
        cfg.frames = c.at("frames").get<int>();
        cfg.c_lat = c.at("c_lat").get<int>();
        cfg.lat_h = c.at("lat_h").get<int>();
        cfg.lat_w = c.at("lat_w").get<int>();
        cfg.patch = c.at("patch").get<int>();
        cfg.dim = c.at("dim").get<int>();
        cfg.heads = c.at("heads").get<int>();
        cfg.pairs = c.at("pairs").get<int>();
        cfg.d_cond = c.at("d_cond").get<int>();
        cfg.n_classes = c.at("n_classes").get<int>();
        cfg.variant = c.at("variant").get<std::string>();
        DenoiserModel m = init(cfg, 0);
        size_t idx = 0;
        for (const auto& e : man.at("params")) {
            if (idx >= m.params.size()) throw_param("checkpoint has extra parameters");
            auto& p = m.params[idx++];
            if (e.at("name").get<std::string>() != p.name)
                throw_param("checkpoint parameter order mismatch at ", p.name);
            Tensor<float> v = io::load_tensor(dir / e.at("file").get<std::string>());
            if (!same_shape(v.shape, p.var->value.shape))
                throw_dim("checkpoint shape mismatch for ", p.name);
            p.var->value = v.template cast<T>();
        }
        if (idx != m.params.size()) throw_param("checkpoint is missing parameters");
        return m;
    }
};

}  // namespace colodiff
