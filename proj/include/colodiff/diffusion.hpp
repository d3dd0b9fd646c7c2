#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "colodiff/error.hpp"
#include "colodiff/tensor.hpp"

// Forward-noising schedule and the deterministic (eta = 0) non-Markovian
// reverse sampler. All schedule quantities are kept in double; tensors flow
// through in their own precision.
namespace colodiff {

struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[t], t in [1, T]; beta[0] = 0 unused
    std::vector<double> alpha_bar;  // cumulative product, alpha_bar[0] = 1

    static NoiseSchedule linear(int T, double beta_start = 1e-4, double beta_end = 0.02) {
        if (T < 1) throw_param("schedule needs T >= 1, got ", T);
        if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
            throw_param("schedule needs 0 < beta_start <= beta_end < 1, got ", beta_start,
                        ", ", beta_end);
        NoiseSchedule ns;
        ns.T = T;
        ns.beta.assign(static_cast<size_t>(T) + 1, 0.0);
        ns.alpha_bar.assign(static_cast<size_t>(T) + 1, 1.0);
        for (int t = 1; t <= T; ++t) {
            ns.beta[t] = (T == 1) ? beta_start
                                  : beta_start + (beta_end - beta_start) * double(t - 1) /
                                                     double(T - 1);
            ns.alpha_bar[t] = ns.alpha_bar[t - 1] * (1.0 - ns.beta[t]);
            if (!(ns.alpha_bar[t] > 0.0) || ns.alpha_bar[t] >= ns.alpha_bar[t - 1])
                throw_numeric("alpha_bar must stay positive and strictly decreasing at t=", t);
        }
        return ns;
    }

    double abar(int t) const {
        if (t < 0 || t > T) throw_param("timestep ", t, " outside [0, ", T, "]");
        return alpha_bar[static_cast<size_t>(t)];
    }
};

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps: the closed-form marginal of
// the stepwise Gaussian corruption. t = 0 returns z0 exactly.
template <typename T>
Tensor<T> q_sample(const NoiseSchedule& ns, const Tensor<T>& z0, const Tensor<T>& eps,
                   int t) {
    if (!same_shape(z0.shape, eps.shape)) throw_dim("q_sample shape mismatch");
    const double ab = ns.abar(t);
    const T s0 = static_cast<T>(std::sqrt(ab));
    const T s1 = static_cast<T>(std::sqrt(1.0 - ab));
    Tensor<T> out(z0.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = s0 * z0[i] + s1 * eps[i];
    return out;
}

// Invert the marginal for a model noise estimate: x0_hat =
// (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
template <typename T>
Tensor<T> predict_x0(const NoiseSchedule& ns, const Tensor<T>& z_t, const Tensor<T>& eps_hat,
                     int t) {
    if (!same_shape(z_t.shape, eps_hat.shape)) throw_dim("predict_x0 shape mismatch");
    if (t < 1) throw_param("predict_x0 needs t >= 1");
    const double ab = ns.abar(t);
    const T inv = static_cast<T>(1.0 / std::sqrt(ab));
    const T s1 = static_cast<T>(std::sqrt(1.0 - ab));
    Tensor<T> out(z_t.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = inv * (z_t[i] - s1 * eps_hat[i]);
    return out;
}

// One deterministic reverse jump expressed directly in marginal coefficients:
// recover x0_hat at level abar_k, re-noise to level abar_s with the same
// noise estimate. abar_s = 1 lands on x0_hat itself.
template <typename T>
Tensor<T> ddim_jump(const Tensor<T>& z_k, const Tensor<T>& eps_hat, double abar_k,
                    double abar_s) {
    if (!same_shape(z_k.shape, eps_hat.shape)) throw_dim("ddim_jump shape mismatch");
    if (!(abar_k > 0.0) || abar_k > 1.0 || !(abar_s > 0.0) || abar_s > 1.0)
        throw_param("ddim_jump needs alpha_bar values in (0, 1]");
    if (abar_s < abar_k) throw_param("ddim_jump must move toward less noise (abar_s >= abar_k)");
    const T inv_sk = static_cast<T>(1.0 / std::sqrt(abar_k));
    const T sig_k = static_cast<T>(std::sqrt(1.0 - abar_k));
    const T sq_s = static_cast<T>(std::sqrt(abar_s));
    const T sig_s = static_cast<T>(std::sqrt(1.0 - abar_s));
    Tensor<T> out(z_k.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        const T x0 = inv_sk * (z_k[i] - sig_k * eps_hat[i]);
        out[i] = sq_s * x0 + sig_s * eps_hat[i];
    }
    ensure_finite(out, "ddim_jump");
    return out;
}

// Schedule-indexed jump k -> s with 0 <= s < k <= T.
template <typename T>
Tensor<T> ddim_step(const NoiseSchedule& ns, const Tensor<T>& z_k, const Tensor<T>& eps_hat,
                    int k, int s) {
    if (k < 1 || k > ns.T || s < 0 || s >= k)
        throw_param("ddim_step needs 0 <= s < k <= T, got k=", k, " s=", s);
    return ddim_jump(z_k, eps_hat, ns.abar(k), ns.abar(s));
}

// K levels picked uniformly from [1, T]: t_i = round(i*T/K), returned
// descending, deduplicated. plan.front() == T always; the sampler appends the
// implicit final hop to 0.
inline std::vector<int> make_substep_plan(int T, int K) {
    if (T < 1) throw_param("substep plan needs T >= 1");
    if (K < 1 || K > T) throw_param("substep count ", K, " outside [1, ", T, "]");
    std::vector<int> plan;
    plan.reserve(static_cast<size_t>(K));
    for (int i = K; i >= 1; --i) {
        const int t = static_cast<int>(std::llround(double(i) * double(T) / double(K)));
        if (plan.empty() || plan.back() != t) plan.push_back(t);
    }
    return plan;
}

// Run the reverse process from pure noise z (at level T) down to a clean
// sample. eps_fn(z, t) must return the model's noise estimate at level t.
template <typename T, typename EpsFn>
Tensor<T> ddim_sample(const NoiseSchedule& ns, const std::vector<int>& plan, Tensor<T> z,
                      EpsFn&& eps_fn) {
    if (plan.empty() || plan.front() != ns.T)
        throw_param("sampling plan must start at T=", ns.T);
    for (size_t j = 0; j + 1 < plan.size(); ++j)
        if (plan[j + 1] >= plan[j]) throw_param("sampling plan must be strictly decreasing");
    for (size_t j = 0; j < plan.size(); ++j) {
        const int k = plan[j];
        const int s = (j + 1 < plan.size()) ? plan[j + 1] : 0;
        Tensor<T> eps_hat = eps_fn(z, k);
        z = ddim_step(ns, z, eps_hat, k, s);
    }
    return z;
}

}  // namespace colodiff
