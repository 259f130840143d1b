#pragma once

#include <vector>

#include "diffcal/checkpoint.hpp"
#include "diffcal/rng.hpp"
#include "diffcal/tensor.hpp"

namespace diffcal {

// The distilled transition model: one attention block shared across all
// timesteps, conditioned on t through adaptive layer norm whose modulation
// and gates start at zero. Predicts the next state's mean directly plus a
// positive per-coordinate scale.
struct KernelConfig {
    int d_model = 32;
    int n_heads = 4;
    int d_head = 8;
    int mlp_ratio = 4;
    int T = 4; // accepts t in [1, T]
    double scale_floor = 1e-6;
    double dropout = 0.1;
    double ln_eps = 1e-5;

    void validate() const;
};

struct TransitionKernel {
    KernelConfig cfg;
    // timestep pathway: sinusoid -> two-layer embed -> modulations
    Tensor tm_w1, tm_b1, tm_w2, tm_b2;
    Tensor mod_w, mod_b; // {d, 6d}, zero-init: block starts as identity
    // fused-head attention
    Tensor wq, wk, wv, wo; // each {d, d}
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    Tensor fin_w, fin_b; // {d, 2d}, zero-init final modulation
    Tensor mean_w, mean_b;   // {d, d}
    Tensor scale_w, scale_b; // raw head; scale = softplus(raw) + floor

    std::vector<NamedParam> named_params() const;
    std::vector<Tensor> params() const;
    std::size_t n_params() const;
};

TransitionKernel make_kernel(const KernelConfig& cfg, Rng& rng);

// e[2i] = sin(t * w_i), e[2i+1] = cos(t * w_i), w_i = 10000^(-2i/d).
Tensor timestep_embedding(int t, int d);

struct KernelOut {
    Tensor mean;  // {N, d}
    Tensor scale; // {N, d}, strictly positive
};

// t must lie in [1, cfg.T]. drop_rng null disables dropout regardless of
// cfg.dropout (evaluation mode).
KernelOut kernel_forward(const TransitionKernel& k, const Tensor& x_t, int t,
                         Rng* drop_rng);

Tensor kernel_sample_step(const TransitionKernel& k, const Tensor& x_t, int t,
                          Rng& rng);

struct KernelChain {
    std::vector<Tensor> states; // X_T .. X_0
    std::vector<KernelOut> outs;
};

// Reverse chain from X_T; with_noise reparameterizes each step so gradients
// pass through the whole trajectory.
KernelChain kernel_generate(const TransitionKernel& k, const Tensor& x_top,
                            bool with_noise, Rng* noise_rng, Rng* drop_rng);

} // namespace diffcal
