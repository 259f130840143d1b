#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "diffcal/checkpoint.hpp"
#include "diffcal/optim.hpp"
#include "diffcal/rng.hpp"
#include "diffcal/tensor.hpp"

namespace diffcal {

// standard: softmax(QK^T/sqrt(d_h))V per head.
// kernel:   K V with K_ij = exp(<P u_i, P u_j>/sqrt(d_h)), shared projection P.
// sgpa:     kernel mean plus a learned per-output-dim posterior covariance
//           over tokens; one reparameterized sample per forward when sampling.
// kep:      two learned feature branches over s inducing directions sharing
//           variational inducing outputs; branch samples share their noise,
//           branches are fused by add or cat before the head projection.
enum class AttentionMode { standard, kernel, sgpa, kep };
enum class KepFusion { add, cat };
enum class TaskKind { toy_vision, toy_text, tabular };

AttentionMode attention_mode_from(const std::string& s);
KepFusion kep_fusion_from(const std::string& s);
TaskKind task_kind_from(const std::string& s);
std::string to_string(AttentionMode m);
std::string to_string(KepFusion f);
std::string to_string(TaskKind t);

struct BackboneConfig {
    TaskKind task = TaskKind::toy_vision;
    AttentionMode mode = AttentionMode::standard;
    int depth = 4; // also the number of chain steps after repartitioning
    int d_model = 32;
    int n_heads = 4;
    int d_head = 8;
    int mlp_ratio = 4;
    int n_classes = 3;

    // toy-vision: grid x grid intensities cut into 2x2 patches
    int grid = 8;
    bool class_token = true;
    // toy-text
    int vocab = 0;
    int seq_len = 0;
    // tabular
    int input_dim = 0;
    int n_tokens_tabular = 16;

    // GP attention
    int s_inducing = 4;
    KepFusion fusion = KepFusion::add;
    double jitter = 1e-6;
    double ln_eps = 1e-5;

    int patch_dim() const { return 4; }
    int n_patches() const { return (grid / 2) * (grid / 2); }
    int n_tokens() const;
    bool stochastic() const {
        return mode == AttentionMode::sgpa || mode == AttentionMode::kep;
    }
    void validate() const;
};

struct HeadWeights {
    // standard
    Tensor wq, wk, wv;
    // kernel / sgpa share one projection for queries and keys
    Tensor wqk;
    // sgpa: covariance factor per output dim, each {N,N}
    std::vector<Tensor> s_factor;
    // kep
    Tensor we, be, wr, br; // feature branches {d,s}, {s}
    Tensor lambda_raw;     // softplus -> positive diagonal scale, {s}
    Tensor m_u;            // inducing output means, {s,s}, column per output dim
    std::vector<Tensor> u_factor; // s factors {s,s}, S_uu[i] = C_i C_i^T
    Tensor w_fuse;         // add fusion, {s, d_head}
    Tensor w_cat1;         // cat fusion, {N, 2N}
    Tensor w_cat2;         // cat fusion, {s, d_head}
};

struct BlockWeights {
    std::vector<HeadWeights> heads;
    Tensor wo; // {n_heads * d_head, d_model}
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor w1, b1, w2, b2; // MLP
};

struct EmbedWeights {
    // toy-vision
    Tensor w_patch, b_patch, cls;
    // toy-text
    Tensor tok_table;
    // shared
    Tensor pos;
    // tabular
    Tensor w_in, b_in;
};

struct Backbone {
    BackboneConfig cfg;
    EmbedWeights embed;
    std::vector<BlockWeights> blocks;
    Tensor w_head, b_head;

    std::vector<NamedParam> named_params() const;
    std::vector<Tensor> params() const;
    std::size_t n_params() const;
};

Backbone make_backbone(const BackboneConfig& cfg, Rng& rng);

// One multiplicative-noise source of an attention output after all head and
// fusion projections: the draw adds (token_factor @ eps) outer feat_weight,
// eps ~ N(0, I_k) with k = token_factor cols.
struct NoiseSource {
    Tensor token_factor; // {N, k}
    Tensor feat_weight;  // {d_model}
};

struct AttentionMoments {
    Tensor mean;                      // {N, d_model}
    std::vector<NoiseSource> sources; // empty for deterministic modes
};

// U is the already-normalized block input. The moments are exact: mean is the
// posterior mean, and the sources reproduce the posterior covariance of the
// projected attention output.
AttentionMoments attention_moments(const BlockWeights& blk, const Tensor& u,
                                   const BackboneConfig& cfg);

// mean + sum_k (B_k eps_k) outer w_k with eps drawn from rng in source order.
Tensor sample_from_moments(const AttentionMoments& am, Rng& rng);

// Plain attention surfaces, used for analysis against slow oracles.
// Softmax attention for one head: softmax(q k^T / sqrt(d_h)) v.
Tensor standard_attention_head(const Tensor& u, const Tensor& wq,
                               const Tensor& wk, const Tensor& wv);
// F = K v where K_ij = kernel(u_i, u_j); rows of u are token features.
// Gradients flow through v only; K is evaluated as data.
using KernelFn = std::function<double(const double*, const double*, std::size_t)>;
Tensor kernel_attention(const Tensor& u, const KernelFn& kernel,
                        const Tensor& v);
// Full posterior of one sgpa output dim for distinct query/key kernels:
// mean = K_qk kinv-free form, cov = K_qq + K_qk K_kk^-1 (S - K_kk) K_kk^-1 K_kq.
struct GpPosterior {
    std::vector<double> mean;       // N
    std::vector<double> cov;        // N x N dense
};
GpPosterior sgpa_posterior(const std::vector<double>& k_qq,
                           const std::vector<double>& k_qk,
                           const std::vector<double>& k_kk, std::size_t n,
                           const std::vector<double>& v_col,
                           const std::vector<double>& s_mat, double jitter);

struct BackboneTrace {
    std::vector<Tensor> states; // X_T down to X_0, depth+1 entries
    std::vector<Tensor> post_attn; // Z per block, depth entries
    Tensor logits; // {1, n_classes}
};

struct Sample; // data.hpp

Tensor embed_input(const Backbone& bb, const Sample& s);
BackboneTrace backbone_forward(const Backbone& bb, const Tensor& x_top,
                               bool sample_noise, Rng* rng);
Tensor backbone_logits(const Backbone& bb, const Sample& s);

struct FitConfig {
    int epochs = 30;
    int batch_size = 32;
    AdamConfig adam;
    LrSchedule sched;
    double kl_weight = 0.0; // KEP inducing-posterior shrinkage toward N(0, diag)
    int log_every = 10;
};

struct FitReport {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_acc;
    double wall_seconds = 0.0;
};

struct Dataset; // data.hpp

FitReport train_backbone(Backbone& bb, const Dataset& train, const FitConfig& fc,
                         Rng& rng, std::ostream* log);

// Mean KL(N(m_u[:,i], C_i C_i^T) || N(0, Lambda^2)) over heads and dims; the
// optional regularizer that keeps KEP inducing posteriors near their prior.
Tensor kep_prior_kl(const Backbone& bb);

} // namespace diffcal
