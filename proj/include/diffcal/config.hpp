#pragma once

#include <cstdint>
#include <string>

namespace diffcal {

// Flat key=value run configuration. '#' starts a comment, blank lines are
// skipped, unknown keys are errors. canonical_text() emits every field in
// sorted key order, so a snapshot reparses to an identical config and the
// config hash is stable.
struct RunConfig {
    std::string task = "toy-vision";
    std::uint64_t seed = 1;
    std::string out = "run";

    std::string data_kind = "blobs";
    int data_n = 600;
    int data_classes = 3;
    double data_spread = 0.055;
    double data_noise = 0.04;
    int data_grid = 8;
    int data_seq_len = 12;
    int data_vocab = 6;
    double test_frac = 0.25;
    std::string ood_kind = "noise";

    std::string attention = "standard";
    int depth = 4;
    int d_model = 32;
    int n_heads = 4;
    int d_head = 8;
    int s_inducing = 4;
    std::string fusion = "add";
    int backbone_epochs = 24;
    int backbone_batch = 32;
    double backbone_lr = 1e-3;
    double kl_weight = 0.0;

    int distill_epochs = 30;
    int distill_batch = 32;
    double distill_lr = 1e-3;
    // negative means "pick the per-path default at run time"
    double lambda_mean = -1.0;
    double lambda_chol = -1.0;
    double lambda_nll = -1.0;
    double kernel_dropout = 0.1;

    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 1e-5;
    double min_lr = 1e-5;
    int warmup_epochs = 5;
    int cycle_epochs = -1; // negative: epochs - warmup, clamped to >= 1

    int eval_bins = 15;
    int eval_draws = 10;

    void validate() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);
void apply_config_override(RunConfig& cfg, const std::string& key,
                           const std::string& value);
std::string canonical_text(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

// Effective loss weights: stochastic chains default to (0.5, 0.2, 0.3),
// deterministic ones to (0.8, 0, 0.2); explicit non-negative values win.
struct LossWeights {
    double mean, chol, nll;
};
LossWeights resolve_lambdas(const RunConfig& cfg);

} // namespace diffcal
