#include "diffcal/path.hpp"

#include <cmath>

namespace diffcal {

std::vector<double> GaussianTransition::cov_diag() const {
    const std::size_t n = mean.rows(), d = mean.cols();
    std::vector<double> var(n * d, 0.0);
    for (const auto& src : sources) {
        const std::size_t k = src.token_factor.cols();
        const auto& b = src.token_factor.value();
        const auto& w = src.feat_weight.value();
        for (std::size_t a = 0; a < n; ++a) {
            double row2 = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                const double x = b[a * k + c];
                row2 += x * x;
            }
            for (std::size_t i = 0; i < d; ++i)
                var[a * d + i] += w[i] * w[i] * row2;
        }
    }
    return var;
}

std::vector<double> GaussianTransition::cov_dense() const {
    const std::size_t n = mean.rows(), d = mean.cols(), dim = n * d;
    std::vector<double> cov(dim * dim, 0.0);
    for (const auto& src : sources) {
        const std::size_t k = src.token_factor.cols();
        const auto& bm = src.token_factor.value();
        const auto& w = src.feat_weight.value();
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                double bb = 0.0;
                for (std::size_t c = 0; c < k; ++c)
                    bb += bm[a * k + c] * bm[b * k + c];
                if (bb == 0.0) continue;
                for (std::size_t i = 0; i < d; ++i) {
                    const double wi = w[i] * bb;
                    if (wi == 0.0) continue;
                    for (std::size_t j = 0; j < d; ++j)
                        cov[(a * d + i) * dim + (b * d + j)] += wi * w[j];
                }
            }
    }
    return cov;
}

Tensor GaussianTransition::sample(Rng& rng) const {
    AttentionMoments am;
    am.mean = mean;
    am.sources = sources;
    return sample_from_moments(am, rng);
}

int ProbabilityPath::depth() const { return backbone->cfg.depth; }
bool ProbabilityPath::stochastic() const { return backbone->cfg.stochastic(); }
const BackboneConfig& ProbabilityPath::cfg() const { return backbone->cfg; }

ProbabilityPath repartition(const Backbone& bb) {
    if (bb.blocks.empty())
        throw ContractError("repartition: backbone has no blocks");
    if (static_cast<int>(bb.blocks.size()) != bb.cfg.depth)
        throw ContractError("repartition: depth does not match block count");
    ProbabilityPath p;
    p.backbone = &bb;
    return p;
}

Tensor path_embed(const ProbabilityPath& path, const Sample& s) {
    return embed_input(*path.backbone, s);
}

// Feed-forward half of a block: MLP(LN(x)) + x.
static Tensor ff_half(const BlockWeights& blk, const Tensor& x, double eps) {
    const Tensor h = layer_norm_rows(x, blk.ln2_g, blk.ln2_b, eps);
    return add(linear(gelu(linear(h, blk.w1, blk.b1)), blk.w2, blk.b2), x);
}

GaussianTransition transition_eval(const ProbabilityPath& path, int t,
                                   const Tensor& x_t) {
    const Backbone& bb = *path.backbone;
    const int T = path.depth();
    if (t < 1 || t > T)
        throw RangeError("transition_eval: t=" + std::to_string(t) +
                         " outside [1," + std::to_string(T) + "]");
    // Block i of the backbone plays timestep T - i. A transition borrows the
    // feed-forward half of the *previous* timestep's block and the attention
    // half of its own, which is what makes the zero-noise chain reproduce
    // the original network exactly.
    Tensor z = x_t;
    if (t != T) z = ff_half(bb.blocks[T - t - 1], x_t, bb.cfg.ln_eps);
    const BlockWeights& ablk = bb.blocks[T - t];
    const Tensor u = layer_norm_rows(z, ablk.ln1_g, ablk.ln1_b, bb.cfg.ln_eps);
    AttentionMoments am = attention_moments(ablk, u, bb.cfg);
    GaussianTransition tr;
    tr.t = t;
    tr.mean = add(am.mean, z);
    tr.sources = std::move(am.sources);
    return tr;
}

Tensor path_head_logits(const ProbabilityPath& path, const Tensor& x0) {
    const Backbone& bb = *path.backbone;
    const Tensor full = ff_half(bb.blocks.back(), x0, bb.cfg.ln_eps);
    Tensor pooled;
    if (bb.cfg.task == TaskKind::toy_vision && bb.cfg.class_token)
        pooled = slice_rows(full, 0, 1);
    else
        pooled = reshape(
            mul_scalar(col_sum(full), 1.0 / static_cast<double>(full.rows())),
            {1, full.cols()});
    return linear(pooled, bb.w_head, bb.b_head);
}

PathTrace simulate_path(const ProbabilityPath& path, const Tensor& x_top,
                        bool noise, Rng* rng) {
    if (noise && rng == nullptr)
        throw ContractError("simulate_path: noisy simulation needs an rng");
    PathTrace out;
    out.noise = noise;
    if (rng) out.seed = rng->seed();
    Tensor x = x_top;
    out.states.push_back(x);
    for (int t = path.depth(); t >= 1; --t) {
        GaussianTransition tr = transition_eval(path, t, x);
        x = (noise && tr.stochastic()) ? tr.sample(*rng) : tr.mean;
        out.states.push_back(x);
        out.transitions.push_back(std::move(tr));
    }
    out.logits = path_head_logits(path, x);
    return out;
}

Tensor path_logits_zero_noise(const ProbabilityPath& path, const Sample& s) {
    NoGradGuard ng;
    return simulate_path(path, path_embed(path, s), false, nullptr).logits;
}

void save_trace(const PathTrace& tr, const std::string& file,
                std::uint64_t seed) {
    std::vector<NamedParam> states;
    const int T = static_cast<int>(tr.states.size()) - 1;
    for (std::size_t i = 0; i < tr.states.size(); ++i)
        states.push_back({"state" + std::to_string(T - static_cast<int>(i)),
                          tr.states[i]});
    states.push_back({"logits", tr.logits});
    nlohmann::ordered_json meta;
    meta["kind"] = "path-trace";
    meta["depth"] = T;
    meta["noise"] = tr.noise;
    save_checkpoint(file, states, seed, "", meta);
}

PathTrace load_trace(const std::string& file) {
    const Checkpoint ck = load_checkpoint(file);
    if (!ck.header.contains("meta") || ck.header["meta"].value("kind", "") != "path-trace")
        throw ConfigError("not a path trace: " + file);
    PathTrace tr;
    const int T = ck.header["meta"].at("depth").get<int>();
    tr.noise = ck.header["meta"].at("noise").get<bool>();
    tr.seed = ck.seed();
    for (int t = T; t >= 0; --t) {
        const auto& e = ck.entries.at("state" + std::to_string(t));
        tr.states.push_back(constant(e.first, e.second));
    }
    const auto& lg = ck.entries.at("logits");
    tr.logits = constant(lg.first, lg.second);
    return tr;
}

namespace {
struct CorrAcc {
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    double n = 0;
    void add(double x, double y) {
        sx += x; sy += y; sxx += x * x; syy += y * y; sxy += x * y; n += 1;
    }
    double corr() const {
        const double num = n * sxy - sx * sy;
        const double den =
            std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
        if (den == 0.0) return 0.0;
        return num / den;
    }
};
} // namespace

LayerCorrelation correlation_diagnostic(const Backbone& bb,
                                        const ProbabilityPath& path,
                                        const std::vector<Sample>& samples,
                                        int n_draws, Rng& rng) {
    NoGradGuard ng;
    const int T = path.depth();
    std::vector<CorrAcc> det(T), stoch(T);
    const bool has_noise = path.stochastic();
    for (std::size_t si = 0; si < samples.size(); ++si) {
        const Tensor x_top = path_embed(path, samples[si]);
        const BackboneTrace ref = backbone_forward(bb, x_top, false, nullptr);
        const PathTrace zero = simulate_path(path, x_top, false, nullptr);
        // state after transition t corresponds to the backbone's
        // post-attention intermediate of block T - t
        for (int t = T; t >= 1; --t) {
            const Tensor& a = zero.states[static_cast<std::size_t>(T - t + 1)];
            const Tensor& b = ref.post_attn[static_cast<std::size_t>(T - t)];
            for (std::size_t i = 0; i < a.size(); ++i)
                det[static_cast<std::size_t>(T - t)].add(a[i], b[i]);
        }
        if (has_noise) {
            for (int dr = 0; dr < n_draws; ++dr) {
                Rng draw = rng.stream("corr-draw", si * 1000 + dr);
                const PathTrace noisy = simulate_path(path, x_top, true, &draw);
                for (int t = T; t >= 1; --t) {
                    const Tensor& a =
                        noisy.states[static_cast<std::size_t>(T - t + 1)];
                    const Tensor& b =
                        ref.post_attn[static_cast<std::size_t>(T - t)];
                    for (std::size_t i = 0; i < a.size(); ++i)
                        stoch[static_cast<std::size_t>(T - t)].add(a[i], b[i]);
                }
            }
        }
    }
    LayerCorrelation lc;
    for (int i = 0; i < T; ++i) lc.zero_noise.push_back(det[i].corr());
    if (has_noise)
        for (int i = 0; i < T; ++i) lc.sampled.push_back(stoch[i].corr());
    return lc;
}

} // namespace diffcal
