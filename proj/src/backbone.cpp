#include "diffcal/backbone.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "diffcal/data.hpp"
#include "diffcal/linalg.hpp"

namespace diffcal {

AttentionMode attention_mode_from(const std::string& s) {
    if (s == "standard") return AttentionMode::standard;
    if (s == "kernel") return AttentionMode::kernel;
    if (s == "sgpa") return AttentionMode::sgpa;
    if (s == "kep") return AttentionMode::kep;
    throw ConfigError("unknown attention mode: " + s);
}

KepFusion kep_fusion_from(const std::string& s) {
    if (s == "add") return KepFusion::add;
    if (s == "cat") return KepFusion::cat;
    throw ConfigError("unknown fusion: " + s);
}

TaskKind task_kind_from(const std::string& s) {
    if (s == "toy-vision") return TaskKind::toy_vision;
    if (s == "toy-text") return TaskKind::toy_text;
    if (s == "tabular") return TaskKind::tabular;
    throw ConfigError("unknown task: " + s);
}

std::string to_string(AttentionMode m) {
    switch (m) {
        case AttentionMode::standard: return "standard";
        case AttentionMode::kernel: return "kernel";
        case AttentionMode::sgpa: return "sgpa";
        case AttentionMode::kep: return "kep";
    }
    return "?";
}

std::string to_string(KepFusion f) {
    return f == KepFusion::add ? "add" : "cat";
}

std::string to_string(TaskKind t) {
    switch (t) {
        case TaskKind::toy_vision: return "toy-vision";
        case TaskKind::toy_text: return "toy-text";
        case TaskKind::tabular: return "tabular";
    }
    return "?";
}

int BackboneConfig::n_tokens() const {
    switch (task) {
        case TaskKind::toy_vision:
            return n_patches() + (class_token ? 1 : 0);
        case TaskKind::toy_text:
            return seq_len;
        case TaskKind::tabular:
            return n_tokens_tabular;
    }
    return 0;
}

void BackboneConfig::validate() const {
    if (depth < 1) throw ConfigError("backbone depth must be >= 1");
    if (d_model < 1 || n_heads < 1 || d_head < 1)
        throw ConfigError("backbone dims must be positive");
    if (n_classes < 2) throw ConfigError("need at least two classes");
    if (task == TaskKind::toy_vision && grid % 2 != 0)
        throw ConfigError("toy-vision grid must be even for 2x2 patches");
    if (task == TaskKind::toy_text && (vocab < 2 || seq_len < 1))
        throw ConfigError("toy-text needs vocab >= 2 and seq_len >= 1");
    if (task == TaskKind::tabular && input_dim < 1)
        throw ConfigError("tabular needs input_dim >= 1");
    if (mode == AttentionMode::kep && s_inducing < 1)
        throw ConfigError("kep needs s_inducing >= 1");
    if (n_tokens() < 1) throw ConfigError("empty token sequence");
}

// ---- construction ----

static Tensor linear_init(Shape shape, Rng& rng) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(shape[0]));
    return randn_param(std::move(shape), rng, scale);
}

static Tensor scaled_eye_param(std::size_t n, double diag, Rng& rng,
                               double off_scale) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            v[i * n + j] = (i == j) ? diag : off_scale * rng.normal();
    return param({n, n}, std::move(v));
}

Backbone make_backbone(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    Backbone bb;
    bb.cfg = cfg;
    const std::size_t d = cfg.d_model, dh = cfg.d_head, nh = cfg.n_heads;
    const std::size_t N = cfg.n_tokens(), s = cfg.s_inducing;

    switch (cfg.task) {
        case TaskKind::toy_vision:
            bb.embed.w_patch = linear_init({static_cast<std::size_t>(cfg.patch_dim()), d}, rng);
            bb.embed.b_patch = zeros_param({d});
            if (cfg.class_token) bb.embed.cls = randn_param({1, d}, rng, 0.02);
            bb.embed.pos = randn_param({N, d}, rng, 0.02);
            break;
        case TaskKind::toy_text:
            bb.embed.tok_table =
                randn_param({static_cast<std::size_t>(cfg.vocab), d}, rng, 0.1);
            bb.embed.pos = randn_param({N, d}, rng, 0.02);
            break;
        case TaskKind::tabular:
            bb.embed.w_in =
                linear_init({static_cast<std::size_t>(cfg.input_dim), N * d}, rng);
            bb.embed.b_in = randn_param({N * d}, rng, 0.02);
            break;
    }

    for (int b = 0; b < cfg.depth; ++b) {
        BlockWeights blk;
        for (std::size_t h = 0; h < nh; ++h) {
            HeadWeights hw;
            switch (cfg.mode) {
                case AttentionMode::standard:
                    hw.wq = linear_init({d, dh}, rng);
                    hw.wk = linear_init({d, dh}, rng);
                    hw.wv = linear_init({d, dh}, rng);
                    break;
                case AttentionMode::kernel:
                    hw.wqk = linear_init({d, dh}, rng);
                    hw.wv = linear_init({d, dh}, rng);
                    break;
                case AttentionMode::sgpa:
                    hw.wqk = linear_init({d, dh}, rng);
                    hw.wv = linear_init({d, dh}, rng);
                    for (std::size_t i = 0; i < dh; ++i)
                        hw.s_factor.push_back(
                            scaled_eye_param(N, 0.05, rng, 0.0));
                    break;
                case AttentionMode::kep:
                    hw.we = linear_init({d, s}, rng);
                    hw.be = zeros_param({s});
                    hw.wr = linear_init({d, s}, rng);
                    hw.br = zeros_param({s});
                    // softplus(0.54) ~ 1.0: start the scale near identity
                    hw.lambda_raw = param({s}, std::vector<double>(s, 0.5413));
                    hw.m_u = randn_param({s, s}, rng, 0.3);
                    for (std::size_t i = 0; i < s; ++i)
                        hw.u_factor.push_back(
                            scaled_eye_param(s, 0.1, rng, 0.0));
                    if (cfg.fusion == KepFusion::add) {
                        hw.w_fuse = linear_init({s, dh}, rng);
                    } else {
                        hw.w_cat1 = linear_init({N, 2 * N}, rng);
                        hw.w_cat2 = linear_init({s, dh}, rng);
                    }
                    break;
            }
            blk.heads.push_back(std::move(hw));
        }
        blk.wo = linear_init({nh * dh, d}, rng);
        blk.ln1_g = param({d}, std::vector<double>(d, 1.0));
        blk.ln1_b = zeros_param({d});
        blk.ln2_g = param({d}, std::vector<double>(d, 1.0));
        blk.ln2_b = zeros_param({d});
        const std::size_t hid = static_cast<std::size_t>(cfg.mlp_ratio) * d;
        blk.w1 = linear_init({d, hid}, rng);
        blk.b1 = zeros_param({hid});
        blk.w2 = linear_init({hid, d}, rng);
        blk.b2 = zeros_param({d});
        bb.blocks.push_back(std::move(blk));
    }

    bb.w_head = linear_init({d, static_cast<std::size_t>(cfg.n_classes)}, rng);
    bb.b_head = zeros_param({static_cast<std::size_t>(cfg.n_classes)});
    return bb;
}

std::vector<NamedParam> Backbone::named_params() const {
    std::vector<NamedParam> out;
    auto put = [&out](const std::string& name, const Tensor& t) {
        if (t.defined()) out.push_back({name, t});
    };
    put("embed.w_patch", embed.w_patch);
    put("embed.b_patch", embed.b_patch);
    put("embed.cls", embed.cls);
    put("embed.tok_table", embed.tok_table);
    put("embed.pos", embed.pos);
    put("embed.w_in", embed.w_in);
    put("embed.b_in", embed.b_in);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::string pb = "block" + std::to_string(b) + ".";
        const auto& blk = blocks[b];
        for (std::size_t h = 0; h < blk.heads.size(); ++h) {
            const std::string ph = pb + "h" + std::to_string(h) + ".";
            const auto& hw = blk.heads[h];
            put(ph + "wq", hw.wq);
            put(ph + "wk", hw.wk);
            put(ph + "wv", hw.wv);
            put(ph + "wqk", hw.wqk);
            for (std::size_t i = 0; i < hw.s_factor.size(); ++i)
                put(ph + "sfac" + std::to_string(i), hw.s_factor[i]);
            put(ph + "we", hw.we);
            put(ph + "be", hw.be);
            put(ph + "wr", hw.wr);
            put(ph + "br", hw.br);
            put(ph + "lambda_raw", hw.lambda_raw);
            put(ph + "m_u", hw.m_u);
            for (std::size_t i = 0; i < hw.u_factor.size(); ++i)
                put(ph + "ufac" + std::to_string(i), hw.u_factor[i]);
            put(ph + "w_fuse", hw.w_fuse);
            put(ph + "w_cat1", hw.w_cat1);
            put(ph + "w_cat2", hw.w_cat2);
        }
        put(pb + "wo", blk.wo);
        put(pb + "ln1_g", blk.ln1_g);
        put(pb + "ln1_b", blk.ln1_b);
        put(pb + "ln2_g", blk.ln2_g);
        put(pb + "ln2_b", blk.ln2_b);
        put(pb + "w1", blk.w1);
        put(pb + "b1", blk.b1);
        put(pb + "w2", blk.w2);
        put(pb + "b2", blk.b2);
    }
    put("head.w", w_head);
    put("head.b", b_head);
    return out;
}

std::vector<Tensor> Backbone::params() const {
    std::vector<Tensor> out;
    for (auto& np : named_params()) out.push_back(np.tensor);
    return out;
}

std::size_t Backbone::n_params() const { return param_count(params()); }

// ---- attention ----

Tensor standard_attention_head(const Tensor& u, const Tensor& wq,
                               const Tensor& wk, const Tensor& wv) {
    const Tensor q = matmul(u, wq);
    const Tensor k = matmul(u, wk);
    const Tensor v = matmul(u, wv);
    const double invs = 1.0 / std::sqrt(static_cast<double>(wq.cols()));
    Tensor scores = mul_scalar(matmul(q, transpose(k)), invs);
    return matmul(softmax_rows(scores), v);
}

Tensor kernel_attention(const Tensor& u, const KernelFn& kernel,
                        const Tensor& v) {
    const std::size_t n = u.rows(), d = u.cols();
    if (v.rows() != n) throw ShapeError("kernel_attention: v rows != tokens");
    std::vector<double> kmat(n * n);
    const double* base = u.value().data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double kv = kernel(base + i * d, base + j * d, d);
            if (!std::isfinite(kv))
                throw NumericError("kernel_attention: non-finite kernel value");
            kmat[i * n + j] = kv;
        }
    return matmul(constant({n, n}, std::move(kmat)), v);
}

GpPosterior sgpa_posterior(const std::vector<double>& k_qq,
                           const std::vector<double>& k_qk,
                           const std::vector<double>& k_kk, std::size_t n,
                           const std::vector<double>& v_col,
                           const std::vector<double>& s_mat, double jitter) {
    if (k_qq.size() != n * n || k_qk.size() != n * n || k_kk.size() != n * n ||
        s_mat.size() != n * n || v_col.size() != n)
        throw ShapeError("sgpa_posterior: inconsistent sizes");
    GpPosterior out;
    out.mean = linalg::matvec(k_qk, n, n, v_col);

    // cov = K_qq + K_qk (Kkk^-1 S Kkk^-1 - Kkk^-1) K_kq, with jitter on K_kk
    std::vector<double> kkk = k_kk;
    for (std::size_t i = 0; i < n; ++i) kkk[i * n + i] += jitter;
    const auto L = linalg::cholesky(kkk, n);

    // A = Kkk^-1 K_kq, column by column
    std::vector<double> a(n * n);
    for (std::size_t c = 0; c < n; ++c) {
        std::vector<double> col(n);
        for (std::size_t r = 0; r < n; ++r) col[r] = k_qk[c * n + r]; // K_kq col
        col = linalg::chol_solve(L, n, col);
        for (std::size_t r = 0; r < n; ++r) a[r * n + c] = col[r];
    }
    // cov = K_qq + A^T S A - K_qk A
    const auto sa = linalg::matmul_nn(s_mat, n, n, a, n);
    const auto at = linalg::transpose(a, n, n);
    const auto atsa = linalg::matmul_nn(at, n, n, sa, n);
    const auto ka = linalg::matmul_nn(k_qk, n, n, a, n);
    out.cov.resize(n * n);
    for (std::size_t i = 0; i < n * n; ++i)
        out.cov[i] = k_qq[i] + atsa[i] - ka[i];
    return out;
}

// Shared q/k projection for the GP modes; K is differentiable through wqk.
static Tensor projected_kernel(const Tensor& u, const Tensor& wqk) {
    const Tensor p = matmul(u, wqk);
    const double invs = 1.0 / std::sqrt(static_cast<double>(wqk.cols()));
    Tensor k = exp_t(mul_scalar(matmul(p, transpose(p)), invs));
    check_finite(k, "attention kernel");
    return k;
}

AttentionMoments attention_moments(const BlockWeights& blk, const Tensor& u,
                                   const BackboneConfig& cfg) {
    const std::size_t dh = cfg.d_head;
    const std::size_t d = cfg.d_model;
    AttentionMoments am;
    Tensor fcat;
    for (std::size_t h = 0; h < blk.heads.size(); ++h) {
        const auto& hw = blk.heads[h];
        Tensor f;
        switch (cfg.mode) {
            case AttentionMode::standard:
                f = standard_attention_head(u, hw.wq, hw.wk, hw.wv);
                break;
            case AttentionMode::kernel: {
                const Tensor k = projected_kernel(u, hw.wqk);
                f = matmul(k, matmul(u, hw.wv));
                break;
            }
            case AttentionMode::sgpa: {
                const Tensor k = projected_kernel(u, hw.wqk);
                f = matmul(k, matmul(u, hw.wv));
                // With one shared projection K_qq = K_qk = K_kk, so the
                // posterior covariance collapses to S itself; the stored
                // factor is already the sampler's matrix.
                for (std::size_t i = 0; i < dh; ++i) {
                    NoiseSource src;
                    src.token_factor = hw.s_factor[i];
                    src.feat_weight = reshape(
                        slice_rows(blk.wo, h * dh + i, h * dh + i + 1), {d});
                    am.sources.push_back(std::move(src));
                }
                break;
            }
            case AttentionMode::kep: {
                const std::size_t s = cfg.s_inducing;
                const Tensor lam_inv =
                    divide(full({s}, 1.0), softplus(hw.lambda_raw));
                const Tensor me = mul_rowvec(
                    gelu(linear(u, hw.we, hw.be)), lam_inv);
                const Tensor mr = mul_rowvec(
                    gelu(linear(u, hw.wr, hw.br)), lam_inv);
                const Tensor mean_e = matmul(me, hw.m_u); // {N,s}
                const Tensor mean_r = matmul(mr, hw.m_u);
                const Tensor wo_h = slice_rows(blk.wo, h * dh, (h + 1) * dh);
                if (cfg.fusion == KepFusion::add) {
                    f = matmul(add(mean_e, mean_r), hw.w_fuse);
                    const Tensor fw = matmul(hw.w_fuse, wo_h); // {s, d}
                    for (std::size_t i = 0; i < s; ++i) {
                        // both branches ride the same eps_i, so their token
                        // factors add before the draw
                        NoiseSource src;
                        src.token_factor =
                            add(matmul(me, hw.u_factor[i]),
                                matmul(mr, hw.u_factor[i]));
                        src.feat_weight =
                            reshape(slice_rows(fw, i, i + 1), {d});
                        am.sources.push_back(std::move(src));
                    }
                } else {
                    const Tensor stacked = concat_rows(mean_e, mean_r);
                    f = matmul(matmul(hw.w_cat1, stacked), hw.w_cat2);
                    const Tensor fw = matmul(hw.w_cat2, wo_h);
                    for (std::size_t i = 0; i < s; ++i) {
                        NoiseSource src;
                        src.token_factor = matmul(
                            hw.w_cat1,
                            concat_rows(matmul(me, hw.u_factor[i]),
                                        matmul(mr, hw.u_factor[i])));
                        src.feat_weight =
                            reshape(slice_rows(fw, i, i + 1), {d});
                        am.sources.push_back(std::move(src));
                    }
                }
                break;
            }
        }
        fcat = (h == 0) ? f : concat_cols(fcat, f);
    }
    am.mean = matmul(fcat, blk.wo);
    return am;
}

Tensor sample_from_moments(const AttentionMoments& am, Rng& rng) {
    Tensor x = am.mean;
    const std::size_t d = am.mean.cols();
    for (const auto& src : am.sources) {
        const std::size_t k = src.token_factor.cols();
        std::vector<double> eps(k);
        for (auto& e : eps) e = rng.normal();
        const Tensor col = matmul(src.token_factor, constant({k, 1}, eps));
        x = add(x, matmul(col, reshape(src.feat_weight, {1, d})));
    }
    return x;
}

// ---- forward ----

Tensor embed_input(const Backbone& bb, const Sample& s) {
    const auto& cfg = bb.cfg;
    const std::size_t d = cfg.d_model;
    switch (cfg.task) {
        case TaskKind::toy_vision: {
            const std::size_t g = cfg.grid;
            if (s.features.size() != g * g)
                throw ShapeError("toy-vision sample needs " +
                                 std::to_string(g * g) + " intensities");
            const std::size_t side = g / 2;
            std::vector<double> patches(side * side * 4);
            for (std::size_t pr = 0; pr < side; ++pr)
                for (std::size_t pc = 0; pc < side; ++pc) {
                    const std::size_t p = pr * side + pc;
                    patches[p * 4 + 0] = s.features[(2 * pr) * g + 2 * pc];
                    patches[p * 4 + 1] = s.features[(2 * pr) * g + 2 * pc + 1];
                    patches[p * 4 + 2] = s.features[(2 * pr + 1) * g + 2 * pc];
                    patches[p * 4 + 3] = s.features[(2 * pr + 1) * g + 2 * pc + 1];
                }
            Tensor x = linear(constant({side * side, 4}, std::move(patches)),
                              bb.embed.w_patch, bb.embed.b_patch);
            if (cfg.class_token) x = concat_rows(bb.embed.cls, x);
            return add(x, bb.embed.pos);
        }
        case TaskKind::toy_text: {
            if (static_cast<int>(s.tokens.size()) != cfg.seq_len)
                throw ShapeError("toy-text sample needs seq_len tokens");
            return add(embed_rows(bb.embed.tok_table, s.tokens), bb.embed.pos);
        }
        case TaskKind::tabular: {
            if (static_cast<int>(s.features.size()) != cfg.input_dim)
                throw ShapeError("tabular sample has wrong feature count");
            const Tensor row = constant({1, s.features.size()}, s.features);
            const Tensor flat = linear(row, bb.embed.w_in, bb.embed.b_in);
            return reshape(flat, {static_cast<std::size_t>(cfg.n_tokens()), d});
        }
    }
    throw ConfigError("unreachable task kind");
}

static Tensor pool_state(const Backbone& bb, const Tensor& x0) {
    if (bb.cfg.task == TaskKind::toy_vision && bb.cfg.class_token)
        return slice_rows(x0, 0, 1);
    const double inv = 1.0 / static_cast<double>(x0.rows());
    return reshape(mul_scalar(col_sum(x0), inv), {1, x0.cols()});
}

BackboneTrace backbone_forward(const Backbone& bb, const Tensor& x_top,
                               bool sample_noise, Rng* rng) {
    if (sample_noise && rng == nullptr)
        throw ContractError("backbone_forward: sampling needs an rng");
    BackboneTrace tr;
    Tensor x = x_top;
    tr.states.push_back(x);
    for (const auto& blk : bb.blocks) {
        const Tensor u =
            layer_norm_rows(x, blk.ln1_g, blk.ln1_b, bb.cfg.ln_eps);
        const AttentionMoments am = attention_moments(blk, u, bb.cfg);
        const Tensor attn =
            sample_noise ? sample_from_moments(am, *rng) : am.mean;
        const Tensor z = add(attn, x);
        tr.post_attn.push_back(z);
        const Tensor hnorm =
            layer_norm_rows(z, blk.ln2_g, blk.ln2_b, bb.cfg.ln_eps);
        const Tensor mlp =
            linear(gelu(linear(hnorm, blk.w1, blk.b1)), blk.w2, blk.b2);
        x = add(mlp, z);
        tr.states.push_back(x);
    }
    tr.logits = linear(pool_state(bb, x), bb.w_head, bb.b_head);
    return tr;
}

Tensor backbone_logits(const Backbone& bb, const Sample& s) {
    NoGradGuard ng;
    return backbone_forward(bb, embed_input(bb, s), false, nullptr).logits;
}

// ---- training ----

Tensor kep_prior_kl(const Backbone& bb) {
    if (bb.cfg.mode != AttentionMode::kep)
        throw ContractError("kep_prior_kl on a non-kep backbone");
    const std::size_t s = bb.cfg.s_inducing;
    std::vector<int> diag_ids(s);
    for (std::size_t i = 0; i < s; ++i) diag_ids[i] = static_cast<int>(i);
    Tensor total = constant(0.0);
    std::size_t terms = 0;
    for (const auto& blk : bb.blocks)
        for (const auto& hw : blk.heads) {
            const Tensor lam = softplus(hw.lambda_raw);
            const Tensor lam_inv = divide(full({s}, 1.0), lam);
            const Tensor log_det_prior =
                mul_scalar(reduce_sum(log_t(lam)), 2.0);
            for (std::size_t i = 0; i < s; ++i) {
                const Tensor c = hw.u_factor[i];
                const Tensor m_col = reshape(
                    slice_cols(hw.m_u, i, i + 1), {s});
                // KL(N(m, CC^T) || N(0, diag(lam^2))) =
                //   [tr(L^-2 CC^T) + m^T L^-2 m - s - log|CC^T| + log|L^2|]/2
                const Tensor tr_term =
                    sum_squares(mul_rowvec(c, lam_inv));
                const Tensor maha = sum_squares(mul(m_col, lam_inv));
                const Tensor cd = pick_cols(c, diag_ids);
                const Tensor log_det_c = reduce_sum(log_t(mul(cd, cd)));
                Tensor kl = add(tr_term, maha);
                kl = add(kl, neg(log_det_c));
                kl = add(kl, log_det_prior);
                kl = add_scalar(kl, -static_cast<double>(s));
                total = add(total, mul_scalar(kl, 0.5));
                ++terms;
            }
        }
    return mul_scalar(total, 1.0 / static_cast<double>(terms));
}

FitReport train_backbone(Backbone& bb, const Dataset& train, const FitConfig& fc,
                         Rng& rng, std::ostream* log) {
    if (train.size() == 0) throw ContractError("train_backbone: empty dataset");
    const auto t0 = std::chrono::steady_clock::now();
    FitReport rep;
    Adam opt(bb.params(), fc.adam);
    const bool stochastic = bb.cfg.stochastic();

    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);

    for (int epoch = 0; epoch < fc.epochs; ++epoch) {
        Rng shuffle_rng = rng.stream("backbone-shuffle", epoch);
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1],
                      idx[shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
        Rng noise_rng = rng.stream("backbone-noise", epoch);
        const double lr = fc.sched.lr_at(epoch);

        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0, step = 0;
        for (std::size_t start = 0; start < idx.size();
             start += fc.batch_size, ++step) {
            const std::size_t end =
                std::min(idx.size(), start + fc.batch_size);
            Tensor batch_loss = constant(0.0);
            for (std::size_t k = start; k < end; ++k) {
                const Sample& smp = train.samples[idx[k]];
                const BackboneTrace tr = backbone_forward(
                    bb, embed_input(bb, smp), stochastic, &noise_rng);
                const Tensor ce =
                    cross_entropy_logits(tr.logits, {smp.label});
                batch_loss = add(batch_loss, ce);
                int argmax = 0;
                for (int c = 1; c < bb.cfg.n_classes; ++c)
                    if (tr.logits[c] > tr.logits[argmax]) argmax = c;
                if (argmax == smp.label) ++correct;
                ++seen;
            }
            batch_loss =
                mul_scalar(batch_loss, 1.0 / static_cast<double>(end - start));
            if (fc.kl_weight > 0.0 && bb.cfg.mode == AttentionMode::kep)
                batch_loss =
                    add(batch_loss, mul_scalar(kep_prior_kl(bb), fc.kl_weight));
            const double lv = batch_loss.item();
            if (!std::isfinite(lv))
                throw TrainingError("backbone loss non-finite at epoch " +
                                    std::to_string(epoch) + " step " +
                                    std::to_string(step));
            loss_sum += lv * static_cast<double>(end - start);
            opt.zero_grad();
            backward(batch_loss);
            opt.step(lr);
        }
        rep.epoch_loss.push_back(loss_sum / static_cast<double>(seen));
        rep.epoch_acc.push_back(static_cast<double>(correct) /
                                static_cast<double>(seen));
        if (log && (epoch % fc.log_every == 0 || epoch == fc.epochs - 1))
            (*log) << "backbone epoch " << epoch << " lr " << lr << " loss "
                   << rep.epoch_loss.back() << " acc " << rep.epoch_acc.back()
                   << "\n";
    }
    const auto t1 = std::chrono::steady_clock::now();
    rep.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    return rep;
}

} // namespace diffcal
