#include "diffcal/kernel.hpp"

#include <cmath>

namespace diffcal {

void KernelConfig::validate() const {
    if (d_model < 2 || d_model % 2 != 0)
        throw ConfigError("kernel d_model must be even and >= 2");
    if (n_heads < 1 || d_head < 1 || n_heads * d_head != d_model)
        throw ConfigError("kernel heads must tile d_model");
    if (T < 1) throw ConfigError("kernel T must be >= 1");
    if (scale_floor <= 0.0) throw ConfigError("scale floor must be positive");
    if (dropout < 0.0 || dropout >= 1.0)
        throw ConfigError("dropout must be in [0,1)");
}

TransitionKernel make_kernel(const KernelConfig& cfg, Rng& rng) {
    cfg.validate();
    TransitionKernel k;
    k.cfg = cfg;
    const std::size_t d = cfg.d_model;
    auto init = [&rng](Shape s) {
        const double sc = 1.0 / std::sqrt(static_cast<double>(s[0]));
        return randn_param(std::move(s), rng, sc);
    };
    k.tm_w1 = init({d, d});
    k.tm_b1 = zeros_param({d});
    k.tm_w2 = init({d, d});
    k.tm_b2 = zeros_param({d});
    k.mod_w = zeros_param({d, 6 * d});
    k.mod_b = zeros_param({6 * d});
    k.wq = init({d, d});
    k.wk = init({d, d});
    k.wv = init({d, d});
    k.wo = init({d, d});
    const std::size_t hid = static_cast<std::size_t>(cfg.mlp_ratio) * d;
    k.mlp_w1 = init({d, hid});
    k.mlp_b1 = zeros_param({hid});
    k.mlp_w2 = init({hid, d});
    k.mlp_b2 = zeros_param({d});
    k.fin_w = zeros_param({d, 2 * d});
    k.fin_b = zeros_param({2 * d});
    k.mean_w = init({d, d});
    k.mean_b = zeros_param({d});
    k.scale_w = randn_param({d, d}, rng, 0.01);
    // softplus(-2) ~ 0.127: start with modest per-coordinate spread
    k.scale_b = param({d}, std::vector<double>(d, -2.0));
    return k;
}

std::vector<NamedParam> TransitionKernel::named_params() const {
    return {
        {"tm_w1", tm_w1},   {"tm_b1", tm_b1},   {"tm_w2", tm_w2},
        {"tm_b2", tm_b2},   {"mod_w", mod_w},   {"mod_b", mod_b},
        {"wq", wq},         {"wk", wk},         {"wv", wv},
        {"wo", wo},         {"mlp_w1", mlp_w1}, {"mlp_b1", mlp_b1},
        {"mlp_w2", mlp_w2}, {"mlp_b2", mlp_b2}, {"fin_w", fin_w},
        {"fin_b", fin_b},   {"mean_w", mean_w}, {"mean_b", mean_b},
        {"scale_w", scale_w}, {"scale_b", scale_b},
    };
}

std::vector<Tensor> TransitionKernel::params() const {
    std::vector<Tensor> out;
    for (auto& np : named_params()) out.push_back(np.tensor);
    return out;
}

std::size_t TransitionKernel::n_params() const {
    return param_count(params());
}

Tensor timestep_embedding(int t, int d) {
    if (d < 2 || d % 2 != 0)
        throw ConfigError("timestep embedding dim must be even");
    std::vector<double> e(static_cast<std::size_t>(d));
    const int half = d / 2;
    for (int i = 0; i < half; ++i) {
        const double w =
            std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                  static_cast<double>(d));
        e[2 * i] = std::sin(t * w);
        e[2 * i + 1] = std::cos(t * w);
    }
    return constant({1, static_cast<std::size_t>(d)}, std::move(e));
}

static Tensor modulate(const Tensor& x, const Tensor& shift,
                       const Tensor& scale) {
    return add_rowvec(mul_rowvec(x, add_scalar(scale, 1.0)), shift);
}

static Tensor plain_ln(const Tensor& x, double eps) {
    const std::size_t d = x.cols();
    return layer_norm_rows(x, full({d}, 1.0), zeros({d}), eps);
}

static Tensor fused_mhsa(const TransitionKernel& k, const Tensor& x,
                         Rng* drop_rng) {
    const std::size_t dh = k.cfg.d_head;
    const Tensor q = matmul(x, k.wq);
    const Tensor kk = matmul(x, k.wk);
    const Tensor v = matmul(x, k.wv);
    const double invs = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor cat;
    for (int h = 0; h < k.cfg.n_heads; ++h) {
        const std::size_t c0 = h * dh, c1 = (h + 1) * dh;
        const Tensor qh = slice_cols(q, c0, c1);
        const Tensor kh = slice_cols(kk, c0, c1);
        const Tensor vh = slice_cols(v, c0, c1);
        const Tensor a =
            softmax_rows(mul_scalar(matmul(qh, transpose(kh)), invs));
        const Tensor fh = matmul(a, vh);
        cat = (h == 0) ? fh : concat_cols(cat, fh);
    }
    Tensor out = matmul(cat, k.wo);
    if (drop_rng && k.cfg.dropout > 0.0)
        out = dropout(out, k.cfg.dropout, *drop_rng);
    return out;
}

KernelOut kernel_forward(const TransitionKernel& k, const Tensor& x_t, int t,
                         Rng* drop_rng) {
    if (t < 1 || t > k.cfg.T)
        throw RangeError("kernel_forward: t=" + std::to_string(t) +
                         " outside [1," + std::to_string(k.cfg.T) + "]");
    if (x_t.shape().size() != 2 ||
        x_t.cols() != static_cast<std::size_t>(k.cfg.d_model))
        throw ShapeError("kernel_forward: state width != d_model");
    const std::size_t d = k.cfg.d_model;
    const double eps = k.cfg.ln_eps;

    const Tensor c = linear(
        gelu(linear(timestep_embedding(t, k.cfg.d_model), k.tm_w1, k.tm_b1)),
        k.tm_w2, k.tm_b2); // {1, d}
    const Tensor mod = linear(gelu(c), k.mod_w, k.mod_b); // {1, 6d}
    auto piece = [&](std::size_t i) {
        return reshape(slice_cols(mod, i * d, (i + 1) * d), {d});
    };
    const Tensor shift_a = piece(0), scale_a = piece(1), gate_a = piece(2);
    const Tensor shift_m = piece(3), scale_m = piece(4), gate_m = piece(5);

    Tensor x = x_t;
    const Tensor attn =
        fused_mhsa(k, modulate(plain_ln(x, eps), shift_a, scale_a), drop_rng);
    x = add(x, mul_rowvec(attn, gate_a));
    Tensor h = modulate(plain_ln(x, eps), shift_m, scale_m);
    h = gelu(linear(h, k.mlp_w1, k.mlp_b1));
    if (drop_rng && k.cfg.dropout > 0.0)
        h = dropout(h, k.cfg.dropout, *drop_rng);
    h = linear(h, k.mlp_w2, k.mlp_b2);
    x = add(x, mul_rowvec(h, gate_m));

    const Tensor fin = linear(gelu(c), k.fin_w, k.fin_b); // {1, 2d}
    const Tensor shift_f = reshape(slice_cols(fin, 0, d), {d});
    const Tensor scale_f = reshape(slice_cols(fin, d, 2 * d), {d});
    const Tensor xm = modulate(plain_ln(x, eps), shift_f, scale_f);

    KernelOut out;
    out.mean = linear(xm, k.mean_w, k.mean_b);
    out.scale = add_scalar(softplus(linear(xm, k.scale_w, k.scale_b)),
                           k.cfg.scale_floor);
    return out;
}

Tensor kernel_sample_step(const TransitionKernel& k, const Tensor& x_t, int t,
                          Rng& rng) {
    const KernelOut out = kernel_forward(k, x_t, t, nullptr);
    std::vector<double> eps(out.mean.size());
    for (auto& e : eps) e = rng.normal();
    return add(out.mean, mul(out.scale, constant(out.mean.shape(), eps)));
}

KernelChain kernel_generate(const TransitionKernel& k, const Tensor& x_top,
                            bool with_noise, Rng* noise_rng, Rng* drop_rng) {
    if (with_noise && noise_rng == nullptr)
        throw ContractError("kernel_generate: sampling needs an rng");
    KernelChain ch;
    Tensor x = x_top;
    ch.states.push_back(x);
    for (int t = k.cfg.T; t >= 1; --t) {
        KernelOut out = kernel_forward(k, x, t, drop_rng);
        if (with_noise) {
            std::vector<double> eps(out.mean.size());
            for (auto& e : eps) e = noise_rng->normal();
            x = add(out.mean,
                    mul(out.scale, constant(out.mean.shape(), eps)));
        } else {
            x = out.mean;
        }
        ch.states.push_back(x);
        ch.outs.push_back(std::move(out));
    }
    return ch;
}

} // namespace diffcal
