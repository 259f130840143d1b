#include "diffcal/distill.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "diffcal/linalg.hpp"

namespace diffcal {

static const double kLog2Pi = 1.8378770664093454836;

double kl_gaussian(const std::vector<double>& p_mean,
                   const std::vector<double>& p_factor,
                   const std::vector<double>& q_mean,
                   const std::vector<double>& q_scale) {
    const std::size_t k = p_mean.size();
    if (q_mean.size() != k || q_scale.size() != k || p_factor.size() != k * k)
        throw ShapeError("kl_gaussian: size mismatch");
    double tr = 0.0, maha = 0.0, logdet_q = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        if (q_scale[i] <= 0.0)
            throw NumericError("kl_gaussian: non-positive q scale");
        const double s2 = q_scale[i] * q_scale[i];
        double sig_ii = 0.0;
        for (std::size_t j = 0; j < k; ++j)
            sig_ii += p_factor[i * k + j] * p_factor[i * k + j];
        tr += sig_ii / s2;
        const double d = p_mean[i] - q_mean[i];
        maha += d * d / s2;
        logdet_q += std::log(s2);
    }
    double sign = 0.0;
    const double logdet_f = linalg::lu_logabsdet(p_factor, k, sign);
    const double logdet_p = 2.0 * logdet_f; // |F F^T| = det(F)^2
    return 0.5 * (tr + maha - static_cast<double>(k) + logdet_q - logdet_p);
}

double kl_gaussian_diag(const std::vector<double>& p_mean,
                        const std::vector<double>& p_var,
                        const std::vector<double>& q_mean,
                        const std::vector<double>& q_scale) {
    const std::size_t k = p_mean.size();
    if (p_var.size() != k || q_mean.size() != k || q_scale.size() != k)
        throw ShapeError("kl_gaussian_diag: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        if (q_scale[i] <= 0.0)
            throw NumericError("kl_gaussian_diag: non-positive q scale");
        const double v = std::max(p_var[i], 1e-30);
        const double s2 = q_scale[i] * q_scale[i];
        const double d = p_mean[i] - q_mean[i];
        acc += v / s2 + d * d / s2 - 1.0 + std::log(s2 / v);
    }
    return 0.5 * acc;
}

double diag_gaussian_logpdf(const std::vector<double>& x,
                            const std::vector<double>& mean,
                            const std::vector<double>& scale) {
    const std::size_t k = x.size();
    if (mean.size() != k || scale.size() != k)
        throw ShapeError("diag_gaussian_logpdf: size mismatch");
    double lp = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        if (scale[i] <= 0.0)
            throw NumericError("diag_gaussian_logpdf: non-positive scale");
        const double z = (x[i] - mean[i]) / scale[i];
        lp += -0.5 * z * z - std::log(scale[i]) - 0.5 * kLog2Pi;
    }
    return lp;
}

VlbEstimate vlb_gap(const TransitionProvider& p, const TransitionKernel& q,
                    const Tensor& x_top, int mc_samples, Rng& rng) {
    if (mc_samples < 2)
        throw RangeError("vlb_gap: need at least 2 chains for an SE");
    NoGradGuard ng;
    const int T = p.depth();
    VlbEstimate est;
    est.mc_samples = mc_samples;
    std::vector<double> ce_chain(mc_samples, 0.0), kl_chain(mc_samples, 0.0);
    bool any_stochastic = false;

    for (int m = 0; m < mc_samples; ++m) {
        Tensor x = x_top;
        for (int t = T; t >= 1; --t) {
            const GaussianTransition pt = p.transition(t, x);
            const KernelOut qo = kernel_forward(q, x, t, nullptr);
            const auto& qm = qo.mean.value();
            const auto& qs = qo.scale.value();
            Tensor x_next;
            if (pt.stochastic()) {
                any_stochastic = true;
                double kl;
                if (est.kl_exact) {
                    try {
                        // rank-deficient chains fail the factorization and
                        // drop to the diagonal approximation for good
                        const auto chol =
                            linalg::cholesky(pt.cov_dense(), pt.dim());
                        kl = kl_gaussian(pt.mean.value(), chol, qm, qs);
                    } catch (const NumericError&) {
                        est.kl_exact = false;
                        kl = kl_gaussian_diag(pt.mean.value(), pt.cov_diag(),
                                              qm, qs);
                    }
                } else {
                    kl = kl_gaussian_diag(pt.mean.value(), pt.cov_diag(), qm,
                                          qs);
                }
                kl_chain[m] += kl;
                x_next = pt.sample(rng);
            } else {
                // point mass: its entropy is taken as zero, so the KL term
                // degenerates to the kernel's cross-entropy at the point
                x_next = pt.mean;
                kl_chain[m] +=
                    -diag_gaussian_logpdf(x_next.value(), qm, qs);
            }
            ce_chain[m] += -diag_gaussian_logpdf(x_next.value(), qm, qs);
            x = x_next;
        }
    }

    auto mean_se = [mc_samples](const std::vector<double>& v, double& mean,
                                double& se) {
        mean = std::accumulate(v.begin(), v.end(), 0.0) /
               static_cast<double>(mc_samples);
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(mc_samples - 1);
        se = std::sqrt(var / static_cast<double>(mc_samples));
    };
    mean_se(ce_chain, est.nll, est.nll_se);
    mean_se(kl_chain, est.bound, est.bound_se);
    est.nll_available = any_stochastic;
    return est;
}

// ---- matching losses ----

Tensor loss_mean_step(const TransitionKernel& q, const Tensor& x_t, int t,
                      const GaussianTransition& p_t, Rng* drop_rng) {
    const KernelOut qo = kernel_forward(q, detach(x_t), t, drop_rng);
    return sum_squares(sub(qo.mean, detach(p_t.mean)));
}

Tensor loss_chol_step(const TransitionKernel& q, const Tensor& x_t, int t,
                      const GaussianTransition& p_t, Rng* drop_rng) {
    const KernelOut qo = kernel_forward(q, detach(x_t), t, drop_rng);
    auto var = p_t.cov_diag();
    for (auto& v : var) v = std::sqrt(v);
    return sum_squares(
        sub(qo.scale, constant(qo.scale.shape(), std::move(var))));
}

Tensor loss_mean(const PathTrace& trace, const TransitionKernel& q) {
    const int T = static_cast<int>(trace.transitions.size());
    if (T == 0) throw ContractError("loss_mean: empty trace");
    Tensor acc = constant(0.0);
    for (int i = 0; i < T; ++i) {
        const int t = trace.transitions[static_cast<std::size_t>(i)].t;
        acc = add(acc, loss_mean_step(q, trace.states[static_cast<std::size_t>(i)], t,
                                      trace.transitions[static_cast<std::size_t>(i)],
                                      nullptr));
    }
    return mul_scalar(acc, 1.0 / static_cast<double>(T));
}

Tensor loss_cholesky(const PathTrace& trace, const TransitionKernel& q) {
    const int T = static_cast<int>(trace.transitions.size());
    if (T == 0) throw ContractError("loss_cholesky: empty trace");
    bool any = false;
    for (const auto& tr : trace.transitions) any = any || tr.stochastic();
    if (!any)
        throw ContractError(
            "loss_cholesky: trace is deterministic, no factor to match");
    Tensor acc = constant(0.0);
    for (int i = 0; i < T; ++i) {
        acc = add(acc,
                  loss_chol_step(q, trace.states[static_cast<std::size_t>(i)],
                                 trace.transitions[static_cast<std::size_t>(i)].t,
                                 trace.transitions[static_cast<std::size_t>(i)],
                                 nullptr));
    }
    return mul_scalar(acc, 1.0 / static_cast<double>(T));
}

Tensor loss_perf(const ProbabilityPath& path, const TransitionKernel& q,
                 const Sample& s, Rng& noise_rng, Rng* drop_rng) {
    Tensor x_top;
    {
        NoGradGuard ng;
        x_top = path_embed(path, s);
    }
    const KernelChain ch =
        kernel_generate(q, x_top, true, &noise_rng, drop_rng);
    const Tensor logits = path_head_logits(path, ch.states.back());
    return cross_entropy_logits(logits, {s.label});
}

// ---- trainer ----

DistillReport distill_train(const ProbabilityPath& path, TransitionKernel& q,
                            const Dataset& train, const DistillConfig& dc,
                            Rng& rng, std::ostream* log) {
    if (train.size() == 0) throw ContractError("distill_train: empty dataset");
    if (path.depth() != q.cfg.T)
        throw ContractError("distill_train: path depth != kernel T");
    if (path.cfg().d_model != q.cfg.d_model)
        throw ContractError("distill_train: d_model mismatch");

    const auto t0 = std::chrono::steady_clock::now();
    DistillReport rep;
    rep.kernel_params = q.n_params();
    rep.backbone_params = path.backbone->n_params();

    double lam_chol = dc.lambda_chol;
    if (!path.stochastic() && lam_chol != 0.0) {
        // a deterministic chain has no covariance to match
        rep.lambda_chol_forced_zero = true;
        lam_chol = 0.0;
        if (log)
            (*log) << "distill: path is deterministic, lambda_chol -> 0\n";
    }

    const std::string frozen_sha = params_sha(path.backbone->named_params());
    Adam opt(q.params(), dc.adam);
    const int T = path.depth();

    std::vector<std::size_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);

    for (int epoch = 0; epoch < dc.epochs; ++epoch) {
        Rng shuffle_rng = rng.stream("distill-shuffle", epoch);
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1],
                      idx[shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
        Rng path_rng = rng.stream("distill-path", epoch);
        Rng t_rng = rng.stream("distill-t", epoch);
        Rng gen_rng = rng.stream("distill-gen", epoch);
        Rng drop_rng = rng.stream("distill-drop", epoch);
        Rng* drop = q.cfg.dropout > 0.0 ? &drop_rng : nullptr;
        const double lr = dc.sched.lr_at(epoch);

        double sum_mean = 0.0, sum_chol = 0.0, sum_nll = 0.0, sum_total = 0.0;
        std::size_t seen = 0, step = 0;
        for (std::size_t start = 0; start < idx.size();
             start += dc.batch_size, ++step) {
            const std::size_t end = std::min(idx.size(), start + dc.batch_size);
            const double inv_b = 1.0 / static_cast<double>(end - start);
            Tensor mean_term = constant(0.0);
            Tensor chol_term = constant(0.0);
            Tensor nll_term = constant(0.0);
            for (std::size_t kk = start; kk < end; ++kk) {
                const Sample& smp = train.samples[idx[kk]];
                PathTrace trace;
                {
                    NoGradGuard ng; // chain targets are constants
                    trace = simulate_path(path, path_embed(path, smp),
                                          path.stochastic(), &path_rng);
                }
                const int t =
                    static_cast<int>(t_rng.uniform_int(1, T));
                const std::size_t i = static_cast<std::size_t>(T - t);
                if (dc.lambda_mean != 0.0)
                    mean_term = add(
                        mean_term,
                        loss_mean_step(q, trace.states[i], t,
                                       trace.transitions[i], drop));
                if (lam_chol != 0.0)
                    chol_term = add(
                        chol_term,
                        loss_chol_step(q, trace.states[i], t,
                                       trace.transitions[i], drop));
                if (dc.lambda_nll != 0.0)
                    nll_term =
                        add(nll_term, loss_perf(path, q, smp, gen_rng, drop));
                ++seen;
            }
            mean_term = mul_scalar(mean_term, inv_b);
            chol_term = mul_scalar(chol_term, inv_b);
            nll_term = mul_scalar(nll_term, inv_b);
            Tensor total = mul_scalar(mean_term, dc.lambda_mean);
            total = add(total, mul_scalar(chol_term, lam_chol));
            total = add(total, mul_scalar(nll_term, dc.lambda_nll));
            const double tv = total.item();
            if (!std::isfinite(tv))
                throw TrainingError("distill loss non-finite at epoch " +
                                    std::to_string(epoch) + " step " +
                                    std::to_string(step));
            sum_mean += mean_term.item() * static_cast<double>(end - start);
            sum_chol += chol_term.item() * static_cast<double>(end - start);
            sum_nll += nll_term.item() * static_cast<double>(end - start);
            sum_total += tv * static_cast<double>(end - start);
            opt.zero_grad();
            backward(total);
            opt.step(lr);
        }
        const double inv_n = 1.0 / static_cast<double>(seen);
        rep.epoch_mean.push_back(sum_mean * inv_n);
        rep.epoch_chol.push_back(sum_chol * inv_n);
        rep.epoch_nll.push_back(sum_nll * inv_n);
        rep.epoch_total.push_back(sum_total * inv_n);
        if (log && (epoch % dc.log_every == 0 || epoch == dc.epochs - 1))
            (*log) << "distill epoch " << epoch << " lr " << lr << " total "
                   << rep.epoch_total.back() << " (mean "
                   << rep.epoch_mean.back() << " chol "
                   << rep.epoch_chol.back() << " nll " << rep.epoch_nll.back()
                   << ")\n";
    }

    // closing diagnostic: the bound on a few inputs
    {
        Rng bound_rng = rng.stream("distill-bound");
        PathProvider prov(path);
        double acc = 0.0, acc_se2 = 0.0;
        int used = 0;
        for (int i = 0;
             i < dc.bound_inputs && i < static_cast<int>(train.size()); ++i) {
            Tensor x_top;
            {
                NoGradGuard ng;
                x_top = path_embed(path, train.samples[static_cast<std::size_t>(i)]);
            }
            const VlbEstimate est =
                vlb_gap(prov, q, x_top, dc.bound_chains, bound_rng);
            acc += est.bound;
            acc_se2 += est.bound_se * est.bound_se;
            rep.bound_kl_exact = rep.bound_kl_exact && est.kl_exact;
            ++used;
        }
        if (used > 0) {
            rep.final_bound = acc / used;
            rep.final_bound_se = std::sqrt(acc_se2) / used;
        }
    }

    if (params_sha(path.backbone->named_params()) != frozen_sha)
        throw ContractError("distill_train: backbone weights changed");

    const auto t1 = std::chrono::steady_clock::now();
    rep.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    return rep;
}

} // namespace diffcal
