#include <cmath>

#include "doctest.h"

#include "diffcal/data.hpp"
#include "diffcal/distill.hpp"

using namespace diffcal;

namespace {

BackboneConfig small_cfg(AttentionMode mode, int depth = 2) {
    BackboneConfig bc;
    bc.task = TaskKind::tabular;
    bc.mode = mode;
    bc.depth = depth;
    bc.d_model = 12;
    bc.n_heads = 2;
    bc.d_head = 6;
    bc.input_dim = 2;
    bc.n_tokens_tabular = 6;
    bc.n_classes = 3;
    bc.s_inducing = 3;
    return bc;
}

KernelConfig matching_kc(const BackboneConfig& bc) {
    KernelConfig kc;
    kc.d_model = bc.d_model;
    kc.n_heads = bc.n_heads;
    kc.d_head = bc.d_head;
    kc.T = bc.depth;
    kc.dropout = 0.0;
    return kc;
}

std::vector<double> rand_vec(std::size_t n, Rng& rng, double s = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = s * rng.normal();
    return v;
}

std::vector<double> rand_pos(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = 0.4 + rng.uniform();
    return v;
}

} // namespace

TEST_CASE("kl between unit-variance gaussians is half the squared shift") {
    CHECK(kl_gaussian({0.0}, {1.0}, {1.0}, {1.0}) ==
          doctest::Approx(0.5).epsilon(1e-12));
    CHECK(kl_gaussian_diag({0.0}, {1.0}, {1.0}, {1.0}) ==
          doctest::Approx(0.5).epsilon(1e-12));
    CHECK(kl_gaussian_diag({0.0}, {1.0}, {0.0}, {1.0}) == 0.0);
}

TEST_CASE("dense kl with a diagonal factor equals the diagonal formula") {
    Rng rng(70);
    for (int rep = 0; rep < 10; ++rep) {
        const std::size_t k = 1 + static_cast<std::size_t>(rep % 5);
        const auto pm = rand_vec(k, rng);
        const auto qm = rand_vec(k, rng);
        const auto ps = rand_pos(k, rng);
        const auto qs = rand_pos(k, rng);
        std::vector<double> f(k * k, 0.0), pvar(k);
        for (std::size_t i = 0; i < k; ++i) {
            f[i * k + i] = ps[i];
            pvar[i] = ps[i] * ps[i];
        }
        CHECK(kl_gaussian(pm, f, qm, qs) ==
              doctest::Approx(kl_gaussian_diag(pm, pvar, qm, qs))
                  .epsilon(1e-10));
    }
}

TEST_CASE("kl identities and error paths") {
    // rotation of the factor changes nothing: F F^T is what matters
    const double c = std::cos(0.7), s = std::sin(0.7);
    const std::vector<double> rot{2.0 * c, -2.0 * s, 0.5 * s, 0.5 * c};
    const std::vector<double> plain{2.0, 0.0, 0.0, 0.5};
    // rot rows: [2c, -2s; .5s, .5c]; rot rot^T = diag(4, .25) = plain plain^T
    CHECK(kl_gaussian({0.1, -0.2}, rot, {0.0, 0.0}, {1.0, 1.0}) ==
          doctest::Approx(
              kl_gaussian({0.1, -0.2}, plain, {0.0, 0.0}, {1.0, 1.0}))
              .epsilon(1e-10));

    CHECK_THROWS_AS(kl_gaussian({0.0, 0.0}, {1.0, 0.0, 1.0, 0.0}, {0.0, 0.0},
                                {1.0, 1.0}),
                    NumericError); // singular factor
    CHECK_THROWS_AS(kl_gaussian_diag({0.0}, {1.0}, {0.0}, {0.0}),
                    NumericError);
    CHECK_THROWS_AS(kl_gaussian_diag({0.0}, {1.0}, {0.0, 0.0}, {1.0, 1.0}),
                    ShapeError);
}

TEST_CASE("closed-form kl agrees with monte carlo") {
    Rng rng(71);
    for (int rep = 0; rep < 5; ++rep) {
        const std::size_t k = 1 + static_cast<std::size_t>(rng.uniform_int(0, 3));
        const auto pm = rand_vec(k, rng, 0.7);
        const auto qm = rand_vec(k, rng, 0.7);
        const auto ps = rand_pos(k, rng);
        const auto qs = rand_pos(k, rng);
        std::vector<double> pvar(k);
        for (std::size_t i = 0; i < k; ++i) pvar[i] = ps[i] * ps[i];
        const double exact = kl_gaussian_diag(pm, pvar, qm, qs);

        const int n = 20000;
        double acc = 0.0, acc2 = 0.0;
        for (int it = 0; it < n; ++it) {
            std::vector<double> x(k);
            for (std::size_t i = 0; i < k; ++i)
                x[i] = pm[i] + ps[i] * rng.normal();
            const double ll = diag_gaussian_logpdf(x, pm, ps) -
                              diag_gaussian_logpdf(x, qm, qs);
            acc += ll;
            acc2 += ll * ll;
        }
        const double mc = acc / n;
        const double se =
            std::sqrt(std::max(0.0, acc2 / n - mc * mc) / n);
        CHECK(std::fabs(mc - exact) <= 5.0 * se + 1e-9);
    }
}

TEST_CASE("diagonal gaussian log density frozen value") {
    const double l = diag_gaussian_logpdf({0.0, 0.0}, {0.0, 0.0}, {1.0, 1.0});
    CHECK(l == doctest::Approx(-std::log(2.0 * 3.14159265358979323846))
                   .epsilon(1e-12));
    // shifting by one sd in each coordinate costs exactly 1/2 per coordinate
    const double l2 = diag_gaussian_logpdf({2.0, 0.5}, {0.0, 0.0}, {2.0, 0.5});
    CHECK(l2 == doctest::Approx(l - 1.0 - std::log(2.0 * 0.5)).epsilon(1e-12));
}

TEST_CASE("step losses compare the model against frozen targets") {
    Rng rng(72);
    BackboneConfig bc = small_cfg(AttentionMode::sgpa);
    Backbone bb = make_backbone(bc, rng);
    ProbabilityPath path = repartition(bb);
    TransitionKernel q = make_kernel(matching_kc(bc), rng);
    Tensor x;
    GaussianTransition gt;
    {
        NoGradGuard ng;
        x = randn_param({6, 12}, rng, 0.8);
        gt = transition_eval(path, 2, x);
    }
    const Tensor lm = loss_mean_step(q, x, 2, gt, nullptr);
    Tensor want;
    {
        NoGradGuard ng;
        const KernelOut qo = kernel_forward(q, x, 2, nullptr);
        want = sum_squares(sub(qo.mean, gt.mean));
    }
    CHECK(lm.item() == doctest::Approx(want.item()).epsilon(1e-12));

    const Tensor lc = loss_chol_step(q, x, 2, gt, nullptr);
    double want_c = 0.0;
    {
        NoGradGuard ng;
        const KernelOut qo = kernel_forward(q, x, 2, nullptr);
        const auto var = gt.cov_diag();
        for (std::size_t i = 0; i < var.size(); ++i) {
            const double d = qo.scale[i] - std::sqrt(var[i]);
            want_c += d * d;
        }
    }
    CHECK(lc.item() == doctest::Approx(want_c).epsilon(1e-12));

    // gradients land on the model, not on the chain
    backward(lm);
    double g = 0.0;
    for (double v : q.mean_w.grad()) g += std::fabs(v);
    CHECK(g > 0.0);
    CHECK(bb.w_head.node().grad.empty());
}

TEST_CASE("trace losses average the per-step terms") {
    Rng rng(73);
    BackboneConfig bc = small_cfg(AttentionMode::sgpa);
    Backbone bb = make_backbone(bc, rng);
    ProbabilityPath path = repartition(bb);
    TransitionKernel q = make_kernel(matching_kc(bc), rng);
    Sample s;
    s.features = {0.6, -0.3};
    PathTrace tr;
    {
        NoGradGuard ng;
        Rng noise = rng.stream("noise");
        tr = simulate_path(path, path_embed(path, s), true, &noise);
    }
    const double got = loss_mean(tr, q).item();
    double want = 0.0;
    for (std::size_t i = 0; i < tr.transitions.size(); ++i)
        want += loss_mean_step(q, tr.states[i], tr.transitions[i].t,
                               tr.transitions[i], nullptr)
                    .item();
    want /= static_cast<double>(tr.transitions.size());
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
    CHECK(loss_cholesky(tr, q).item() >= 0.0);
}

TEST_CASE("matching the factor of a noiseless chain is refused") {
    Rng rng(74);
    BackboneConfig bc = small_cfg(AttentionMode::standard);
    Backbone bb = make_backbone(bc, rng);
    ProbabilityPath path = repartition(bb);
    TransitionKernel q = make_kernel(matching_kc(bc), rng);
    Sample s;
    s.features = {0.2, 0.8};
    NoGradGuard ng;
    const PathTrace tr = simulate_path(path, path_embed(path, s), false, nullptr);
    CHECK_THROWS_AS(loss_cholesky(tr, q), ContractError);
}

TEST_CASE("bound estimator flags deterministic chains") {
    Rng rng(75);
    BackboneConfig bc = small_cfg(AttentionMode::standard);
    Backbone bb = make_backbone(bc, rng);
    ProbabilityPath path = repartition(bb);
    TransitionKernel q = make_kernel(matching_kc(bc), rng);
    NoGradGuard ng;
    Tensor x = randn_param({6, 12}, rng, 0.8);
    Rng mc = rng.stream("mc");
    const VlbEstimate est = vlb_gap(PathProvider(path), q, x, 8, mc);
    CHECK_FALSE(est.nll_available);
    CHECK(std::isfinite(est.bound));
    CHECK(est.mc_samples == 8);
}

TEST_CASE("bound really bounds the cross entropy on a stochastic chain") {
    Rng rng(76);
    BackboneConfig bc = small_cfg(AttentionMode::sgpa);
    Backbone bb = make_backbone(bc, rng);
    ProbabilityPath path = repartition(bb);
    TransitionKernel q = make_kernel(matching_kc(bc), rng);
    NoGradGuard ng;
    Tensor x = randn_param({6, 12}, rng, 0.8);
    Rng mc = rng.stream("mc");
    const VlbEstimate est = vlb_gap(PathProvider(path), q, x, 64, mc);
    CHECK(est.nll_available);
    CHECK(std::isfinite(est.nll));
    CHECK(std::isfinite(est.bound));
    CHECK(est.nll <= est.bound + 3.0 * (est.nll_se + est.bound_se));
}

TEST_CASE("solution-head loss reaches the live student parameters") {
    Rng rng(77);
    BackboneConfig bc = small_cfg(AttentionMode::sgpa);
    Backbone bb = make_backbone(bc, rng);
    ProbabilityPath path = repartition(bb);
    TransitionKernel q = make_kernel(matching_kc(bc), rng);
    Sample s;
    s.features = {0.1, -0.4};
    s.label = 1;
    Rng noise = rng.stream("n");
    const Tensor l = loss_perf(path, q, s, noise, nullptr);
    CHECK(l.item() > 0.0);
    backward(l);
    // the freshly initialized block gates its attention branch shut, so the
    // always-on head carries gradient while the gated projections get none
    double g_mean = 0.0;
    for (double v : q.mean_w.grad()) g_mean += std::fabs(v);
    CHECK(g_mean > 0.0);
    double g_attn = 0.0;
    for (double v : q.wq.grad()) g_attn += std::fabs(v);
    CHECK(g_attn == 0.0);
}

TEST_CASE("distillation trains without touching the teacher") {
    Rng rng(78);
    Rng data_rng = rng.stream("data");
    Dataset ds = gen_blobs(60, 3, 0.06, 8, data_rng, false);
    for (auto mode : {AttentionMode::standard, AttentionMode::sgpa}) {
        BackboneConfig bc = small_cfg(mode);
        Rng init = rng.stream("init");
        Backbone bb = make_backbone(bc, init);
        ProbabilityPath path = repartition(bb);
        Rng kinit = rng.stream("kinit");
        TransitionKernel q = make_kernel(matching_kc(bc), kinit);

        const std::string teacher_before = params_sha(bb.named_params());
        const std::string student_before = params_sha(q.named_params());

        DistillConfig dc;
        dc.epochs = 3;
        dc.batch_size = 20;
        dc.adam.lr = 1e-3;
        dc.sched = {1e-3, 1e-5, 1, 2};
        dc.lambda_mean = 0.5;
        dc.lambda_chol = 0.2;
        dc.lambda_nll = 0.3;
        dc.bound_inputs = 2;
        dc.bound_chains = 4;
        Rng train_rng = rng.stream("train");
        const DistillReport rep = distill_train(path, q, ds, dc, train_rng,
                                                nullptr);

        CHECK(params_sha(bb.named_params()) == teacher_before);
        CHECK(params_sha(q.named_params()) != student_before);
        REQUIRE(rep.epoch_total.size() == 3);
        for (double v : rep.epoch_total) CHECK(std::isfinite(v));
        CHECK(rep.kernel_params == q.n_params());
        CHECK(rep.backbone_params == bb.n_params());
        CHECK(std::isfinite(rep.final_bound));
        if (mode == AttentionMode::standard) {
            CHECK(rep.lambda_chol_forced_zero);
            for (double v : rep.epoch_chol) CHECK(v == 0.0);
        } else {
            CHECK_FALSE(rep.lambda_chol_forced_zero);
            bool any_chol = false;
            for (double v : rep.epoch_chol) any_chol = any_chol || (v != 0.0);
            CHECK(any_chol);
        }
    }
}
