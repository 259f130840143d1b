#include "diffcal/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <ostream>

#include "diffcal/distill.hpp"
#include "diffcal/linalg.hpp"

namespace diffcal {

namespace {

struct Checker {
    std::ostream& out;
    bool all_ok = true;

    void run(const std::string& name, const std::function<void()>& fn) {
        try {
            fn();
            out << "[ok]   " << name << "\n";
        } catch (const std::exception& e) {
            all_ok = false;
            out << "[fail] " << name << ": " << e.what() << "\n";
        }
    }
};

void expect(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

void expect_near(double a, double b, double tol, const std::string& what) {
    if (!(std::fabs(a - b) <= tol))
        throw ContractError(what + ": " + std::to_string(a) + " vs " +
                            std::to_string(b));
}

Sample random_tabular_sample(Rng& rng) {
    Sample s;
    s.features = {rng.normal(), rng.normal()};
    s.label = 0;
    return s;
}

} // namespace

bool verify_all(std::ostream& out) {
    Checker ck{out};

    ck.run("rng streams are reproducible and label-separated", [] {
        Rng a(7), b(7);
        for (int i = 0; i < 100; ++i)
            expect(a.next_u64() == b.next_u64(), "same-seed divergence");
        Rng base(7);
        Rng s1 = base.stream("x"), s2 = base.stream("y");
        expect(s1.next_u64() != s2.next_u64(), "labels collide");
        Rng s1b = Rng(7).stream("x");
        s1 = Rng(7).stream("x");
        expect(s1.next_u64() == s1b.next_u64(), "stream not a pure function");
    });

    ck.run("reverse-mode gradient matches finite differences", [] {
        Rng rng(11);
        Tensor x = randn_param({3, 4}, rng, 0.5);
        Tensor w = randn_param({4, 4}, rng, 0.5);
        auto f = [&] {
            Tensor h = gelu(matmul(x, w));
            return reduce_sum(mul(softmax_rows(h), h));
        };
        Tensor y = f();
        backward(y);
        const double h = 1e-5;
        for (std::size_t i : {std::size_t{0}, std::size_t{5}, std::size_t{11}}) {
            const double saved = x[i];
            x.value()[i] = saved + h;
            const double up = f().value()[0];
            x.value()[i] = saved - h;
            const double dn = f().value()[0];
            x.value()[i] = saved;
            const double fd = (up - dn) / (2 * h);
            const double an = x.grad()[i];
            expect_near(an, fd, 1e-6 * std::max(1.0, std::fabs(fd)),
                        "grad[" + std::to_string(i) + "]");
        }
    });

    ck.run("softmax and layer norm reference values", [] {
        Tensor a = constant({1, 2}, {2.0, 0.0});
        const auto p = softmax_rows(a).value();
        expect_near(p[0], 1.0 / (1.0 + std::exp(-2.0)), 1e-12, "softmax");
        Tensor b = constant({1, 2}, {1.0, 3.0});
        const auto n = layer_norm_rows(b, full({2}, 1.0), zeros({2}), 1e-12).value();
        expect_near(n[0], -1.0, 1e-6, "layer_norm lo");
        expect_near(n[1], 1.0, 1e-6, "layer_norm hi");
    });

    ck.run("chain reconfiguration is exact for every attention mode", [] {
        for (const char* mode : {"standard", "kernel", "sgpa", "kep"}) {
            BackboneConfig bc;
            bc.task = TaskKind::tabular;
            bc.mode = attention_mode_from(mode);
            bc.depth = 2;
            bc.d_model = 16;
            bc.n_heads = 2;
            bc.d_head = 8;
            bc.input_dim = 2;
            bc.n_tokens_tabular = 8;
            bc.n_classes = 3;
            Rng rng(5);
            Backbone bb = make_backbone(bc, rng);
            ProbabilityPath path = repartition(bb);
            NoGradGuard ng;
            for (int i = 0; i < 4; ++i) {
                Sample s = random_tabular_sample(rng);
                const auto a = backbone_logits(bb, s).value();
                const auto b = path_logits_zero_noise(path, s).value();
                for (std::size_t c = 0; c < a.size(); ++c)
                    expect_near(a[c], b[c], 1e-10,
                                std::string(mode) + " logit drift");
            }
        }
    });

    ck.run("fresh transition model reproduces its input mean at every t", [] {
        KernelConfig kc;
        kc.d_model = 16;
        kc.n_heads = 2;
        kc.d_head = 8;
        kc.T = 4;
        Rng rng(9);
        TransitionKernel k = make_kernel(kc, rng);
        NoGradGuard ng;
        Tensor x = randn_param({6, 16}, rng, 1.0);
        Tensor want;
        for (int t = 1; t <= kc.T; ++t) {
            const KernelOut o = kernel_forward(k, x, t, nullptr);
            if (t == 1) want = o.mean;
            for (std::size_t i = 0; i < x.size(); ++i)
                expect_near(o.mean[i], want[i], 1e-12, "t-dependence at init");
        }
    });

    ck.run("gaussian kl closed forms", [] {
        expect_near(kl_gaussian_diag({0.0}, {1.0}, {1.0}, {1.0}), 0.5, 1e-12,
                    "unit shift");
        Rng rng(3);
        std::vector<double> m1(4), m2(4), s(4), var(4);
        for (int i = 0; i < 4; ++i) {
            m1[i] = rng.normal();
            m2[i] = rng.normal();
            s[i] = 0.5 + rng.uniform();
            var[i] = s[i] * s[i];
        }
        double maha = 0.0;
        for (int i = 0; i < 4; ++i) {
            const double d = (m1[i] - m2[i]) / s[i];
            maha += d * d;
        }
        // p side takes variances, q side takes scales
        expect_near(kl_gaussian_diag(m1, var, m2, s), 0.5 * maha, 1e-12,
                    "matched scales");
    });

    ck.run("metric suite on a hand-checked batch", [] {
        PredictionSet ps = PredictionSet::from(
            {{0.9, 0.1}, {0.6, 0.4}, {0.2, 0.8}, {0.7, 0.3}}, {0, 1, 1, 0});
        expect_near(accuracy(ps), 0.75, 1e-12, "accuracy");
        // two bins over (0,1]: all four confidences land in (0.5, 1]
        const double e = ece(ps, 2);
        expect_near(e, std::fabs((0.9 + 0.6 + 0.8 + 0.7) / 4 - 0.75), 1e-12,
                    "ece");
        expect_near(brier(ps),
                    ((0.01 + 0.01) + (0.36 + 0.36) + (0.04 + 0.04) +
                     (0.09 + 0.09)) /
                        4,
                    1e-12, "brier");
    });

    ck.run("weight files round-trip byte-for-byte", [] {
        namespace fs = std::filesystem;
        const std::string tmp =
            (fs::temp_directory_path() / "diffcal_verify.ckpt").string();
        Rng rng(21);
        Tensor a = randn_param({3, 5}, rng, 1.0);
        Tensor b = randn_param({7}, rng, 1.0);
        save_checkpoint(tmp, {{"a", a}, {"b", b}}, 21, "h");
        Tensor a2 = zeros_param({3, 5});
        Tensor b2 = zeros_param({7});
        apply_checkpoint(load_checkpoint(tmp), {{"a", a2}, {"b", b2}});
        for (std::size_t i = 0; i < a.size(); ++i)
            expect(a[i] == a2[i], "payload a changed");
        for (std::size_t i = 0; i < b.size(); ++i)
            expect(b[i] == b2[i], "payload b changed");
        fs::remove(tmp);
    });

    out << (ck.all_ok ? "verify: all checks passed"
                      : "verify: FAILURES above")
        << "\n";
    return ck.all_ok;
}

} // namespace diffcal
