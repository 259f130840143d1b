#include <cmath>

#include "doctest.h"

#include "diffcal/tensor.hpp"
#include "grad_check.hpp"

using namespace diffcal;
using diffcal::testing::fd_check;

namespace {

Tensor rp(Shape s, Rng& rng, double scale = 0.5) {
    return randn_param(std::move(s), rng, scale);
}

} // namespace

TEST_CASE("shape bookkeeping and scalar access") {
    Tensor a = constant({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(a.rows() == 2);
    CHECK(a.cols() == 3);
    CHECK(a.at(1, 2) == 6);
    CHECK(constant(4.5).item() == 4.5);
    CHECK_THROWS_AS(a.item(), ShapeError);
    CHECK_THROWS_AS(constant({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("frozen forward values") {
    // softmax of [2, 0] is [sigmoid(2), sigmoid(-2)]
    const auto p = softmax_rows(constant({1, 2}, {2.0, 0.0})).value();
    CHECK(p[0] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
    CHECK(p[0] + p[1] == doctest::Approx(1.0).epsilon(1e-12));

    // layer norm of [1, 3]: mean 2, population sd 1
    const auto n = layer_norm_rows(constant({1, 2}, {1.0, 3.0}),
                                   full({2}, 1.0), zeros({2}), 1e-12)
                       .value();
    CHECK(n[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(n[1] == doctest::Approx(1.0).epsilon(1e-9));

    // gelu(0) = 0; gelu(x) - gelu(-x) = x for the erf form
    const auto g = gelu(constant({1, 3}, {0.0, 1.3, -1.3})).value();
    CHECK(g[0] == 0.0);
    CHECK(g[1] - g[2] == doctest::Approx(1.3).epsilon(1e-12));

    // softplus large-x asymptote
    const auto sp = softplus(constant({1, 2}, {50.0, -50.0})).value();
    CHECK(sp[0] == doctest::Approx(50.0).epsilon(1e-12));
    CHECK(sp[1] == doctest::Approx(std::exp(-50.0)).epsilon(1e-6));
}

TEST_CASE("backward of sum of squares doubles the input") {
    Tensor x = param({1}, {3.0});
    backward(sum_squares(x));
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("gradients accumulate until zeroed") {
    Tensor x = param({1}, {1.0});
    backward(sum_squares(x));
    backward(sum_squares(x));
    CHECK(x.grad()[0] == doctest::Approx(4.0).epsilon(1e-12));
    zero_grads({x});
    CHECK(x.grad()[0] == 0.0);

    // a tensor consumed twice in one graph also accumulates
    Tensor y = param({1}, {5.0});
    backward(reduce_sum(add(y, y)));
    CHECK(y.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("no-grad regions build no tape") {
    Tensor x = param({2}, {1.0, 2.0});
    NoGradGuard ng;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node().parents.empty());
}

TEST_CASE("backward wants a scalar") {
    Tensor x = param({2}, {1.0, 2.0});
    CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
}

TEST_CASE("shape mismatches throw") {
    Tensor a = constant({2, 2}, {1, 2, 3, 4});
    Tensor b = constant({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(matmul(a, constant({3, 2}, {1, 2, 3, 4, 5, 6})),
                    ShapeError);
    CHECK_THROWS_AS(reshape(a, {3, 2}), ShapeError);
    CHECK_THROWS_AS(slice_rows(a, 1, 3), RangeError);
}

TEST_CASE("domain violations throw") {
    CHECK_THROWS_AS(log_t(constant({1}, {-1.0})), NumericError);
    CHECK_THROWS_AS(sqrt_t(constant({1}, {-1.0})), NumericError);
    CHECK_THROWS_AS(divide(constant({1}, {1.0}), constant({1}, {0.0})),
                    NumericError);
    CHECK_THROWS_AS(check_finite(constant({1}, {std::nan("")}), "here"),
                    NumericError);
}

TEST_CASE("every differentiable op passes a finite-difference check") {
    Rng rng(101);
    const double h = 1e-5, tol = 1e-6;
    auto probe = [&](const char* name, const std::vector<Tensor>& leaves,
                     const std::function<Tensor()>& fn) {
        auto r = fd_check(leaves, fn, 6, h, rng);
        INFO(name << " worst " << r.worst);
        CHECK(r.max_rel < tol);
    };

    {
        Tensor a = rp({3, 4}, rng), b = rp({3, 4}, rng);
        probe("add", {a, b}, [&] { return reduce_sum(mul(add(a, b), a)); });
        probe("sub", {a, b}, [&] { return sum_squares(sub(a, b)); });
        probe("mul", {a, b}, [&] { return reduce_sum(mul(a, b)); });
        Tensor c = param({3, 4}, [&] {
            std::vector<double> v(12);
            for (auto& x : v) x = 0.5 + rng.uniform();
            return v;
        }());
        probe("divide", {a, c}, [&] { return reduce_sum(divide(a, c)); });
        probe("neg/scalar", {a}, [&] {
            return reduce_mean(add_scalar(mul_scalar(neg(a), 2.5), 1.0));
        });
        probe("exp", {a}, [&] { return reduce_sum(exp_t(a)); });
        probe("log", {c}, [&] { return reduce_sum(log_t(c)); });
        probe("sqrt", {c}, [&] { return reduce_sum(sqrt_t(c)); });
        probe("softplus", {a}, [&] { return reduce_sum(softplus(a)); });
        probe("gelu", {a}, [&] { return reduce_sum(gelu(a)); });
    }
    {
        Tensor m = rp({3, 4}, rng), v = rp({4}, rng), cv = rp({3}, rng);
        probe("add_rowvec", {m, v},
              [&] { return sum_squares(add_rowvec(m, v)); });
        probe("mul_rowvec", {m, v},
              [&] { return reduce_sum(mul_rowvec(m, v)); });
        probe("add_colvec", {m, cv},
              [&] { return sum_squares(add_colvec(m, cv)); });
        probe("mul_colvec", {m, cv},
              [&] { return reduce_sum(mul_colvec(m, cv)); });
    }
    {
        Tensor a = rp({3, 4}, rng), b = rp({4, 2}, rng), w = rp({4, 3}, rng),
               bias = rp({3}, rng);
        probe("matmul", {a, b}, [&] { return sum_squares(matmul(a, b)); });
        probe("transpose", {a},
              [&] { return reduce_sum(matmul(transpose(a), a)); });
        probe("linear", {a, w, bias},
              [&] { return sum_squares(linear(a, w, bias)); });
    }
    {
        Tensor x = rp({3, 5}, rng), g = rp({5}, rng, 0.3), be = rp({5}, rng);
        probe("softmax_rows", {x},
              [&] { return reduce_sum(mul(softmax_rows(x), x)); });
        probe("log_softmax_rows", {x},
              [&] { return reduce_sum(mul(log_softmax_rows(x), x)); });
        probe("layer_norm_rows", {x, g, be}, [&] {
            return sum_squares(
                layer_norm_rows(x, add_scalar(g, 1.0), be, 1e-5));
        });
        probe("row/col_sum", {x}, [&] {
            return add(sum_squares(row_sum(x)), sum_squares(col_sum(x)));
        });
        probe("cross_entropy", {x},
              [&] { return cross_entropy_logits(x, {1, 0, 4}); });
    }
    {
        Tensor a = rp({2, 6}, rng), b = rp({3, 6}, rng), c = rp({2, 3}, rng);
        probe("concat_rows/slice", {a, b}, [&] {
            Tensor cat = concat_rows(a, b);
            return sum_squares(slice_rows(cat, 1, 4));
        });
        probe("concat_cols/slice", {a, c}, [&] {
            Tensor cat = concat_cols(a, c);
            return sum_squares(slice_cols(cat, 2, 8));
        });
        probe("reshape", {a},
              [&] { return sum_squares(reshape(a, {4, 3})); });
    }
    {
        Tensor table = rp({5, 4}, rng), x = rp({3, 4}, rng);
        probe("embed_rows", {table}, [&] {
            return sum_squares(embed_rows(table, {4, 0, 0, 2}));
        });
        probe("pick_cols", {x}, [&] {
            return sum_squares(pick_cols(x, {3, 0, 1}));
        });
    }
}

TEST_CASE("detach stops gradients") {
    Tensor x = param({2}, {2.0, 3.0});
    backward(reduce_sum(mul(detach(x), x)));
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(3.0));
}

TEST_CASE("dropout is a passthrough at p=0 and rescales otherwise") {
    Rng rng(7);
    Tensor x = full({1, 1000}, 1.0);
    Rng r0 = rng.stream("a");
    CHECK(dropout(x, 0.0, r0).value() == x.value());
    Rng r1 = rng.stream("b");
    const auto v = dropout(x, 0.4, r1).value();
    double sum = 0.0;
    int zeros_n = 0;
    for (double d : v) {
        if (d == 0.0)
            ++zeros_n;
        else
            CHECK(d == doctest::Approx(1.0 / 0.6).epsilon(1e-12));
        sum += d;
    }
    CHECK(zeros_n > 300);
    CHECK(zeros_n < 500);
    CHECK(sum / 1000.0 == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("cross entropy equals picked log softmax") {
    Rng rng(13);
    Tensor logits = rp({4, 3}, rng, 1.0);
    const std::vector<int> labels{2, 0, 1, 2};
    const double ce = cross_entropy_logits(logits, labels).item();
    double want = 0.0;
    const auto ls = log_softmax_rows(logits).value();
    for (std::size_t i = 0; i < labels.size(); ++i)
        want -= ls[i * 3 + static_cast<std::size_t>(labels[i])];
    want /= 4.0;
    CHECK(ce == doctest::Approx(want).epsilon(1e-12));
}
