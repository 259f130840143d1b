#include "diffcal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace diffcal {

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "{";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "}";
    return os.str();
}

Node& Tensor::node() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return *node_;
}

std::size_t Tensor::rows() const {
    const auto& s = shape();
    if (s.size() != 2) throw ShapeError("rows() on non-matrix " + shape_str(s));
    return s[0];
}

std::size_t Tensor::cols() const {
    const auto& s = shape();
    if (s.size() != 2) throw ShapeError("cols() on non-matrix " + shape_str(s));
    return s[1];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    return node().value[r * cols() + c];
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on tensor of size > 1");
    return node().value[0];
}

static void ensure_grad(Node& n) {
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}

std::vector<double>& Tensor::grad() {
    ensure_grad(node());
    return node().grad;
}

void Tensor::zero_grad() {
    node().grad.assign(node().value.size(), 0.0);
}

static thread_local int no_grad_depth = 0;
NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }
bool grad_enabled() { return no_grad_depth == 0; }

// ---- construction ----

static Tensor fresh(Shape shape, std::vector<double> value) {
    if (shape_size(shape) != value.size())
        throw ShapeError("value length " + std::to_string(value.size()) +
                         " does not fill " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return Tensor(std::move(n));
}

Tensor constant(Shape shape, std::vector<double> value) {
    return fresh(std::move(shape), std::move(value));
}

Tensor constant(double v) { return fresh({1}, {v}); }

Tensor zeros(Shape shape) {
    std::vector<double> v(shape_size(shape), 0.0);
    return fresh(std::move(shape), std::move(v));
}

Tensor full(Shape shape, double x) {
    std::vector<double> v(shape_size(shape), x);
    return fresh(std::move(shape), std::move(v));
}

Tensor param(Shape shape, std::vector<double> value) {
    Tensor t = fresh(std::move(shape), std::move(value));
    t.node().requires_grad = true;
    return t;
}

Tensor zeros_param(Shape shape) {
    std::vector<double> v(shape_size(shape), 0.0);
    return param(std::move(shape), std::move(v));
}

Tensor randn_param(Shape shape, Rng& rng, double scale) {
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = scale * rng.normal();
    return param(std::move(shape), std::move(v));
}

// Wires the tape edge only when grad is enabled and some input needs it.
static Tensor make_op(Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs,
                      std::function<void(Node&)> backprop) {
    Tensor out = fresh(std::move(shape), std::move(value));
    if (!grad_enabled()) return out;
    bool need = false;
    for (const auto& t : inputs) need = need || t.node().requires_grad;
    if (!need) return out;
    Node& n = out.node();
    n.requires_grad = true;
    n.parents.reserve(inputs.size());
    for (auto& t : inputs) n.parents.push_back(t.ptr());
    n.backprop = std::move(backprop);
    return out;
}

static void same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    same_shape(a, b, "add");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
    auto pa = a.ptr(), pb = b.ptr();
    return make_op(a.shape(), std::move(v), {a, b}, [pa, pb](Node& out) {
        if (pa->requires_grad) {
            ensure_grad(*pa);
            for (std::size_t i = 0; i < out.grad.size(); ++i) pa->grad[i] += out.grad[i];
        }
        if (pb->requires_grad) {
            ensure_grad(*pb);
            for (std::size_t i = 0; i < out.grad.size(); ++i) pb->grad[i] += out.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    same_shape(a, b, "sub");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
    auto pa = a.ptr(), pb = b.ptr();
    return make_op(a.shape(), std::move(v), {a, b}, [pa, pb](Node& out) {
        if (pa->requires_grad) {
            ensure_grad(*pa);
            for (std::size_t i = 0; i < out.grad.size(); ++i) pa->grad[i] += out.grad[i];
        }
        if (pb->requires_grad) {
            ensure_grad(*pb);
            for (std::size_t i = 0; i < out.grad.size(); ++i) pb->grad[i] -= out.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    same_shape(a, b, "mul");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
    auto pa = a.ptr(), pb = b.ptr();
    return make_op(a.shape(), std::move(v), {a, b}, [pa, pb](Node& out) {
        if (pa->requires_grad) {
            ensure_grad(*pa);
            for (std::size_t i = 0; i < out.grad.size(); ++i)
                pa->grad[i] += out.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            ensure_grad(*pb);
            for (std::size_t i = 0; i < out.grad.size(); ++i)
                pb->grad[i] += out.grad[i] * pa->value[i];
        }
    });
}

Tensor divide(const Tensor& a, const Tensor& b) {
    same_shape(a, b, "divide");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (b[i] == 0.0) throw NumericError("divide: zero denominator");
        v[i] = a[i] / b[i];
    }
    auto pa = a.ptr(), pb = b.ptr();
    return make_op(a.shape(), std::move(v), {a, b}, [pa, pb](Node& out) {
        if (pa->requires_grad) {
            ensure_grad(*pa);
            for (std::size_t i = 0; i < out.grad.size(); ++i)
                pa->grad[i] += out.grad[i] / pb->value[i];
        }
        if (pb->requires_grad) {
            ensure_grad(*pb);
            for (std::size_t i = 0; i < out.grad.size(); ++i)
                pb->grad[i] -= out.grad[i] * pa->value[i] / (pb->value[i] * pb->value[i]);
        }
    });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + c;
    auto pa = a.ptr();
    return make_op(a.shape(), std::move(v), {a}, [pa](Node& out) {
        ensure_grad(*pa);
        for (std::size_t i = 0; i < out.grad.size(); ++i) pa->grad[i] += out.grad[i];
    });
}

Tensor mul_scalar(const Tensor& a, double c) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * c;
    auto pa = a.ptr();
    return make_op(a.shape(), std::move(v), {a}, [pa, c](Node& out) {
        ensure_grad(*pa);
        for (std::size_t i = 0; i < out.grad.size(); ++i) pa->grad[i] += c * out.grad[i];
    });
}

static void matrix_vs_vec(const Tensor& m, const Tensor& v, std::size_t need,
                          const char* op) {
    if (m.shape().size() != 2 || v.shape().size() != 1 || v.shape()[0] != need)
        throw ShapeError(std::string(op) + ": " + shape_str(m.shape()) +
                         " with " + shape_str(v.shape()));
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    matrix_vs_vec(m, v, m.cols(), "add_rowvec");
    const std::size_t R = m.rows(), C = m.cols();
    std::vector<double> out(m.size());
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[r * C + c] = m[r * C + c] + v[c];
    auto pm = m.ptr(), pv = v.ptr();
    return make_op(m.shape(), std::move(out), {m, v}, [pm, pv, R, C](Node& o) {
        if (pm->requires_grad) {
            ensure_grad(*pm);
            for (std::size_t i = 0; i < o.grad.size(); ++i) pm->grad[i] += o.grad[i];
        }
        if (pv->requires_grad) {
            ensure_grad(*pv);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c) pv->grad[c] += o.grad[r * C + c];
        }
    });
}

Tensor mul_rowvec(const Tensor& m, const Tensor& v) {
    matrix_vs_vec(m, v, m.cols(), "mul_rowvec");
    const std::size_t R = m.rows(), C = m.cols();
    std::vector<double> out(m.size());
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[r * C + c] = m[r * C + c] * v[c];
    auto pm = m.ptr(), pv = v.ptr();
    return make_op(m.shape(), std::move(out), {m, v}, [pm, pv, R, C](Node& o) {
        if (pm->requires_grad) {
            ensure_grad(*pm);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c)
                    pm->grad[r * C + c] += o.grad[r * C + c] * pv->value[c];
        }
        if (pv->requires_grad) {
            ensure_grad(*pv);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c)
                    pv->grad[c] += o.grad[r * C + c] * pm->value[r * C + c];
        }
    });
}

Tensor add_colvec(const Tensor& m, const Tensor& v) {
    matrix_vs_vec(m, v, m.rows(), "add_colvec");
    const std::size_t R = m.rows(), C = m.cols();
    std::vector<double> out(m.size());
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[r * C + c] = m[r * C + c] + v[r];
    auto pm = m.ptr(), pv = v.ptr();
    return make_op(m.shape(), std::move(out), {m, v}, [pm, pv, R, C](Node& o) {
        if (pm->requires_grad) {
            ensure_grad(*pm);
            for (std::size_t i = 0; i < o.grad.size(); ++i) pm->grad[i] += o.grad[i];
        }
        if (pv->requires_grad) {
            ensure_grad(*pv);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c) pv->grad[r] += o.grad[r * C + c];
        }
    });
}

Tensor mul_colvec(const Tensor& m, const Tensor& v) {
    matrix_vs_vec(m, v, m.rows(), "mul_colvec");
    const std::size_t R = m.rows(), C = m.cols();
    std::vector<double> out(m.size());
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[r * C + c] = m[r * C + c] * v[r];
    auto pm = m.ptr(), pv = v.ptr();
    return make_op(m.shape(), std::move(out), {m, v}, [pm, pv, R, C](Node& o) {
        if (pm->requires_grad) {
            ensure_grad(*pm);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c)
                    pm->grad[r * C + c] += o.grad[r * C + c] * pv->value[r];
        }
        if (pv->requires_grad) {
            ensure_grad(*pv);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c)
                    pv->grad[r] += o.grad[r * C + c] * pm->value[r * C + c];
        }
    });
}

// ---- transcendental ----

Tensor exp_t(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(a[i]);
    auto pa = a.ptr();
    return make_op(a.shape(), std::move(v), {a}, [pa](Node& out) {
        ensure_grad(*pa);
        for (std::size_t i = 0; i < out.grad.size(); ++i)
            pa->grad[i] += out.grad[i] * out.value[i];
    });
}

Tensor log_t(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (a[i] <= 0.0) throw NumericError("log of non-positive value");
        v[i] = std::log(a[i]);
    }
    auto pa = a.ptr();
    return make_op(a.shape(), std::move(v), {a}, [pa](Node& out) {
        ensure_grad(*pa);
        for (std::size_t i = 0; i < out.grad.size(); ++i)
            pa->grad[i] += out.grad[i] / pa->value[i];
    });
}

Tensor sqrt_t(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (a[i] < 0.0) throw NumericError("sqrt of negative value");
        v[i] = std::sqrt(a[i]);
    }
    auto pa = a.ptr();
    return make_op(a.shape(), std::move(v), {a}, [pa](Node& out) {
        ensure_grad(*pa);
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            if (out.value[i] == 0.0)
                throw NumericError("sqrt gradient at zero");
            pa->grad[i] += out.grad[i] * 0.5 / out.value[i];
        }
    });
}

Tensor softplus(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = std::log1p(std::exp(-std::fabs(a[i]))) + std::max(a[i], 0.0);
    auto pa = a.ptr();
    return make_op(a.shape(), std::move(v), {a}, [pa](Node& out) {
        ensure_grad(*pa);
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-pa->value[i]));
            pa->grad[i] += out.grad[i] * s;
        }
    });
}

Tensor gelu(const Tensor& a) {
    static const double inv_sqrt2 = 0.7071067811865475244;
    static const double inv_sqrt2pi = 0.3989422804014326779;
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = a[i] * 0.5 * (1.0 + std::erf(a[i] * inv_sqrt2));
    auto pa = a.ptr();
    return make_op(a.shape(), std::move(v), {a}, [pa](Node& out) {
        ensure_grad(*pa);
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            const double x = pa->value[i];
            const double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double dens = inv_sqrt2pi * std::exp(-0.5 * x * x);
            pa->grad[i] += out.grad[i] * (phi + x * dens);
        }
    });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows())
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::size_t M = a.rows(), K = a.cols(), N = b.cols();
    std::vector<double> out(M * N, 0.0);
    {
        const auto& A = a.value();
        const auto& B = b.value();
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t k = 0; k < K; ++k) {
                const double aik = A[i * K + k];
                if (aik == 0.0) continue;
                const double* brow = &B[k * N];
                double* orow = &out[i * N];
                for (std::size_t j = 0; j < N; ++j) orow[j] += aik * brow[j];
            }
    }
    auto pa = a.ptr(), pb = b.ptr();
    return make_op({M, N}, std::move(out), {a, b}, [pa, pb, M, K, N](Node& o) {
        if (pa->requires_grad) {
            ensure_grad(*pa);
            // dA = dOut * B^T
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t j = 0; j < N; ++j) {
                    const double g = o.grad[i * N + j];
                    if (g == 0.0) continue;
                    for (std::size_t k = 0; k < K; ++k)
                        pa->grad[i * K + k] += g * pb->value[k * N + j];
                }
        }
        if (pb->requires_grad) {
            ensure_grad(*pb);
            // dB = A^T * dOut
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t k = 0; k < K; ++k) {
                    const double aik = pa->value[i * K + k];
                    if (aik == 0.0) continue;
                    for (std::size_t j = 0; j < N; ++j)
                        pb->grad[k * N + j] += aik * o.grad[i * N + j];
                }
        }
    });
}

Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2)
        throw ShapeError("transpose: " + shape_str(a.shape()));
    const std::size_t R = a.rows(), C = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[c * R + r] = a[r * C + c];
    auto pa = a.ptr();
    return make_op({C, R}, std::move(out), {a}, [pa, R, C](Node& o) {
        ensure_grad(*pa);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c)
                pa->grad[r * C + c] += o.grad[c * R + r];
    });
}

// ---- row ops ----

static void need_matrix(const Tensor& x, const char* op) {
    if (x.shape().size() != 2)
        throw ShapeError(std::string(op) + ": want matrix, got " +
                         shape_str(x.shape()));
}

Tensor softmax_rows(const Tensor& x) {
    need_matrix(x, "softmax_rows");
    const std::size_t R = x.rows(), C = x.cols();
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < R; ++r) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < C; ++c) m = std::max(m, x[r * C + c]);
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            out[r * C + c] = std::exp(x[r * C + c] - m);
            s += out[r * C + c];
        }
        for (std::size_t c = 0; c < C; ++c) out[r * C + c] /= s;
    }
    auto px = x.ptr();
    return make_op(x.shape(), std::move(out), {x}, [px, R, C](Node& o) {
        ensure_grad(*px);
        for (std::size_t r = 0; r < R; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < C; ++c)
                dot += o.grad[r * C + c] * o.value[r * C + c];
            for (std::size_t c = 0; c < C; ++c)
                px->grad[r * C + c] +=
                    o.value[r * C + c] * (o.grad[r * C + c] - dot);
        }
    });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, double eps) {
    need_matrix(x, "layer_norm_rows");
    matrix_vs_vec(x, gamma, x.cols(), "layer_norm_rows gamma");
    matrix_vs_vec(x, beta, x.cols(), "layer_norm_rows beta");
    const std::size_t R = x.rows(), C = x.cols();
    std::vector<double> out(x.size());
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_sd = std::make_shared<std::vector<double>>(R);
    for (std::size_t r = 0; r < R; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < C; ++c) mean += x[r * C + c];
        mean /= static_cast<double>(C);
        double var = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            const double d = x[r * C + c] - mean;
            var += d * d;
        }
        var /= static_cast<double>(C);
        const double isd = 1.0 / std::sqrt(var + eps);
        (*inv_sd)[r] = isd;
        for (std::size_t c = 0; c < C; ++c) {
            const double h = (x[r * C + c] - mean) * isd;
            (*xhat)[r * C + c] = h;
            out[r * C + c] = gamma[c] * h + beta[c];
        }
    }
    auto px = x.ptr(), pg = gamma.ptr(), pb = beta.ptr();
    return make_op(x.shape(), std::move(out), {x, gamma, beta},
                   [px, pg, pb, xhat, inv_sd, R, C](Node& o) {
        if (pg->requires_grad) {
            ensure_grad(*pg);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c)
                    pg->grad[c] += o.grad[r * C + c] * (*xhat)[r * C + c];
        }
        if (pb->requires_grad) {
            ensure_grad(*pb);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c)
                    pb->grad[c] += o.grad[r * C + c];
        }
        if (px->requires_grad) {
            ensure_grad(*px);
            for (std::size_t r = 0; r < R; ++r) {
                double mean_dh = 0.0, mean_dh_h = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    const double dh = o.grad[r * C + c] * pg->value[c];
                    mean_dh += dh;
                    mean_dh_h += dh * (*xhat)[r * C + c];
                }
                mean_dh /= static_cast<double>(C);
                mean_dh_h /= static_cast<double>(C);
                for (std::size_t c = 0; c < C; ++c) {
                    const double dh = o.grad[r * C + c] * pg->value[c];
                    px->grad[r * C + c] +=
                        (*inv_sd)[r] *
                        (dh - mean_dh - (*xhat)[r * C + c] * mean_dh_h);
                }
            }
        }
    });
}

Tensor row_sum(const Tensor& x) {
    need_matrix(x, "row_sum");
    const std::size_t R = x.rows(), C = x.cols();
    std::vector<double> out(R, 0.0);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[r] += x[r * C + c];
    auto px = x.ptr();
    return make_op({R}, std::move(out), {x}, [px, R, C](Node& o) {
        ensure_grad(*px);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) px->grad[r * C + c] += o.grad[r];
    });
}

Tensor col_sum(const Tensor& x) {
    need_matrix(x, "col_sum");
    const std::size_t R = x.rows(), C = x.cols();
    std::vector<double> out(C, 0.0);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[c] += x[r * C + c];
    auto px = x.ptr();
    return make_op({C}, std::move(out), {x}, [px, R, C](Node& o) {
        ensure_grad(*px);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) px->grad[r * C + c] += o.grad[c];
    });
}

// ---- structure ----

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
    auto px = x.ptr();
    return make_op(std::move(shape), x.value(), {x}, [px](Node& o) {
        ensure_grad(*px);
        for (std::size_t i = 0; i < o.grad.size(); ++i) px->grad[i] += o.grad[i];
    });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    need_matrix(a, "concat_rows");
    need_matrix(b, "concat_rows");
    if (a.cols() != b.cols())
        throw ShapeError("concat_rows: column mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t C = a.cols(), Ra = a.rows(), Rb = b.rows();
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.value().begin(), a.value().end());
    out.insert(out.end(), b.value().begin(), b.value().end());
    auto pa = a.ptr(), pb = b.ptr();
    return make_op({Ra + Rb, C}, std::move(out), {a, b},
                   [pa, pb, Ra, Rb, C](Node& o) {
        if (pa->requires_grad) {
            ensure_grad(*pa);
            for (std::size_t i = 0; i < Ra * C; ++i) pa->grad[i] += o.grad[i];
        }
        if (pb->requires_grad) {
            ensure_grad(*pb);
            for (std::size_t i = 0; i < Rb * C; ++i)
                pb->grad[i] += o.grad[Ra * C + i];
        }
    });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    need_matrix(a, "concat_cols");
    need_matrix(b, "concat_cols");
    if (a.rows() != b.rows())
        throw ShapeError("concat_cols: row mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    const std::size_t R = a.rows(), Ca = a.cols(), Cb = b.cols();
    std::vector<double> out(R * (Ca + Cb));
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < Ca; ++c)
            out[r * (Ca + Cb) + c] = a[r * Ca + c];
        for (std::size_t c = 0; c < Cb; ++c)
            out[r * (Ca + Cb) + Ca + c] = b[r * Cb + c];
    }
    auto pa = a.ptr(), pb = b.ptr();
    return make_op({R, Ca + Cb}, std::move(out), {a, b},
                   [pa, pb, R, Ca, Cb](Node& o) {
        for (std::size_t r = 0; r < R; ++r) {
            if (pa->requires_grad) {
                ensure_grad(*pa);
                for (std::size_t c = 0; c < Ca; ++c)
                    pa->grad[r * Ca + c] += o.grad[r * (Ca + Cb) + c];
            }
            if (pb->requires_grad) {
                ensure_grad(*pb);
                for (std::size_t c = 0; c < Cb; ++c)
                    pb->grad[r * Cb + c] += o.grad[r * (Ca + Cb) + Ca + c];
            }
        }
    });
}

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
    need_matrix(x, "slice_rows");
    if (r0 >= r1 || r1 > x.rows())
        throw RangeError("slice_rows [" + std::to_string(r0) + "," +
                         std::to_string(r1) + ") of " + shape_str(x.shape()));
    const std::size_t C = x.cols();
    std::vector<double> out(x.value().begin() + r0 * C,
                            x.value().begin() + r1 * C);
    auto px = x.ptr();
    return make_op({r1 - r0, C}, std::move(out), {x}, [px, r0, C](Node& o) {
        ensure_grad(*px);
        for (std::size_t i = 0; i < o.grad.size(); ++i)
            px->grad[r0 * C + i] += o.grad[i];
    });
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
    need_matrix(x, "slice_cols");
    if (c0 >= c1 || c1 > x.cols())
        throw RangeError("slice_cols [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") of " + shape_str(x.shape()));
    const std::size_t R = x.rows(), C = x.cols(), W = c1 - c0;
    std::vector<double> out(R * W);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < W; ++c) out[r * W + c] = x[r * C + c0 + c];
    auto px = x.ptr();
    return make_op({R, W}, std::move(out), {x}, [px, R, C, c0, W](Node& o) {
        ensure_grad(*px);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < W; ++c)
                px->grad[r * C + c0 + c] += o.grad[r * W + c];
    });
}

Tensor embed_rows(const Tensor& table, const std::vector<int>& ids) {
    need_matrix(table, "embed_rows");
    const std::size_t V = table.rows(), C = table.cols();
    std::vector<double> out(ids.size() * C);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V)
            throw RangeError("embed_rows: id " + std::to_string(ids[i]) +
                             " outside table of " + std::to_string(V));
        for (std::size_t c = 0; c < C; ++c)
            out[i * C + c] = table[static_cast<std::size_t>(ids[i]) * C + c];
    }
    auto pt = table.ptr();
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    return make_op({ids.size(), C}, std::move(out), {table},
                   [pt, ids_copy, C](Node& o) {
        ensure_grad(*pt);
        for (std::size_t i = 0; i < ids_copy->size(); ++i) {
            const std::size_t r = static_cast<std::size_t>((*ids_copy)[i]);
            for (std::size_t c = 0; c < C; ++c)
                pt->grad[r * C + c] += o.grad[i * C + c];
        }
    });
}

Tensor pick_cols(const Tensor& x, const std::vector<int>& ids) {
    need_matrix(x, "pick_cols");
    if (ids.size() != x.rows())
        throw ShapeError("pick_cols: need one index per row");
    const std::size_t C = x.cols();
    std::vector<double> out(ids.size());
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= C)
            throw RangeError("pick_cols: index " + std::to_string(ids[r]));
        out[r] = x[r * C + static_cast<std::size_t>(ids[r])];
    }
    auto px = x.ptr();
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    return make_op({ids.size()}, std::move(out), {x},
                   [px, ids_copy, C](Node& o) {
        ensure_grad(*px);
        for (std::size_t r = 0; r < ids_copy->size(); ++r)
            px->grad[r * C + static_cast<std::size_t>((*ids_copy)[r])] +=
                o.grad[r];
    });
}

// ---- reductions ----

Tensor reduce_sum(const Tensor& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
    auto px = x.ptr();
    return make_op({1}, {s}, {x}, [px](Node& o) {
        ensure_grad(*px);
        for (auto& g : px->grad) g += o.grad[0];
    });
}

Tensor reduce_mean(const Tensor& x) {
    return mul_scalar(reduce_sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor detach(const Tensor& x) { return constant(x.shape(), x.value()); }

// ---- composites ----

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul(x, w), b);
}

Tensor log_softmax_rows(const Tensor& x) {
    need_matrix(x, "log_softmax_rows");
    const std::size_t R = x.rows(), C = x.cols();
    // Row max as a constant shift; the dependence cancels exactly, so the
    // gradient of the shifted expression is still the full gradient.
    std::vector<double> mv(R, -std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) mv[r] = std::max(mv[r], x[r * C + c]);
    Tensor shifted = add_colvec(x, constant({R}, [&] {
        std::vector<double> neg_m(R);
        for (std::size_t r = 0; r < R; ++r) neg_m[r] = -mv[r];
        return neg_m;
    }()));
    Tensor lse = log_t(row_sum(exp_t(shifted)));
    return add_colvec(shifted, neg(lse));
}

Tensor cross_entropy_logits(const Tensor& logits,
                            const std::vector<int>& labels) {
    Tensor lsm = log_softmax_rows(logits);
    Tensor picked = pick_cols(lsm, labels);
    return neg(reduce_mean(picked));
}

Tensor sum_squares(const Tensor& x) { return reduce_sum(mul(x, x)); }

Tensor dropout(const Tensor& x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0)
        throw RangeError("dropout probability " + std::to_string(p));
    if (p == 0.0) return x;
    const double keep = 1.0 - p;
    std::vector<double> mask(x.size());
    for (auto& m : mask) m = (rng.uniform() < p) ? 0.0 : 1.0 / keep;
    return mul(x, constant(x.shape(), std::move(mask)));
}

// ---- autodiff driver ----

void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw ContractError("backward() needs a scalar loss, got " +
                            shape_str(loss.shape()));
    Node* root = &loss.node();
    if (!root->requires_grad) return;

    // Iterative post-order DFS for reverse topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.push_back({root, 0});
    seen.insert(root);
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second)
                stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    ensure_grad(*root);
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) {
            ensure_grad(*n);
            n->backprop(*n);
        }
    }
}

void zero_grads(const std::vector<Tensor>& params) {
    for (const auto& p : params) {
        Tensor t = p;
        t.zero_grad();
    }
}

std::size_t param_count(const std::vector<Tensor>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.size();
    return n;
}

void check_finite(const std::vector<double>& v, const std::string& where) {
    for (double x : v)
        if (!std::isfinite(x))
            throw NumericError("non-finite value in " + where);
}

void check_finite(const Tensor& t, const std::string& where) {
    check_finite(t.value(), where);
}

} // namespace diffcal
