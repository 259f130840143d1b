#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "diffcal/errors.hpp"
#include "diffcal/rng.hpp"

namespace diffcal {

// Row-major shapes: {n} is a vector, {r, c} a matrix, {1} a scalar.
using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until touched by backward()
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Pulls this node's grad into the parents' grads. Null for leaves.
    std::function<void(Node&)> backprop;
};

// Cheap handle onto a tape node; copies share the node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node().shape; }
    std::size_t size() const { return node().value.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::vector<double>& value() { return node().value; }
    const std::vector<double>& value() const { return node().value; }
    std::vector<double>& grad();
    bool requires_grad() const { return node().requires_grad; }

    double operator[](std::size_t i) const { return node().value[i]; }
    double at(std::size_t r, std::size_t c) const;
    // Value of a scalar ({1}) tensor.
    double item() const;

    void zero_grad();

    Node& node() const;
    std::shared_ptr<Node> ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// While a guard is alive, new ops record no parents and no backward closures,
// so forward passes over parameter tensors build no tape. Nestable.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// ---- construction ----
Tensor constant(Shape shape, std::vector<double> value);
Tensor constant(double v); // scalar {1}
Tensor zeros(Shape shape);
Tensor full(Shape shape, double v);
// Leaf with requires_grad set; the unit the optimizer updates.
Tensor param(Shape shape, std::vector<double> value);
Tensor zeros_param(Shape shape);
// Gaussian init, scale * N(0,1) per entry.
Tensor randn_param(Shape shape, Rng& rng, double scale);

// ---- elementwise / broadcast ----
Tensor add(const Tensor& a, const Tensor& b);       // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);    // b entries nonzero
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor add_rowvec(const Tensor& m, const Tensor& v); // m {N,d} + v {d} per row
Tensor mul_rowvec(const Tensor& m, const Tensor& v);
Tensor add_colvec(const Tensor& m, const Tensor& v); // m {N,d} + v {N} per col
Tensor mul_colvec(const Tensor& m, const Tensor& v);

Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);      // domain x > 0
Tensor sqrt_t(const Tensor& a);     // domain x >= 0
Tensor softplus(const Tensor& a);   // log(1 + e^x), overflow-safe
Tensor gelu(const Tensor& a);       // exact erf form

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b); // {m,k} x {k,n}
Tensor transpose(const Tensor& a);

// ---- rows/cols ----
Tensor softmax_rows(const Tensor& x); // max-subtracted, rows sum to 1
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, double eps = 1e-5);
Tensor row_sum(const Tensor& x);  // {N,d} -> {N}
Tensor col_sum(const Tensor& x);  // {N,d} -> {d}

// ---- structure ----
Tensor reshape(const Tensor& x, Shape shape); // same element count
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1); // [r0,r1)
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
// rows of table selected by ids; backward scatters into the table
Tensor embed_rows(const Tensor& table, const std::vector<int>& ids);
// out[i] = x[i, ids[i]]
Tensor pick_cols(const Tensor& x, const std::vector<int>& ids);

// ---- reductions ----
Tensor reduce_sum(const Tensor& x);  // -> {1}
Tensor reduce_mean(const Tensor& x); // -> {1}

// Value copy with no tape history and no grad requirement.
Tensor detach(const Tensor& x);

// ---- composites ----
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor log_softmax_rows(const Tensor& x);
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels);
Tensor sum_squares(const Tensor& x); // reduce_sum(x*x)
// Inverted-dropout; p in [0,1). p == 0 is a passthrough.
Tensor dropout(const Tensor& x, double p, Rng& rng);

// ---- autodiff driver ----
// Seeds grad 1 on a scalar tensor and runs reverse topological order.
// Gradients accumulate across calls until explicitly zeroed.
void backward(const Tensor& loss);
void zero_grads(const std::vector<Tensor>& params);
std::size_t param_count(const std::vector<Tensor>& params);
void check_finite(const Tensor& t, const std::string& where);
void check_finite(const std::vector<double>& v, const std::string& where);

} // namespace diffcal
