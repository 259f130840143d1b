#pragma once

#include <iosfwd>
#include <vector>

#include "diffcal/kernel.hpp"
#include "diffcal/path.hpp"

namespace diffcal {

// Exact KL(N(p_mean, F F^T) || N(q_mean, diag(q_scale^2))) for a dense k x k
// factor F. Throws NumericError when F is singular or a q_scale entry is not
// strictly positive.
double kl_gaussian(const std::vector<double>& p_mean,
                   const std::vector<double>& p_factor,
                   const std::vector<double>& q_mean,
                   const std::vector<double>& q_scale);

// Same KL when both sides are diagonal; p_var holds variances.
double kl_gaussian_diag(const std::vector<double>& p_mean,
                        const std::vector<double>& p_var,
                        const std::vector<double>& q_mean,
                        const std::vector<double>& q_scale);

// log N(x | mean, diag(scale^2))
double diag_gaussian_logpdf(const std::vector<double>& x,
                            const std::vector<double>& mean,
                            const std::vector<double>& scale);

// Chain interface for the bound estimator; the trained path implements it,
// and synthetic chains can be injected for analysis.
class TransitionProvider {
public:
    virtual ~TransitionProvider() = default;
    virtual int depth() const = 0;
    virtual GaussianTransition transition(int t, const Tensor& x_t) const = 0;
};

class PathProvider : public TransitionProvider {
public:
    explicit PathProvider(const ProbabilityPath& p) : path_(&p) {}
    int depth() const override { return path_->depth(); }
    GaussianTransition transition(int t, const Tensor& x_t) const override {
        return transition_eval(*path_, t, x_t);
    }

private:
    const ProbabilityPath* path_;
};

// Monte-Carlo estimates of the chain cross-entropy (nll) and of the
// KL-decomposition bound, each with a standard error over chains. When every
// step of the source chain is deterministic, point masses carry no density:
// nll_available flips off and only the bound (cross-entropy under the point
// convention) is meaningful. kl_exact reports whether dense per-step KLs
// succeeded or the diagonal approximation had to stand in.
struct VlbEstimate {
    double nll = 0.0, nll_se = 0.0;
    double bound = 0.0, bound_se = 0.0;
    bool nll_available = true;
    bool kl_exact = true;
    int mc_samples = 0;
};

VlbEstimate vlb_gap(const TransitionProvider& p, const TransitionKernel& q,
                    const Tensor& x_top, int mc_samples, Rng& rng);

// ---- matching losses (tape-built; the chain targets enter as constants) ----

// || m_theta(X_t, t) - m_t ||^2 for one step.
Tensor loss_mean_step(const TransitionKernel& q, const Tensor& x_t, int t,
                      const GaussianTransition& p_t, Rng* drop_rng);
// || scale_theta(X_t, t) - sqrt(diag cov_t) ||^2 for one step.
Tensor loss_chol_step(const TransitionKernel& q, const Tensor& x_t, int t,
                      const GaussianTransition& p_t, Rng* drop_rng);

// Averages over every step of a simulated trace.
Tensor loss_mean(const PathTrace& trace, const TransitionKernel& q);
// Throws ContractError when the trace carries no noise (nothing to match).
Tensor loss_cholesky(const PathTrace& trace, const TransitionKernel& q);

// Cross-entropy of the solution head on a kernel-generated X_0.
Tensor loss_perf(const ProbabilityPath& path, const TransitionKernel& q,
                 const Sample& s, Rng& noise_rng, Rng* drop_rng);

struct DistillConfig {
    int epochs = 40;
    int batch_size = 32;
    AdamConfig adam;
    LrSchedule sched;
    double lambda_mean = 0.8;
    double lambda_chol = 0.0;
    double lambda_nll = 0.2;
    int bound_inputs = 4;  // inputs used for the closing bound estimate
    int bound_chains = 16; // chains per input
    int log_every = 10;
};

struct DistillReport {
    std::vector<double> epoch_mean;
    std::vector<double> epoch_chol;
    std::vector<double> epoch_nll;
    std::vector<double> epoch_total;
    double final_bound = 0.0;
    double final_bound_se = 0.0;
    bool bound_kl_exact = true;
    bool lambda_chol_forced_zero = false;
    std::size_t kernel_params = 0;
    std::size_t backbone_params = 0;
    double wall_seconds = 0.0;
};

// Fits the kernel against frozen path targets: per batch element one
// uniformly drawn timestep of a freshly simulated trace for the matching
// terms, plus the generated-chain cross-entropy. The backbone weights are
// checksummed before and after; any drift is a hard error.
DistillReport distill_train(const ProbabilityPath& path, TransitionKernel& q,
                            const Dataset& train, const DistillConfig& dc,
                            Rng& rng, std::ostream* log);

} // namespace diffcal
