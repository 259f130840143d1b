#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffcal/backbone.hpp"
#include "diffcal/data.hpp"

namespace diffcal {

// One step of the chain: X_{t-1} | X_t ~ N(mean, sum_k (w w^T) kron (B B^T))
// under token-major flattening (index = token * d_model + feature). The
// factor never materializes as a dense matrix during simulation; sampling
// adds (B_k eps_k) outer w_k per source.
struct GaussianTransition {
    int t = 0;
    Tensor mean; // {N, d_model}
    std::vector<NoiseSource> sources;

    bool stochastic() const { return !sources.empty(); }
    std::size_t dim() const { return mean.size(); }
    std::vector<double> cov_diag() const;  // flattened, token-major
    std::vector<double> cov_dense() const; // dim x dim; analysis only
    Tensor sample(Rng& rng) const;
};

// A view of a trained backbone as a chain of depth() Gaussian transitions
// from X_T (the embedding) down to X_0, ending in a deterministic solution
// head. Holds a pointer: the weights stay shared with the backbone, so the
// chain tracks any later weight change and costs no copy.
struct ProbabilityPath {
    const Backbone* backbone = nullptr;

    int depth() const;
    bool stochastic() const;
    const BackboneConfig& cfg() const;
};

ProbabilityPath repartition(const Backbone& bb);

Tensor path_embed(const ProbabilityPath& path, const Sample& s);
// t in [1, depth]; evaluates the transition out of state X_t.
GaussianTransition transition_eval(const ProbabilityPath& path, int t,
                                   const Tensor& x_t);
// Trailing feed-forward half of the first original block plus pooling and
// the classifier, applied to X_0.
Tensor path_head_logits(const ProbabilityPath& path, const Tensor& x0);

struct PathTrace {
    std::vector<Tensor> states; // X_T .. X_0, depth+1 entries
    std::vector<GaussianTransition> transitions; // entry i steps from t=T-i
    bool noise = false;
    std::uint64_t seed = 0;
    Tensor logits;
};

PathTrace simulate_path(const ProbabilityPath& path, const Tensor& x_top,
                        bool noise, Rng* rng);
Tensor path_logits_zero_noise(const ProbabilityPath& path, const Sample& s);

// Trace files reuse the weight-file format: states as named tensors plus a
// metadata block carrying t order, noise flag and seed.
void save_trace(const PathTrace& tr, const std::string& file,
                std::uint64_t seed);
PathTrace load_trace(const std::string& file);

// Agreement between chain states and the backbone's own intermediates on the
// same inputs. zero_noise entries compare the deterministic chain (expected
// to sit at 1 up to rounding); sampled entries average over draws.
struct LayerCorrelation {
    std::vector<double> zero_noise; // one per transition layer t=T..1
    std::vector<double> sampled;    // empty when the path is deterministic
};
LayerCorrelation correlation_diagnostic(const Backbone& bb,
                                        const ProbabilityPath& path,
                                        const std::vector<Sample>& samples,
                                        int n_draws, Rng& rng);

} // namespace diffcal
