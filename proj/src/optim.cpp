#include "diffcal/optim.hpp"

#include <cmath>
#include <string>

namespace diffcal {

double LrSchedule::lr_at(int epoch) const {
    if (epoch < 0) throw RangeError("lr_at: negative epoch");
    if (base_lr <= 0.0 || min_lr < 0.0 || min_lr > base_lr)
        throw ConfigError("lr schedule: need 0 <= min_lr <= base_lr, base_lr > 0");
    if (warmup_epochs < 0 || cycle_epochs < 1)
        throw ConfigError("lr schedule: warmup >= 0 and cycle >= 1");
    if (epoch < warmup_epochs)
        return base_lr * static_cast<double>(epoch + 1) /
               static_cast<double>(warmup_epochs);
    const int e = epoch - warmup_epochs;
    if (e >= cycle_epochs) return min_lr;
    const double frac =
        static_cast<double>(e) / static_cast<double>(cycle_epochs);
    return min_lr +
           0.5 * (base_lr - min_lr) * (1.0 + std::cos(3.14159265358979323846 * frac));
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        if (!p.requires_grad())
            throw ContractError("Adam given a tensor that is not a parameter");
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void Adam::step() { step(cfg_.lr); }

void Adam::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Node& n = params_[i].node();
        if (n.grad.size() != n.value.size())
            throw ContractError("Adam step before backward: parameter " +
                                std::to_string(i) + " has no gradient");
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < n.value.size(); ++j) {
            const double g = n.grad[j];
            if (!std::isfinite(g))
                throw NumericError("Adam: non-finite gradient");
            if (cfg_.weight_decay != 0.0)
                n.value[j] -= lr * cfg_.weight_decay * n.value[j];
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            n.value[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

} // namespace diffcal
