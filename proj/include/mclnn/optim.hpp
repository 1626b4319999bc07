#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mclnn/network.hpp"

namespace mclnn {

inline double cross_entropy(const std::vector<double>& probs, int target) {
    if (target < 0 || target >= static_cast<int>(probs.size()))
        throw std::invalid_argument("cross_entropy: target class out of range");
    return -std::log(std::max(probs[target], 1e-12));
}

// ADAM with bias correction. Moments are allocated to mirror the model's
// parameter views; masked weight positions never accumulate moments because
// their gradients are exactly zero, and the mask is re-applied to the
// parameters after every step.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long t = 0;
    std::vector<std::vector<double>> m, v;

    static AdamState init(const std::vector<ParamView>& params, double lr = 1e-3) {
        AdamState s;
        s.lr = lr;
        for (const ParamView& p : params) {
            s.m.emplace_back(p.size, 0.0);
            s.v.emplace_back(p.size, 0.0);
        }
        return s;
    }
};

inline void adam_step(std::vector<ParamView>& params, const std::vector<const double*>& grads,
                      AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
    ++state.t;
    const double bc1 = 1.0 - std::pow(state.beta1, state.t);
    const double bc2 = 1.0 - std::pow(state.beta2, state.t);
    for (size_t p = 0; p < params.size(); ++p) {
        double* theta = params[p].data;
        const double* g = grads[p];
        std::vector<double>& m = state.m[p];
        std::vector<double>& v = state.v[p];
        for (size_t i = 0; i < params[p].size; ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
        if (params[p].mask) {
            const Matrix& mask = *params[p].mask;
            for (size_t i = 0; i < params[p].size; ++i)
                if (mask.at_linear(i) == 0.0) theta[i] = 0.0;
        }
    }
}

struct TrainConfig {
    int batch_size = 64;
    int max_epochs = 200;
    double lr = 1e-3;
    uint64_t seed = 1;
    int patience = 20;
    std::string checkpoint_path;
    int train_hop = 0; // 0 = q/2 (floored at 1)
    int eval_hop = 0;  // 0 = q

    void validate() const {
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs must be >= 1");
        if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
    }

    int effective_train_hop(int q) const { return train_hop > 0 ? train_hop : std::max(q / 2, 1); }
    int effective_eval_hop(int q) const { return eval_hop > 0 ? eval_hop : q; }
};

} // namespace mclnn
