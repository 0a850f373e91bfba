#pragma once

// RMSProp with global gradient-norm clipping, plus the linear exploration
// schedule. The single-block update is a free function so its arithmetic can
// be pinned down in isolation.

#include <cmath>
#include <span>
#include <vector>

#include "ldsa/errors.hpp"
#include "ldsa/params.hpp"

namespace ldsa {

struct RmsPropConfig {
    double lr = 5e-4;
    double alpha = 0.99;  // squared-gradient decay
    double eps = 1e-5;
};

// v <- alpha v + (1 - alpha) g^2 ; p <- p - lr g / (sqrt(v) + eps)
inline void rmsprop_update(std::span<double> p, std::span<const double> g, std::span<double> v,
                           const RmsPropConfig& cfg) {
    if (p.size() != g.size() || p.size() != v.size()) {
        throw ShapeError("rmsprop_update: parameter, gradient and state sizes disagree: " +
                         std::to_string(p.size()) + ", " + std::to_string(g.size()) + ", " +
                         std::to_string(v.size()));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = cfg.alpha * v[i] + (1.0 - cfg.alpha) * g[i] * g[i];
        p[i] -= cfg.lr * g[i] / (std::sqrt(v[i]) + cfg.eps);
    }
}

// Scales all gradients by max_norm / norm when the global L2 norm exceeds
// max_norm; otherwise leaves them untouched. Returns the pre-clip norm.
inline double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads) {
        for (double v : g) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& g : grads) {
            for (double& v : g) v *= scale;
        }
    }
    return norm;
}

class RmsProp {
public:
    RmsProp(const ParamStore& store, RmsPropConfig cfg) : cfg_(cfg) {
        state_.reserve(static_cast<std::size_t>(store.block_count()));
        for (int i = 0; i < store.block_count(); ++i) {
            state_.emplace_back(store.block(i).value.size(), 0.0);
        }
    }

    void step(ParamStore& store, const std::vector<std::vector<double>>& grads) {
        if (static_cast<int>(grads.size()) != store.block_count()) {
            throw ShapeError("RmsProp: gradient count " + std::to_string(grads.size()) +
                             " does not match block count " + std::to_string(store.block_count()));
        }
        for (int i = 0; i < store.block_count(); ++i) {
            rmsprop_update(store.block(i).value, grads[static_cast<std::size_t>(i)],
                           state_[static_cast<std::size_t>(i)], cfg_);
        }
    }

    const std::vector<std::vector<double>>& state() const { return state_; }
    std::vector<std::vector<double>>& state() { return state_; }
    const RmsPropConfig& config() const { return cfg_; }

private:
    RmsPropConfig cfg_;
    std::vector<std::vector<double>> state_;
};

// Linear decay from start to end over anneal_time environment steps, constant
// afterwards.
struct EpsilonSchedule {
    double start = 1.0;
    double end = 0.05;
    long anneal_time = 50000;

    double value(long t) const {
        if (anneal_time <= 0) return end;
        double frac = static_cast<double>(t) / static_cast<double>(anneal_time);
        if (frac >= 1.0) return end;
        if (frac < 0.0) frac = 0.0;
        return start - (start - end) * frac;
    }
};

}  // namespace ldsa
