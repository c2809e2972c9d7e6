#pragma once

// AdamW with decoupled weight decay, bias-corrected moments, float64 state.

#include <cmath>
#include <vector>

#include "util.hpp"

namespace zoomvla {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg, size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::vector<double>& w, const std::vector<double>& g) {
        t_ += 1;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < w.size(); ++i) {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g[i];
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            double mhat = m_[i] / bc1;
            double vhat = v_[i] / bc2;
            w[i] -= cfg_.learning_rate * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
            if (!std::isfinite(w[i])) {
                throw NumericalFault("non-finite parameter after optimizer step");
            }
        }
    }

private:
    AdamWConfig cfg_;
    std::vector<double> m_, v_;
    int64_t t_ = 0;
};

inline double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return std::sqrt(s);
}

} // namespace zoomvla
