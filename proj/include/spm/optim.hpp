// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "spm/error.hpp"

namespace spm {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Decoupled weight decay; 0 gives plain Adam.
    double weight_decay = 0.0;
};

/// Adam with decoupled weight decay over a fixed list of parameter tensors.
/// Moment buffers are created on the first step and keyed by list position.
template <typename T>
class AdamW {
public:
    explicit AdamW(AdamOptions options = {}) : options_(options) {}

    void step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads,
              double lr) {
        if (params.size() != grads.size()) throw ContractError("optimizer parameter/gradient count mismatch");
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.size(), 0.0);
                v_.emplace_back(p.size(), 0.0);
            }
        }
        if (m_.size() != params.size()) throw ContractError("optimizer parameter list changed");
        ++t_;
        const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto p = params[i];
            auto g = grads[i];
            if (p.size() != g.size() || p.size() != m_[i].size()) {
                throw ContractError("optimizer tensor size changed");
            }
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double gj = static_cast<double>(g[j]);
                m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * gj;
                v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * gj * gj;
                double pj = static_cast<double>(p[j]) * (1.0 - lr * options_.weight_decay);
                pj -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
                p[j] = static_cast<T>(pj);
            }
        }
    }

    long steps_taken() const noexcept { return t_; }

private:
    AdamOptions options_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    long t_ = 0;
};

/// Learning-rate multiplier in [0, 1]: linear warmup over `warmup` steps, then
/// `cycles` cosine cycles with hard restarts over the remaining steps.
inline double cosine_restart_factor(long step, long total, long warmup, int cycles) {
    if (step < warmup) return static_cast<double>(step + 1) / static_cast<double>(warmup);
    const long rest = std::max(1L, total - warmup);
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(rest);
    const double phase = std::fmod(progress * std::max(1, cycles), 1.0);
    return 0.5 * (1.0 + std::cos(M_PI * phase));
}

/// Plain cosine decay from 1 to 0 over `total` steps.
inline double cosine_decay_factor(long step, long total) {
    return 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total)));
}

}  // namespace spm
