// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "spm/matrix.hpp"

namespace spm {

/// Variance-preserving DDPM schedule over timesteps 1..T. alpha_bar(0) = 1.
class NoiseSchedule {
public:
    static NoiseSchedule linear(int steps, double beta_start, double beta_end);

    int steps() const noexcept { return static_cast<int>(betas_.size()); }
    double beta(int t) const;
    double alpha(int t) const { return 1.0 - beta(t); }
    double alpha_bar(int t) const;
    const std::vector<double>& betas() const noexcept { return betas_; }

    friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

private:
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;  // index t in [0, T]
};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise, row by row.
/// Throws ContractError when t is outside [0, T] or shapes differ.
template <typename T>
Matrix<T> forward_diffuse(const NoiseSchedule& schedule, const Matrix<T>& x0, int t,
                          const Matrix<T>& noise);

/// eps(x, t) for a whole batch; the conditioning is bound by the caller.
template <typename T>
using NoisePredictor = std::function<void(const Matrix<T>& x, int t, Matrix<T>& eps)>;

struct SamplerOptions {
    /// Number of reverse steps. Equal to T it is the ancestral DDPM chain; fewer
    /// steps take evenly strided jumps with the stochastic (eta = 1) DDIM update.
    int steps = 0;
    /// The chain stops once it reaches this timestep and returns x_{t_stop}.
    int t_stop = 0;
};

/// Reverse sampler starting from unit Gaussian noise. Row r draws every noise
/// value from its own stream derive_seed(seed, r), so a row does not depend on
/// the batch it is generated in. No noise is added on the final step to t = 0.
template <typename T>
Matrix<T> sample(const NoiseSchedule& schedule, const NoisePredictor<T>& predictor,
                 std::size_t rows, std::size_t dim, std::uint64_t seed,
                 const SamplerOptions& options = {});

/// Timesteps visited by the sampler, from T downwards, ending at t_stop.
std::vector<int> sampler_timesteps(const NoiseSchedule& schedule, const SamplerOptions& options);

}  // namespace spm
