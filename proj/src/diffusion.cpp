// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "spm/diffusion.hpp"

#include <cmath>
#include <string>

#include "spm/error.hpp"
#include "spm/random.hpp"

namespace spm {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("noise schedule needs at least one step");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
        throw ConfigError("noise schedule betas must satisfy 0 < start <= end < 1");
    }
    NoiseSchedule s;
    s.betas_.resize(static_cast<std::size_t>(steps));
    s.alpha_bars_.resize(static_cast<std::size_t>(steps) + 1);
    s.alpha_bars_[0] = 1.0;
    for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
        s.betas_[i] = beta_start + (beta_end - beta_start) * frac;
        s.alpha_bars_[i + 1] = s.alpha_bars_[i] * (1.0 - s.betas_[i]);
    }
    return s;
}

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > steps()) {
        throw ContractError("timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(steps()) + "]");
    }
    return betas_[static_cast<std::size_t>(t) - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > steps()) {
        throw ContractError("timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(steps()) + "]");
    }
    return alpha_bars_[static_cast<std::size_t>(t)];
}

template <typename T>
Matrix<T> forward_diffuse(const NoiseSchedule& schedule, const Matrix<T>& x0, int t,
                          const Matrix<T>& noise) {
    if (noise.rows() != x0.rows() || noise.cols() != x0.cols()) {
        throw ContractError("noise shape does not match x0");
    }
    const double ab = schedule.alpha_bar(t);
    const T a = static_cast<T>(std::sqrt(ab));
    const T b = static_cast<T>(std::sqrt(1.0 - ab));
    Matrix<T> out(x0.rows(), x0.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a * x0.data()[i] + b * noise.data()[i];
    return out;
}

std::vector<int> sampler_timesteps(const NoiseSchedule& schedule, const SamplerOptions& options) {
    const int total = schedule.steps();
    if (options.t_stop < 0 || options.t_stop > total) {
        throw ContractError("sampler stop timestep " + std::to_string(options.t_stop) +
                            " outside [0, " + std::to_string(total) + "]");
    }
    const int span = total - options.t_stop;
    const int steps = options.steps <= 0 ? span : std::min(options.steps, span);
    std::vector<int> ts;
    ts.reserve(static_cast<std::size_t>(steps) + 1);
    for (int i = 0; i <= steps; ++i) {
        // Rounded even spacing; the endpoints are exact.
        const long num = static_cast<long>(span) * i;
        ts.push_back(total - static_cast<int>(steps == 0 ? 0 : (num + steps / 2) / steps));
    }
    return ts;
}

template <typename T>
Matrix<T> sample(const NoiseSchedule& schedule, const NoisePredictor<T>& predictor,
                 std::size_t rows, std::size_t dim, std::uint64_t seed,
                 const SamplerOptions& options) {
    const auto ts = sampler_timesteps(schedule, options);
    std::vector<Rng> streams;
    streams.reserve(rows);
    for (std::size_t r = 0; r < rows; ++r) streams.emplace_back(derive_seed(seed, r));

    Matrix<T> x(rows, dim);
    for (std::size_t r = 0; r < rows; ++r) streams[r].fill_normal(x.row(r));

    Matrix<T> eps(rows, dim);
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
        const int t = ts[i];
        const int s = ts[i + 1];
        predictor(x, t, eps);
        const double ab_t = schedule.alpha_bar(t);
        const double ab_s = schedule.alpha_bar(s);
        double mean_x;
        double mean_eps;
        double sigma;
        if (s == t - 1) {
            const double beta = schedule.beta(t);
            mean_x = 1.0 / std::sqrt(1.0 - beta);
            mean_eps = -beta / std::sqrt(1.0 - ab_t) * mean_x;
            sigma = std::sqrt(beta * (1.0 - ab_s) / (1.0 - ab_t));
        } else {
            const double var = (1.0 - ab_s) / (1.0 - ab_t) * (1.0 - ab_t / ab_s);
            const double dir = std::sqrt(std::max(0.0, 1.0 - ab_s - var));
            mean_x = std::sqrt(ab_s / ab_t);
            mean_eps = dir - std::sqrt(ab_s / ab_t) * std::sqrt(1.0 - ab_t);
            sigma = std::sqrt(var);
        }
        const bool add_noise = s > 0;
        const T cx = static_cast<T>(mean_x);
        const T ce = static_cast<T>(mean_eps);
        const T cs = static_cast<T>(sigma);
        for (std::size_t r = 0; r < rows; ++r) {
            auto xr = x.row(r);
            auto er = eps.row(r);
            for (std::size_t j = 0; j < dim; ++j) {
                T v = cx * xr[j] + ce * er[j];
                if (add_noise) v += cs * static_cast<T>(streams[r].normal());
                xr[j] = v;
            }
        }
    }
    return x;
}

#define SPM_INSTANTIATE(T)                                                                    \
    template Matrix<T> forward_diffuse<T>(const NoiseSchedule&, const Matrix<T>&, int,         \
                                          const Matrix<T>&);                                  \
    template Matrix<T> sample<T>(const NoiseSchedule&, const NoisePredictor<T>&, std::size_t, \
                                 std::size_t, std::uint64_t, const SamplerOptions&);

SPM_INSTANTIATE(float)
SPM_INSTANTIATE(double)

#undef SPM_INSTANTIATE

}  // namespace spm
