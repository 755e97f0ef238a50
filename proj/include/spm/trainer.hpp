// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spm/adapter.hpp"
#include "spm/concept_space.hpp"
#include "spm/denoiser.hpp"
#include "spm/diffusion.hpp"
#include "spm/text.hpp"

namespace spm {

struct TrainSchedule {
    long warmup_steps = 500;
    int restart_cycles = 3;
};

struct TrainConfig {
    std::string name;  // membrane name; defaults to the joined targets
    double eta = 1.0;
    double lambda = 1e3;
    double alpha = 1.0;
    long steps = 3000;
    int anchor_samples = 4;
    double learning_rate = 1e-4;
    double weight_decay = 1e-2;
    TrainSchedule schedule;
    /// Latent draws per target and step.
    int batch_size = 1;
    std::uint64_t seed = 0;
    int dim = 1;
    /// Training timestep range; 0 selects ceil(T/2) and T respectively.
    int t_min = 0;
    int t_max = 0;
    bool enable_la = true;
    /// Recorded only; the evaluator reads it.
    bool enable_ft_at_eval = true;
    /// Checkpoint callback period in steps; 0 disables it.
    long checkpoint_every = 0;

    /// Published hyper-parameters (large-model scale).
    static TrainConfig large_model_defaults();
    /// Same losses and weights, schedule scaled to the toy backbone.
    static TrainConfig toy_defaults();

    /// eta > 0, lambda >= 0, alpha >= 0, steps >= 0, anchor_samples >= 1,
    /// learning_rate > 0, dim >= 1, batch_size >= 1. Throws ConfigError.
    void validate() const;
};

/// eps_sur - eta (eps_tar - eps_sur).
template <typename T>
Matrix<T> erasing_target(const Matrix<T>& eps_tar, const Matrix<T>& eps_sur, double eta);

/// Loss value with its gradient w.r.t. the trained membrane's parameters.
template <typename T>
struct LossResult {
    double value = 0.0;
    BasicMembrane<T> grad;
};

/// Mean over elements of (eps(x_t, c_tar | M) - erasing_target)^2. The target
/// comes from the frozen model and carries no gradient.
template <typename T>
LossResult<T> erasing_loss(const Denoiser<T>& model, const Matrix<T>& x_t, std::span<const int> t,
                           const ConceptEncoding& c_tar, const ConceptEncoding& c_sur,
                           const BasicMembrane<T>& membrane, double eta, T gamma = T{1});

/// Mean over anchors and elements of (eps(x_t, c_i | M) - eps(x_t, c_i))^2.
/// Anchor i is paired with latent row i mod x_t.rows(). Throws ConfigError on
/// an empty anchor list.
template <typename T>
LossResult<T> anchoring_loss(const Denoiser<T>& model, const Matrix<T>& x_t, std::span<const int> t,
                             std::span<const ConceptEncoding> anchors,
                             const BasicMembrane<T>& membrane, T gamma = T{1});

inline double total_loss(double era, double anc, double lambda) { return era + lambda * anc; }

template <typename T>
struct LatentSample {
    Matrix<T> x_t;
    int t = 0;
};

/// Draws t uniformly from [t_min, t_max], then runs the frozen sampler
/// conditioned on c_tar from pure noise down to step t.
template <typename T>
LatentSample<T> sample_latent(const Denoiser<T>& model, const NoiseSchedule& schedule,
                              const ConceptEncoding& c_tar, int t_min, int t_max,
                              std::uint64_t seed);

/// One line of training progress.
struct TrainRecord {
    long step = 0;
    double era = 0.0;
    double anc = 0.0;
    double total = 0.0;
    double learning_rate = 0.0;
    std::vector<int> t;

    /// Single-line JSON object.
    std::string to_json() const;
};

struct TrainCallbacks {
    std::function<void(const TrainRecord&)> progress;
    std::function<void(const Membrane&, long step)> checkpoint;
};

/// Fits a fresh membrane that erases `targets` toward `surrogate` ("" for the
/// empty prompt). With enable_la = false lambda is forced to 0 and the pool
/// may be null. The host model is never modified. Throws TrainingError with
/// the step index on a non-finite loss.
Membrane train_membrane(const Denoiser<float>& model, const NoiseSchedule& schedule,
                        const std::vector<std::string>& targets, const std::string& surrogate,
                        const TextEncoder& encoder, const TrainConfig& config,
                        const AnchorPool* anchor_pool, const TrainCallbacks& callbacks = {});

}  // namespace spm
