// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "spm/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

#include "spm/error.hpp"
#include "spm/optim.hpp"
#include "spm/random.hpp"

namespace spm {

TrainConfig TrainConfig::large_model_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::toy_defaults() {
    TrainConfig c;
    c.steps = 800;
    c.learning_rate = 1e-2;
    c.schedule.warmup_steps = c.steps / 6;
    c.schedule.restart_cycles = 3;
    return c;
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError(what); };
    if (!(eta > 0.0) || !std::isfinite(eta)) fail("eta must be > 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be >= 0");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail("alpha must be >= 0");
    if (steps < 0) fail("steps must be >= 0");
    if (anchor_samples < 1) fail("anchor sample count must be >= 1");
    if (!(learning_rate > 0.0)) fail("learning rate must be > 0");
    if (!(weight_decay >= 0.0)) fail("weight decay must be >= 0");
    if (dim < 1) fail("intrinsic dimension must be >= 1");
    if (batch_size < 1) fail("batch size must be >= 1");
    if (schedule.warmup_steps < 0 || schedule.restart_cycles < 1) fail("invalid learning-rate schedule");
    if (t_min < 0 || t_max < 0 || (t_max != 0 && t_min > t_max)) fail("invalid timestep range");
    if (checkpoint_every < 0) fail("checkpoint period must be >= 0");
}

template <typename T>
Matrix<T> erasing_target(const Matrix<T>& eps_tar, const Matrix<T>& eps_sur, double eta) {
    if (eps_tar.rows() != eps_sur.rows() || eps_tar.cols() != eps_sur.cols()) {
        throw ContractError("erasing target needs equally shaped noise estimates");
    }
    Matrix<T> out(eps_tar.rows(), eps_tar.cols());
    const T e = static_cast<T>(eta);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T sur = eps_sur.data()[i];
        out.data()[i] = sur - e * (eps_tar.data()[i] - sur);
    }
    return out;
}

namespace {

// Mean squared error against `reference` and its gradient through the membrane.
template <typename T>
LossResult<T> regression_loss(const Denoiser<T>& model, const Matrix<T>& x_t, std::span<const int> t,
                              const Matrix<T>& cond, const Matrix<T>& reference,
                              const BasicMembrane<T>& membrane, T gamma) {
    const Intervention<T> iv{&membrane, gamma};
    DenoiserCache<T> cache;
    const auto eps = model.predict(x_t, cond, t, std::span<const Intervention<T>>(&iv, 1), &cache);
    Matrix<T> d_eps(eps.rows(), eps.cols());
    const double scale = 2.0 / static_cast<double>(eps.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double diff = static_cast<double>(eps.data()[i]) - static_cast<double>(reference.data()[i]);
        sum += diff * diff;
        d_eps.data()[i] = static_cast<T>(scale * diff);
    }
    LossResult<T> out{sum / static_cast<double>(eps.size()), membrane.zeros_like()};
    BasicMembrane<T>* grads[] = {&out.grad};
    model.backward(cache, d_eps, grads, nullptr);
    return out;
}

template <typename T>
void add_scaled(BasicMembrane<T>& dst, const BasicMembrane<T>& src, double scale) {
    for (auto& [id, layer] : dst.layers) {
        const auto& s = src.layers.at(id);
        for (std::size_t i = 0; i < layer.v_sig.size(); ++i) layer.v_sig[i] += static_cast<T>(scale * s.v_sig[i]);
        for (std::size_t i = 0; i < layer.v_reg.size(); ++i) layer.v_reg[i] += static_cast<T>(scale * s.v_reg[i]);
    }
}

}  // namespace

template <typename T>
LossResult<T> erasing_loss(const Denoiser<T>& model, const Matrix<T>& x_t, std::span<const int> t,
                           const ConceptEncoding& c_tar, const ConceptEncoding& c_sur,
                           const BasicMembrane<T>& membrane, double eta, T gamma) {
    const auto cond_tar = condition_rows<T>(c_tar, x_t.rows());
    const auto cond_sur = condition_rows<T>(c_sur, x_t.rows());
    const auto eps_tar = model.predict(x_t, cond_tar, t);
    const auto eps_sur = model.predict(x_t, cond_sur, t);
    const auto target = erasing_target(eps_tar, eps_sur, eta);
    return regression_loss(model, x_t, t, cond_tar, target, membrane, gamma);
}

template <typename T>
LossResult<T> anchoring_loss(const Denoiser<T>& model, const Matrix<T>& x_t, std::span<const int> t,
                             std::span<const ConceptEncoding> anchors,
                             const BasicMembrane<T>& membrane, T gamma) {
    if (anchors.empty()) throw ConfigError("anchoring loss needs at least one anchor");
    if (x_t.rows() == 0 || t.size() != x_t.rows()) throw ContractError("anchoring loss needs latents");
    Matrix<T> x(anchors.size(), x_t.cols());
    std::vector<int> ts(anchors.size());
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const std::size_t src = i % x_t.rows();
        std::copy(x_t.row(src).begin(), x_t.row(src).end(), x.row(i).begin());
        ts[i] = t[src];
    }
    const auto cond = condition_batch<T>(anchors);
    const auto frozen = model.predict(x, cond, ts);
    return regression_loss(model, x, ts, cond, frozen, membrane, gamma);
}

template <typename T>
LatentSample<T> sample_latent(const Denoiser<T>& model, const NoiseSchedule& schedule,
                              const ConceptEncoding& c_tar, int t_min, int t_max,
                              std::uint64_t seed) {
    if (t_min < 1 || t_max > schedule.steps() || t_min > t_max) {
        throw ConfigError("latent timestep range [" + std::to_string(t_min) + ", " +
                          std::to_string(t_max) + "] outside [1, " +
                          std::to_string(schedule.steps()) + "]");
    }
    Rng rng(derive_seed(seed, 0));
    LatentSample<T> out;
    out.t = rng.uniform_int(t_min, t_max);
    const auto cond = condition_rows<T>(c_tar, 1);
    NoisePredictor<T> predictor = [&](const Matrix<T>& x, int t, Matrix<T>& eps) {
        const int ts[] = {t};
        eps = model.predict(x, cond, ts);
    };
    out.x_t = sample<T>(schedule, predictor, 1, model.sample_dim(), derive_seed(seed, 1),
                        SamplerOptions{0, out.t});
    return out;
}

std::string TrainRecord::to_json() const {
    nlohmann::json j = {{"step", step},   {"L_era", era},          {"L_anc", anc},
                        {"total", total}, {"lr", learning_rate},   {"t", t}};
    return j.dump();
}

Membrane train_membrane(const Denoiser<float>& model, const NoiseSchedule& schedule,
                        const std::vector<std::string>& targets, const std::string& surrogate,
                        const TextEncoder& encoder, const TrainConfig& config,
                        const AnchorPool* anchor_pool, const TrainCallbacks& callbacks) {
    config.validate();
    if (targets.empty()) throw ConfigError("at least one target concept is required");
    if (config.enable_la && anchor_pool == nullptr) {
        throw ConfigError("latent anchoring is enabled but no anchor pool was given");
    }
    const int t_min = config.t_min > 0 ? config.t_min : (schedule.steps() + 1) / 2;
    const int t_max = config.t_max > 0 ? config.t_max : schedule.steps();
    const double lambda = config.enable_la ? config.lambda : 0.0;

    Membrane membrane = inject(model.signature(), config.dim, derive_seed(config.seed, 0));
    membrane.targets = targets;
    membrane.surrogate = surrogate;
    if (!config.name.empty()) {
        membrane.name = config.name;
    } else {
        for (const auto& t : targets) membrane.name += (membrane.name.empty() ? "" : "+") + t;
    }
    membrane.train_meta = TrainMeta{config.eta,           config.alpha,          lambda,
                                    config.steps,         config.seed,           config.anchor_samples,
                                    config.learning_rate, config.enable_la};

    std::vector<ConceptEncoding> target_enc;
    for (const auto& t : targets) target_enc.push_back(encoder.encode(t));
    const auto sur_enc = encoder.encode(surrogate);
    const auto k = targets.size();
    const auto batch = static_cast<std::size_t>(config.batch_size);

    AdamW<float> optimizer(AdamOptions{0.9, 0.999, 1e-8, config.weight_decay});
    std::vector<std::span<float>> params;
    for (auto& [id, layer] : membrane.layers) {
        params.emplace_back(layer.v_sig);
        params.emplace_back(layer.v_reg);
    }

    for (long step = 0; step < config.steps; ++step) {
        const std::uint64_t step_seed = derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(step));
        TrainRecord record;
        record.step = step;
        record.learning_rate =
            config.learning_rate * cosine_restart_factor(step, config.steps, config.schedule.warmup_steps,
                                                         config.schedule.restart_cycles);

        Matrix<float> all_x(k * batch, model.sample_dim());
        std::vector<int> all_t(k * batch);
        LossResult<float> total{0.0, membrane.zeros_like()};
        double era = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            Matrix<float> x(batch, model.sample_dim());
            std::vector<int> ts(batch);
            for (std::size_t b = 0; b < batch; ++b) {
                const auto latent = sample_latent<float>(model, schedule, target_enc[j], t_min, t_max,
                                                         derive_seed(step_seed, j * batch + b));
                std::copy(latent.x_t.row(0).begin(), latent.x_t.row(0).end(), x.row(b).begin());
                std::copy(latent.x_t.row(0).begin(), latent.x_t.row(0).end(), all_x.row(j * batch + b).begin());
                ts[b] = all_t[j * batch + b] = latent.t;
            }
            const auto part = erasing_loss<float>(model, x, ts, target_enc[j], sur_enc, membrane, config.eta);
            era += part.value / static_cast<double>(k);
            add_scaled(total.grad, part.grad, 1.0 / static_cast<double>(k));
        }
        record.t = all_t;
        record.era = era;

        if (lambda > 0.0) {
            const auto idx = sample_anchor_indices(*anchor_pool, config.anchor_samples,
                                                   derive_seed(step_seed, 0xa2c4));
            std::vector<ConceptEncoding> anchors;
            for (auto i : idx) anchors.push_back(anchor_pool->candidates()[i]);
            const auto anc = anchoring_loss<float>(model, all_x, all_t, anchors, membrane);
            record.anc = anc.value;
            add_scaled(total.grad, anc.grad, lambda);
        }
        record.total = total_loss(record.era, record.anc, lambda);
        if (!std::isfinite(record.total)) {
            throw TrainingError("training loss became non-finite", step);
        }

        std::vector<std::span<const float>> grads;
        for (auto& [id, layer] : total.grad.layers) {
            grads.emplace_back(layer.v_sig);
            grads.emplace_back(layer.v_reg);
        }
        optimizer.step(params, grads, record.learning_rate);

        if (callbacks.progress) callbacks.progress(record);
        if (callbacks.checkpoint && config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
            callbacks.checkpoint(membrane, step + 1);
        }
    }
    return membrane;
}

#define SPM_INSTANTIATE(T)                                                                         \
    template Matrix<T> erasing_target<T>(const Matrix<T>&, const Matrix<T>&, double);             \
    template LossResult<T> erasing_loss<T>(const Denoiser<T>&, const Matrix<T>&, std::span<const int>, \
                                           const ConceptEncoding&, const ConceptEncoding&,          \
                                           const BasicMembrane<T>&, double, T);                     \
    template LossResult<T> anchoring_loss<T>(const Denoiser<T>&, const Matrix<T>&,                 \
                                             std::span<const int>, std::span<const ConceptEncoding>, \
                                             const BasicMembrane<T>&, T);                           \
    template LatentSample<T> sample_latent<T>(const Denoiser<T>&, const NoiseSchedule&,            \
                                              const ConceptEncoding&, int, int, std::uint64_t);

SPM_INSTANTIATE(float)
SPM_INSTANTIATE(double)

#undef SPM_INSTANTIATE

}  // namespace spm
