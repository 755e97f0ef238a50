// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spm/adapter.hpp"
#include "spm/diffusion.hpp"
#include "spm/kernels.hpp"
#include "spm/matrix.hpp"
#include "spm/text.hpp"

namespace spm {

/// Shape of the toy conditional noise predictor. Samples are
/// channels x side x side images stored channel-major.
struct DenoiserConfig {
    int channels = 3;
    int side = 6;
    int conv_channels = 8;
    int hidden = 64;
    int cond_dim = 32;
    int time_features = 16;  // even: half sine, half cosine

    int sample_dim() const noexcept { return channels * side * side; }
    void validate() const;

    friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

/// Injectable layers in signature order.
enum class DenoiserLayer : int {
    kConvIn = 0,
    kInProj,
    kCondProj,
    kTimeProj,
    kMid,
    kOutProj,
    kSkip,
    kTimeScale,
};
inline constexpr int kDenoiserLayerCount = 8;
const char* layer_name(DenoiserLayer layer) noexcept;

template <typename T>
struct HostLayer {
    std::string id;
    kernels::LayerGeometry geometry;
    std::vector<T> weight;  // [out, in * k * k]
    std::vector<T> bias;    // [out]

    friend bool operator==(const HostLayer&, const HostLayer&) = default;
};

/// A membrane applied at permeability gamma.
template <typename T>
struct Intervention {
    const BasicMembrane<T>* membrane = nullptr;
    T gamma = T{1};
};

/// Intermediate activations kept by predict() for backward().
template <typename T>
struct DenoiserCache {
    std::vector<Intervention<T>> interventions;
    Matrix<T> x, cond, tf;
    Matrix<T> u0, a, z, h, u2, h2, s, ts;
    // reg[k][layer]: v_reg response of intervention k on that layer.
    std::vector<std::array<Matrix<T>, kDenoiserLayerCount>> reg;
};

/// Conditional noise predictor eps(x_t, c, t):
///   a  = silu(conv_in(x))
///   h  = silu(in_proj(a) + cond_proj(c) + time_proj(tf))
///   h2 = silu(mid(h))
///   eps = out_proj(h2) + skip(x) * (1 + time_scale(tf))   (per channel)
/// with sinusoidal time features tf. Every layer accepts additive adapters.
template <typename T>
class Denoiser {
public:
    Denoiser() = default;
    /// PyTorch-style default initialisation, deterministic under seed.
    Denoiser(const DenoiserConfig& config, std::uint64_t seed);

    const DenoiserConfig& config() const noexcept { return config_; }
    const ModelSignature& signature() const noexcept { return signature_; }
    std::size_t sample_dim() const noexcept { return static_cast<std::size_t>(config_.sample_dim()); }

    std::vector<HostLayer<T>>& layers() noexcept { return layers_; }
    const std::vector<HostLayer<T>>& layers() const noexcept { return layers_; }
    HostLayer<T>& layer(DenoiserLayer l) { return layers_[static_cast<std::size_t>(l)]; }
    const HostLayer<T>& layer(DenoiserLayer l) const {
        return layers_[static_cast<std::size_t>(l)];
    }
    std::size_t parameter_count() const;

    Matrix<T> time_features(std::span<const int> t) const;

    /// Noise estimate for a batch. `t` holds one timestep per row. Throws
    /// IncompatibleError if a membrane was trained on a different signature.
    Matrix<T> predict(const Matrix<T>& x, const Matrix<T>& cond, std::span<const int> t,
                      std::span<const Intervention<T>> interventions = {},
                      DenoiserCache<T>* cache = nullptr) const;

    /// Back-propagates dL/d(eps). adapter_grads[k] (parallel to the cached
    /// interventions, null to skip) and host_grads (null to skip) are
    /// accumulated into, not overwritten.
    void backward(const DenoiserCache<T>& cache, const Matrix<T>& d_eps,
                  std::span<BasicMembrane<T>* const> adapter_grads,
                  std::vector<HostLayer<T>>* host_grads) const;

    /// Zero-valued copies of the host layers, for gradient accumulation.
    std::vector<HostLayer<T>> zero_grads() const;

    /// SHA-256 over the configuration and every parameter byte.
    std::string digest() const;

    template <typename U>
    Denoiser<U> cast() const {
        Denoiser<U> out;
        out.config_ = config_;
        out.signature_ = signature_;
        for (const auto& l : layers_) {
            out.layers_.push_back({l.id, l.geometry, std::vector<U>(l.weight.begin(), l.weight.end()),
                                   std::vector<U>(l.bias.begin(), l.bias.end())});
        }
        return out;
    }

    /// Rebuilds a model from stored parameters; throws FormatError on shape mismatch.
    static Denoiser from_layers(const DenoiserConfig& config, std::vector<HostLayer<T>> layers);

    friend bool operator==(const Denoiser&, const Denoiser&) = default;

private:
    template <typename U>
    friend class Denoiser;

    void build_geometry();
    void apply(DenoiserLayer id, const Matrix<T>& in, Matrix<T>& out,
               std::span<const Intervention<T>> ivs, DenoiserCache<T>* cache) const;
    void apply_backward(DenoiserLayer id, const Matrix<T>& in, const Matrix<T>& dy, Matrix<T>* din,
                        const DenoiserCache<T>& cache,
                        std::span<BasicMembrane<T>* const> adapter_grads,
                        std::vector<HostLayer<T>>* host_grads) const;

    DenoiserConfig config_;
    ModelSignature signature_;
    std::vector<HostLayer<T>> layers_;
};

/// n samples conditioned on `cond` under the given interventions.
template <typename T>
Matrix<T> generate_samples(const Denoiser<T>& model, const NoiseSchedule& schedule,
                           const ConceptEncoding& cond, std::size_t n, std::uint64_t seed,
                           std::span<const Intervention<T>> interventions = {},
                           int sampler_steps = 0);

/// `rows` copies of an encoding as a conditioning batch.
template <typename T>
Matrix<T> condition_rows(const ConceptEncoding& encoding, std::size_t rows);

/// One row per encoding.
template <typename T>
Matrix<T> condition_batch(std::span<const ConceptEncoding> encodings);

}  // namespace spm
