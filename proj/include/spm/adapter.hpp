// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spm/kernels.hpp"
#include "spm/matrix.hpp"

namespace spm {

/// One injectable host layer as seen by the transfer-compatibility check.
/// Linear layers have kernel_size 1.
struct LayerSignature {
    std::string layer_id;
    int m = 0;  // output features / channels
    int n = 0;  // input features / channels
    int kernel_size = 1;

    friend bool operator==(const LayerSignature&, const LayerSignature&) = default;
};

class ModelSignature {
public:
    ModelSignature() = default;
    explicit ModelSignature(std::vector<LayerSignature> layers);

    const std::vector<LayerSignature>& layers() const noexcept { return layers_; }
    bool empty() const noexcept { return layers_.empty(); }
    const LayerSignature* find(const std::string& layer_id) const;

    /// SHA-256 over the canonical "id m n k" listing.
    const std::string& digest() const noexcept { return digest_; }

    bool compatible_with(const ModelSignature& other) const { return layers_ == other.layers_; }

    /// Human-readable description of the first differing layer, if any.
    std::optional<std::string> first_mismatch(const ModelSignature& other) const;

    friend bool operator==(const ModelSignature& a, const ModelSignature& b) {
        return a.layers_ == b.layers_;
    }

private:
    std::vector<LayerSignature> layers_;
    std::string digest_;
};

/// Adapter pair for one host layer. The host output gains
/// gamma * v_sig * (v_reg x): v_reg reads the layer input (as a convolution
/// with the host kernel for conv layers), v_sig writes the d-dimensional
/// response back to the m outputs.
template <typename T>
struct BasicSpmLayer {
    std::string layer_id;
    int d = 1;
    int m = 0;
    int n = 0;
    int kernel_size = 1;
    std::vector<T> v_sig;  // [m, d]
    std::vector<T> v_reg;  // [d, n * k * k]

    std::size_t reg_cols() const noexcept {
        return static_cast<std::size_t>(n) * kernel_size * kernel_size;
    }
    std::size_t parameter_count() const noexcept { return v_sig.size() + v_reg.size(); }

    /// Geometry of the v_reg convolution for a host grid of `side`.
    kernels::LayerGeometry reg_geometry(int side) const { return {d, n, kernel_size, side}; }
    /// Geometry of the 1x1 v_sig projection for a host grid of `side`.
    kernels::LayerGeometry sig_geometry(int side) const { return {m, d, 1, side}; }

    /// Zero-valued layer of the right shape; used for gradients.
    static BasicSpmLayer zeros_like(const LayerSignature& sig, int d);

    template <typename U>
    BasicSpmLayer<U> cast() const {
        return {layer_id, d, m, n, kernel_size, std::vector<U>(v_sig.begin(), v_sig.end()),
                std::vector<U>(v_reg.begin(), v_reg.end())};
    }

    friend bool operator==(const BasicSpmLayer&, const BasicSpmLayer&) = default;
};

/// Hyper-parameters a membrane was trained with; persisted alongside it.
struct TrainMeta {
    double eta = 1.0;
    double alpha = 1.0;
    double lambda = 1e3;
    long steps = 0;
    std::uint64_t seed = 0;
    int anchor_samples = 4;
    double learning_rate = 0.0;
    bool enable_la = true;

    friend bool operator==(const TrainMeta&, const TrainMeta&) = default;
};

/// A named set of per-layer adapters erasing `targets`.
template <typename T>
struct BasicMembrane {
    std::string name;
    std::vector<std::string> targets;
    std::string surrogate;
    std::map<std::string, BasicSpmLayer<T>> layers;
    TrainMeta train_meta;
    ModelSignature source_signature;

    int dim() const { return layers.empty() ? 0 : layers.begin()->second.d; }
    std::size_t parameter_count() const;

    /// Checks layer keys against source_signature, per-layer shapes and a
    /// non-empty target list. Throws ContractError / ConfigError.
    void validate() const;

    /// Same structure with every parameter set to zero.
    BasicMembrane zeros_like() const;

    template <typename U>
    BasicMembrane<U> cast() const {
        BasicMembrane<U> out;
        out.name = name;
        out.targets = targets;
        out.surrogate = surrogate;
        out.train_meta = train_meta;
        out.source_signature = source_signature;
        for (const auto& [id, layer] : layers) out.layers.emplace(id, layer.template cast<U>());
        return out;
    }

    friend bool operator==(const BasicMembrane&, const BasicMembrane&) = default;
};

using SpmLayer = BasicSpmLayer<float>;
using Membrane = BasicMembrane<float>;

/// Fresh adapters on every layer of `signature`: v_sig = 0, v_reg drawn from
/// Kaiming-uniform with negative slope sqrt(5) (bound 1/sqrt(n k^2)).
/// Targets are left empty for the trainer to fill in.
Membrane inject(const ModelSignature& signature, int d, std::uint64_t seed);

/// One adapter contribution to a host layer.
template <typename T>
struct AdapterTerm {
    const BasicSpmLayer<T>* layer = nullptr;
    T gamma = T{1};
};

/// Adds gamma * v_sig (v_reg x) to `out` for a batch of inputs. The
/// intermediate v_reg response is written to `reg_out` when given (it is
/// needed for the backward pass).
template <typename T>
void add_intervention(const kernels::LayerGeometry& host, const Matrix<T>& x,
                      const BasicSpmLayer<T>& layer, T gamma, Matrix<T>& out,
                      Matrix<T>* reg_out = nullptr);

/// Host output `host_out` (= Wx) plus the sum of every adapter term.
template <typename T>
Matrix<T> intervened_forward(const kernels::LayerGeometry& host, const Matrix<T>& x,
                             const Matrix<T>& host_out, std::span<const AdapterTerm<T>> terms);

/// Adapter parameters relative to host parameters over all layers:
/// sum d (m + n k^2) / sum m n k^2. Zero for an empty membrane.
double overhead_ratio(const Membrane& membrane);

/// Same ratio computed from a signature alone.
double overhead_ratio(const ModelSignature& signature, int d);

}  // namespace spm
