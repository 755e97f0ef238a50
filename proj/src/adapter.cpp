// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "spm/adapter.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "spm/digest.hpp"
#include "spm/error.hpp"
#include "spm/random.hpp"

namespace spm {

ModelSignature::ModelSignature(std::vector<LayerSignature> layers) : layers_(std::move(layers)) {
    std::ostringstream canonical;
    for (const auto& l : layers_) {
        canonical << l.layer_id << ' ' << l.m << ' ' << l.n << ' ' << l.kernel_size << '\n';
    }
    digest_ = sha256_hex(canonical.str());
}

const LayerSignature* ModelSignature::find(const std::string& layer_id) const {
    for (const auto& l : layers_) {
        if (l.layer_id == layer_id) return &l;
    }
    return nullptr;
}

std::optional<std::string> ModelSignature::first_mismatch(const ModelSignature& other) const {
    const std::size_t common = std::min(layers_.size(), other.layers_.size());
    auto describe = [](const LayerSignature& l) {
        std::ostringstream os;
        os << "(m=" << l.m << ", n=" << l.n << ", k=" << l.kernel_size << ")";
        return os.str();
    };
    for (std::size_t i = 0; i < common; ++i) {
        const auto& a = layers_[i];
        const auto& b = other.layers_[i];
        if (a == b) continue;
        if (a.layer_id != b.layer_id) {
            return "layer #" + std::to_string(i) + ": '" + a.layer_id + "' vs '" + b.layer_id + "'";
        }
        return "layer '" + a.layer_id + "': " + describe(a) + " vs " + describe(b);
    }
    if (layers_.size() > common) return "layer '" + layers_[common].layer_id + "' missing in model";
    if (other.layers_.size() > common) {
        return "layer '" + other.layers_[common].layer_id + "' missing in membrane";
    }
    return std::nullopt;
}

template <typename T>
BasicSpmLayer<T> BasicSpmLayer<T>::zeros_like(const LayerSignature& sig, int d) {
    BasicSpmLayer<T> layer;
    layer.layer_id = sig.layer_id;
    layer.d = d;
    layer.m = sig.m;
    layer.n = sig.n;
    layer.kernel_size = sig.kernel_size;
    layer.v_sig.assign(static_cast<std::size_t>(sig.m) * d, T{0});
    layer.v_reg.assign(d * layer.reg_cols(), T{0});
    return layer;
}

template <typename T>
std::size_t BasicMembrane<T>::parameter_count() const {
    std::size_t total = 0;
    for (const auto& [id, layer] : layers) total += layer.parameter_count();
    return total;
}

template <typename T>
void BasicMembrane<T>::validate() const {
    if (targets.empty()) throw ConfigError("membrane '" + name + "' has no target concepts");
    if (layers.size() != source_signature.layers().size()) {
        throw ContractError("membrane '" + name + "' covers " + std::to_string(layers.size()) +
                            " layers but its source signature lists " +
                            std::to_string(source_signature.layers().size()));
    }
    const int d = dim();
    for (const auto& sig : source_signature.layers()) {
        auto it = layers.find(sig.layer_id);
        if (it == layers.end()) {
            throw ContractError("membrane '" + name + "' lacks layer '" + sig.layer_id + "'");
        }
        const auto& l = it->second;
        if (l.d != d || l.d < 1 || l.m != sig.m || l.n != sig.n ||
            l.kernel_size != sig.kernel_size ||
            l.v_sig.size() != static_cast<std::size_t>(l.m) * l.d ||
            l.v_reg.size() != l.reg_cols() * l.d) {
            throw ContractError("membrane '" + name + "' layer '" + sig.layer_id +
                                "' is inconsistent with its host shape");
        }
    }
}

template <typename T>
BasicMembrane<T> BasicMembrane<T>::zeros_like() const {
    BasicMembrane<T> out = *this;
    for (auto& [id, layer] : out.layers) {
        std::fill(layer.v_sig.begin(), layer.v_sig.end(), T{0});
        std::fill(layer.v_reg.begin(), layer.v_reg.end(), T{0});
    }
    return out;
}

Membrane inject(const ModelSignature& signature, int d, std::uint64_t seed) {
    if (d < 1) throw ConfigError("intrinsic dimension must be >= 1, got " + std::to_string(d));
    if (signature.empty()) throw ConfigError("model signature lists no injectable layers");

    // kaiming_uniform_(a = sqrt(5)): gain = sqrt(2 / (1 + a^2)), bound = gain * sqrt(3 / fan_in)
    const double a = std::sqrt(5.0);
    const double gain = std::sqrt(2.0 / (1.0 + a * a));

    Rng rng(seed);
    Membrane membrane;
    membrane.source_signature = signature;
    membrane.train_meta.seed = seed;
    for (const auto& sig : signature.layers()) {
        auto layer = SpmLayer::zeros_like(sig, d);
        const double fan_in = static_cast<double>(layer.reg_cols());
        const double bound = gain * std::sqrt(3.0 / fan_in);
        for (auto& v : layer.v_reg) v = static_cast<float>(rng.uniform(-bound, bound));
        membrane.layers.emplace(sig.layer_id, std::move(layer));
    }
    return membrane;
}

template <typename T>
void add_intervention(const kernels::LayerGeometry& host, const Matrix<T>& x,
                      const BasicSpmLayer<T>& layer, T gamma, Matrix<T>& out, Matrix<T>* reg_out) {
    if (layer.m != host.out_channels || layer.n != host.in_channels ||
        layer.kernel_size != host.kernel || x.cols() != host.input_size() ||
        out.cols() != host.output_size() || out.rows() != x.rows()) {
        throw ContractError("adapter '" + layer.layer_id + "' does not fit its host layer");
    }
    const std::size_t batch = x.rows();
    const auto reg_geom = layer.reg_geometry(host.side);
    const auto sig_geom = layer.sig_geometry(host.side);

    Matrix<T> reg(batch, reg_geom.output_size());
    kernels::forward<T>(reg_geom, batch, x.span(), layer.v_reg, {}, reg.span());
    Matrix<T> signal(batch, sig_geom.output_size());
    kernels::forward<T>(sig_geom, batch, reg.span(), layer.v_sig, {}, signal.span());

    auto dst = out.span();
    auto src = signal.span();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gamma * src[i];
    if (reg_out != nullptr) *reg_out = std::move(reg);
}

template <typename T>
Matrix<T> intervened_forward(const kernels::LayerGeometry& host, const Matrix<T>& x,
                             const Matrix<T>& host_out, std::span<const AdapterTerm<T>> terms) {
    if (host_out.rows() != x.rows() || host_out.cols() != host.output_size()) {
        throw ContractError("host output shape does not match the layer geometry");
    }
    Matrix<T> out = host_out;
    for (const auto& term : terms) {
        if (term.layer == nullptr) throw ContractError("null adapter in intervention list");
        add_intervention(host, x, *term.layer, term.gamma, out);
    }
    return out;
}

double overhead_ratio(const Membrane& membrane) {
    double added = 0.0;
    double host = 0.0;
    for (const auto& [id, l] : membrane.layers) {
        const double k2 = static_cast<double>(l.kernel_size) * l.kernel_size;
        added += static_cast<double>(l.d) * (l.m + l.n * k2);
        host += static_cast<double>(l.m) * l.n * k2;
    }
    return host > 0.0 ? added / host : 0.0;
}

double overhead_ratio(const ModelSignature& signature, int d) {
    double added = 0.0;
    double host = 0.0;
    for (const auto& l : signature.layers()) {
        const double k2 = static_cast<double>(l.kernel_size) * l.kernel_size;
        added += static_cast<double>(d) * (l.m + l.n * k2);
        host += static_cast<double>(l.m) * l.n * k2;
    }
    return host > 0.0 ? added / host : 0.0;
}

template struct BasicSpmLayer<float>;
template struct BasicSpmLayer<double>;
template struct BasicMembrane<float>;
template struct BasicMembrane<double>;

#define SPM_INSTANTIATE(T)                                                                  \
    template void add_intervention<T>(const kernels::LayerGeometry&, const Matrix<T>&,      \
                                      const BasicSpmLayer<T>&, T, Matrix<T>&, Matrix<T>*);  \
    template Matrix<T> intervened_forward<T>(const kernels::LayerGeometry&, const Matrix<T>&, \
                                             const Matrix<T>&, std::span<const AdapterTerm<T>>);

SPM_INSTANTIATE(float)
SPM_INSTANTIATE(double)

#undef SPM_INSTANTIATE

}  // namespace spm
