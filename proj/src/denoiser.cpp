// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "spm/denoiser.hpp"

#include <cmath>

#include "spm/digest.hpp"
#include "spm/error.hpp"
#include "spm/random.hpp"

namespace spm {

namespace {

constexpr std::array<const char*, kDenoiserLayerCount> kLayerNames = {
    "conv_in", "in_proj", "cond_proj", "time_proj", "mid", "out_proj", "skip", "time_scale"};

template <typename T>
T sigmoid(T u) {
    return T{1} / (T{1} + std::exp(-u));
}

template <typename T>
void silu(const Matrix<T>& u, Matrix<T>& out) {
    out = Matrix<T>(u.rows(), u.cols());
    for (std::size_t i = 0; i < u.size(); ++i) out.data()[i] = u.data()[i] * sigmoid(u.data()[i]);
}

// dx = dy * silu'(u)
template <typename T>
Matrix<T> silu_backward(const Matrix<T>& u, const Matrix<T>& dy) {
    Matrix<T> dx(u.rows(), u.cols());
    for (std::size_t i = 0; i < u.size(); ++i) {
        const T v = u.data()[i];
        const T sg = sigmoid(v);
        dx.data()[i] = dy.data()[i] * sg * (T{1} + v * (T{1} - sg));
    }
    return dx;
}

void add_into(auto& dst, const auto& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
}

}  // namespace

const char* layer_name(DenoiserLayer layer) noexcept {
    return kLayerNames[static_cast<std::size_t>(layer)];
}

void DenoiserConfig::validate() const {
    if (channels < 1 || side < 1 || conv_channels < 1 || hidden < 1 || cond_dim < 1 ||
        time_features < 2 || time_features % 2 != 0) {
        throw ConfigError("invalid denoiser configuration");
    }
}

template <typename T>
void Denoiser<T>::build_geometry() {
    const auto& c = config_;
    const std::array<kernels::LayerGeometry, kDenoiserLayerCount> geoms = {{
        {c.conv_channels, c.channels, 3, c.side},
        {c.hidden, c.conv_channels * c.side * c.side, 1, 1},
        {c.hidden, c.cond_dim, 1, 1},
        {c.hidden, c.time_features, 1, 1},
        {c.hidden, c.hidden, 1, 1},
        {c.sample_dim(), c.hidden, 1, 1},
        {c.channels, c.channels, 3, c.side},
        {c.channels, c.time_features, 1, 1},
    }};
    std::vector<LayerSignature> sig;
    layers_.resize(kDenoiserLayerCount);
    for (int i = 0; i < kDenoiserLayerCount; ++i) {
        auto& l = layers_[static_cast<std::size_t>(i)];
        l.id = kLayerNames[static_cast<std::size_t>(i)];
        l.geometry = geoms[static_cast<std::size_t>(i)];
        l.weight.resize(l.geometry.weight_size());
        l.bias.resize(static_cast<std::size_t>(l.geometry.out_channels));
        sig.push_back({l.id, l.geometry.out_channels, l.geometry.in_channels, l.geometry.kernel});
    }
    signature_ = ModelSignature(std::move(sig));
}

template <typename T>
Denoiser<T>::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    build_geometry();
    Rng rng(seed);
    for (auto& l : layers_) {
        // kaiming_uniform(a = sqrt(5)) and the matching bias bound both reduce to 1/sqrt(fan_in).
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.geometry.weight_cols()));
        for (auto& w : l.weight) w = static_cast<T>(rng.uniform(-bound, bound));
        for (auto& b : l.bias) b = static_cast<T>(rng.uniform(-bound, bound));
    }
}

template <typename T>
Denoiser<T> Denoiser<T>::from_layers(const DenoiserConfig& config, std::vector<HostLayer<T>> layers) {
    Denoiser<T> out;
    out.config_ = config;
    out.config_.validate();
    out.build_geometry();
    if (layers.size() != out.layers_.size()) throw FormatError("denoiser layer count mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& dst = out.layers_[i];
        if (layers[i].id != dst.id || layers[i].weight.size() != dst.weight.size() ||
            layers[i].bias.size() != dst.bias.size()) {
            throw FormatError("stored layer '" + layers[i].id + "' does not match the configuration");
        }
        dst.weight = std::move(layers[i].weight);
        dst.bias = std::move(layers[i].bias);
    }
    return out;
}

template <typename T>
std::size_t Denoiser<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
}

template <typename T>
std::vector<HostLayer<T>> Denoiser<T>::zero_grads() const {
    auto out = layers_;
    for (auto& l : out) {
        std::fill(l.weight.begin(), l.weight.end(), T{0});
        std::fill(l.bias.begin(), l.bias.end(), T{0});
    }
    return out;
}

template <typename T>
Matrix<T> Denoiser<T>::time_features(std::span<const int> t) const {
    const int half = config_.time_features / 2;
    Matrix<T> tf(t.size(), static_cast<std::size_t>(config_.time_features));
    for (std::size_t r = 0; r < t.size(); ++r) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(1000.0) * i / half);
            const double arg = static_cast<double>(t[r]) * freq;
            tf(r, static_cast<std::size_t>(i)) = static_cast<T>(std::sin(arg));
            tf(r, static_cast<std::size_t>(half + i)) = static_cast<T>(std::cos(arg));
        }
    }
    return tf;
}

template <typename T>
void Denoiser<T>::apply(DenoiserLayer id, const Matrix<T>& in, Matrix<T>& out,
                        std::span<const Intervention<T>> ivs, DenoiserCache<T>* cache) const {
    const auto& host = layer(id);
    const std::size_t batch = in.rows();
    out = Matrix<T>(batch, host.geometry.output_size());
    kernels::forward<T>(host.geometry, batch, in.span(), host.weight, host.bias, out.span());
    for (std::size_t k = 0; k < ivs.size(); ++k) {
        if (ivs[k].gamma == T{0}) continue;
        const auto& adapter = ivs[k].membrane->layers.at(host.id);
        Matrix<T>* reg = cache ? &cache->reg[k][static_cast<std::size_t>(id)] : nullptr;
        add_intervention(host.geometry, in, adapter, ivs[k].gamma, out, reg);
    }
}

template <typename T>
Matrix<T> Denoiser<T>::predict(const Matrix<T>& x, const Matrix<T>& cond, std::span<const int> t,
                               std::span<const Intervention<T>> interventions,
                               DenoiserCache<T>* cache) const {
    const std::size_t batch = x.rows();
    if (x.cols() != sample_dim() || cond.rows() != batch ||
        cond.cols() != static_cast<std::size_t>(config_.cond_dim) || t.size() != batch) {
        throw ContractError("denoiser input shapes do not match its configuration");
    }
    for (const auto& iv : interventions) {
        if (iv.membrane == nullptr) throw ContractError("null membrane in intervention list");
        if (!iv.membrane->source_signature.compatible_with(signature_)) {
            throw IncompatibleError("membrane '" + iv.membrane->name +
                                    "' was trained on a different model signature");
        }
        if (iv.membrane->layers.size() != layers_.size()) {
            throw ContractError("membrane '" + iv.membrane->name + "' does not cover every layer");
        }
    }

    DenoiserCache<T> local;
    DenoiserCache<T>& c = cache ? *cache : local;
    DenoiserCache<T>* keep = cache;
    if (keep) {
        c.interventions.assign(interventions.begin(), interventions.end());
        c.reg.assign(interventions.size(), {});
        c.x = x;
        c.cond = cond;
    }
    c.tf = time_features(t);

    apply(DenoiserLayer::kConvIn, x, c.u0, interventions, keep);
    silu(c.u0, c.a);
    Matrix<T> zc;
    Matrix<T> zt;
    apply(DenoiserLayer::kInProj, c.a, c.z, interventions, keep);
    apply(DenoiserLayer::kCondProj, cond, zc, interventions, keep);
    apply(DenoiserLayer::kTimeProj, c.tf, zt, interventions, keep);
    add_into(c.z, zc);
    add_into(c.z, zt);
    silu(c.z, c.h);
    apply(DenoiserLayer::kMid, c.h, c.u2, interventions, keep);
    silu(c.u2, c.h2);
    Matrix<T> out;
    apply(DenoiserLayer::kOutProj, c.h2, out, interventions, keep);
    apply(DenoiserLayer::kSkip, x, c.s, interventions, keep);
    apply(DenoiserLayer::kTimeScale, c.tf, c.ts, interventions, keep);

    const std::size_t plane = static_cast<std::size_t>(config_.side) * config_.side;
    for (std::size_t r = 0; r < batch; ++r) {
        auto o = out.row(r);
        auto s = c.s.row(r);
        auto ts = c.ts.row(r);
        for (std::size_t ch = 0; ch < static_cast<std::size_t>(config_.channels); ++ch) {
            const T scale = T{1} + ts[ch];
            for (std::size_t p = 0; p < plane; ++p) o[ch * plane + p] += s[ch * plane + p] * scale;
        }
    }
    return out;
}

template <typename T>
void Denoiser<T>::apply_backward(DenoiserLayer id, const Matrix<T>& in, const Matrix<T>& dy,
                                 Matrix<T>* din, const DenoiserCache<T>& cache,
                                 std::span<BasicMembrane<T>* const> adapter_grads,
                                 std::vector<HostLayer<T>>* host_grads) const {
    const auto& host = layer(id);
    const std::size_t batch = in.rows();
    const auto idx = static_cast<std::size_t>(id);
    if (host_grads) {
        auto& g = (*host_grads)[idx];
        kernels::backward_weight<T>(host.geometry, batch, dy.span(), in.span(), g.weight);
        kernels::backward_bias<T>(host.geometry, batch, dy.span(), g.bias);
    }
    for (std::size_t k = 0; k < cache.interventions.size(); ++k) {
        const auto& iv = cache.interventions[k];
        BasicMembrane<T>* grad = k < adapter_grads.size() ? adapter_grads[k] : nullptr;
        if (iv.gamma == T{0} || (grad == nullptr && din == nullptr)) continue;
        const auto& adapter = iv.membrane->layers.at(host.id);
        const auto reg_geom = adapter.reg_geometry(host.geometry.side);
        const auto sig_geom = adapter.sig_geometry(host.geometry.side);
        const Matrix<T>& r = cache.reg[k][idx];

        Matrix<T> dyg(dy.rows(), dy.cols());
        for (std::size_t i = 0; i < dy.size(); ++i) dyg.data()[i] = iv.gamma * dy.data()[i];
        Matrix<T> dr(batch, reg_geom.output_size());
        kernels::backward_input<T>(sig_geom, batch, dyg.span(), adapter.v_sig, dr.span());
        if (grad) {
            auto& ga = grad->layers.at(host.id);
            kernels::backward_weight<T>(sig_geom, batch, dyg.span(), r.span(), ga.v_sig);
            kernels::backward_weight<T>(reg_geom, batch, dr.span(), in.span(), ga.v_reg);
        }
        if (din) kernels::backward_input<T>(reg_geom, batch, dr.span(), adapter.v_reg, din->span());
    }
    if (din) kernels::backward_input<T>(host.geometry, batch, dy.span(), host.weight, din->span());
}

template <typename T>
void Denoiser<T>::backward(const DenoiserCache<T>& cache, const Matrix<T>& d_eps,
                           std::span<BasicMembrane<T>* const> adapter_grads,
                           std::vector<HostLayer<T>>* host_grads) const {
    const std::size_t batch = cache.x.rows();
    if (d_eps.rows() != batch || d_eps.cols() != sample_dim()) {
        throw ContractError("output gradient shape does not match the cached batch");
    }
    if (host_grads && host_grads->size() != layers_.size()) {
        throw ContractError("host gradient buffer has the wrong layer count");
    }

    // eps = o + s * (1 + ts)
    const std::size_t plane = static_cast<std::size_t>(config_.side) * config_.side;
    const auto channels = static_cast<std::size_t>(config_.channels);
    Matrix<T> ds(batch, d_eps.cols());
    Matrix<T> dts(batch, channels);
    for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t ch = 0; ch < channels; ++ch) {
            const T scale = T{1} + cache.ts(r, ch);
            T acc{0};
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t j = ch * plane + p;
                ds(r, j) = d_eps(r, j) * scale;
                acc += d_eps(r, j) * cache.s(r, j);
            }
            dts(r, ch) = acc;
        }
    }
    apply_backward(DenoiserLayer::kSkip, cache.x, ds, nullptr, cache, adapter_grads, host_grads);
    apply_backward(DenoiserLayer::kTimeScale, cache.tf, dts, nullptr, cache, adapter_grads,
                   host_grads);

    Matrix<T> dh2(batch, cache.h2.cols());
    apply_backward(DenoiserLayer::kOutProj, cache.h2, d_eps, &dh2, cache, adapter_grads, host_grads);
    const Matrix<T> du2 = silu_backward(cache.u2, dh2);
    Matrix<T> dh(batch, cache.h.cols());
    apply_backward(DenoiserLayer::kMid, cache.h, du2, &dh, cache, adapter_grads, host_grads);
    const Matrix<T> dz = silu_backward(cache.z, dh);
    Matrix<T> da(batch, cache.a.cols());
    apply_backward(DenoiserLayer::kInProj, cache.a, dz, &da, cache, adapter_grads, host_grads);
    apply_backward(DenoiserLayer::kCondProj, cache.cond, dz, nullptr, cache, adapter_grads,
                   host_grads);
    apply_backward(DenoiserLayer::kTimeProj, cache.tf, dz, nullptr, cache, adapter_grads,
                   host_grads);
    const Matrix<T> du0 = silu_backward(cache.u0, da);
    apply_backward(DenoiserLayer::kConvIn, cache.x, du0, nullptr, cache, adapter_grads, host_grads);
}

template <typename T>
std::string Denoiser<T>::digest() const {
    Sha256 h;
    const std::array<int, 6> cfg = {config_.channels,   config_.side,     config_.conv_channels,
                                    config_.hidden,     config_.cond_dim, config_.time_features};
    h.update_values<int>(cfg);
    for (const auto& l : layers_) {
        h.update(l.id);
        h.update_values<T>(l.weight);
        h.update_values<T>(l.bias);
    }
    return h.hex_digest();
}

template <typename T>
Matrix<T> condition_rows(const ConceptEncoding& encoding, std::size_t rows) {
    Matrix<T> out(rows, encoding.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < encoding.size(); ++j) out(r, j) = static_cast<T>(encoding.values[j]);
    }
    return out;
}

template <typename T>
Matrix<T> condition_batch(std::span<const ConceptEncoding> encodings) {
    if (encodings.empty()) return {};
    Matrix<T> out(encodings.size(), encodings.front().size());
    for (std::size_t r = 0; r < encodings.size(); ++r) {
        if (encodings[r].size() != out.cols()) throw ContractError("encodings differ in length");
        for (std::size_t j = 0; j < out.cols(); ++j) out(r, j) = static_cast<T>(encodings[r].values[j]);
    }
    return out;
}

template <typename T>
Matrix<T> generate_samples(const Denoiser<T>& model, const NoiseSchedule& schedule,
                           const ConceptEncoding& cond, std::size_t n, std::uint64_t seed,
                           std::span<const Intervention<T>> interventions, int sampler_steps) {
    Matrix<T> rows;
    NoisePredictor<T> predictor = [&](const Matrix<T>& x, int t, Matrix<T>& eps) {
        if (rows.rows() != x.rows()) rows = condition_rows<T>(cond, x.rows());
        const std::vector<int> ts(x.rows(), t);
        eps = model.predict(x, rows, ts, interventions);
    };
    return sample<T>(schedule, predictor, n, model.sample_dim(), seed, SamplerOptions{sampler_steps, 0});
}

template class Denoiser<float>;
template class Denoiser<double>;
template Matrix<float> condition_rows<float>(const ConceptEncoding&, std::size_t);
template Matrix<double> condition_rows<double>(const ConceptEncoding&, std::size_t);
template Matrix<float> condition_batch<float>(std::span<const ConceptEncoding>);
template Matrix<double> condition_batch<double>(std::span<const ConceptEncoding>);
template Matrix<float> generate_samples<float>(const Denoiser<float>&, const NoiseSchedule&,
                                               const ConceptEncoding&, std::size_t, std::uint64_t,
                                               std::span<const Intervention<float>>, int);
template Matrix<double> generate_samples<double>(const Denoiser<double>&, const NoiseSchedule&,
                                                 const ConceptEncoding&, std::size_t, std::uint64_t,
                                                 std::span<const Intervention<double>>, int);

}  // namespace spm
