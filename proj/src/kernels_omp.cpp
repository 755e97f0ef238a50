// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "spm/kernels.hpp"

#include <algorithm>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace spm::kernels {

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace omp {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::int64_t kParallelWork = 1 << 15;

std::int64_t work(const LayerGeometry& g, std::size_t batch) {
    return static_cast<std::int64_t>(batch) * g.output_size() * g.weight_cols();
}

// Valid output range [lo, hi) for which `out + shift` stays inside [0, side).
inline void valid_range(int shift, int side, int& lo, int& hi) {
    lo = std::max(0, -shift);
    hi = std::min(side, side - shift);
}

}  // namespace

template <typename T>
void forward(const LayerGeometry& g, std::size_t batch, std::span<const T> x,
             std::span<const T> weight, std::span<const T> bias, std::span<T> y) {
    const auto nb = static_cast<std::int64_t>(batch);
    const int n_out = g.out_channels;
    const std::size_t in_size = g.input_size();
    const std::size_t out_size = g.output_size();
    const bool parallel = work(g, batch) >= kParallelWork;

    if (g.is_linear()) {
        const int n_in = g.in_channels;
#pragma omp parallel for collapse(2) schedule(static) if (parallel)
        for (std::int64_t b = 0; b < nb; ++b) {
            for (int o = 0; o < n_out; ++o) {
                const T* xb = x.data() + b * in_size;
                const T* wo = weight.data() + static_cast<std::size_t>(o) * n_in;
                T acc = T{0};
#pragma omp simd reduction(+ : acc)
                for (int i = 0; i < n_in; ++i) acc += wo[i] * xb[i];
                y[b * out_size + o] = acc + (bias.empty() ? T{0} : bias[o]);
            }
        }
        return;
    }

    const int s = g.side;
    const int k = g.kernel;
    const int pad = k / 2;
    const std::size_t plane = static_cast<std::size_t>(s) * s;
#pragma omp parallel for collapse(2) schedule(static) if (parallel)
    for (std::int64_t b = 0; b < nb; ++b) {
        for (int o = 0; o < n_out; ++o) {
            const T* xb = x.data() + b * in_size;
            T* yo = y.data() + b * out_size + o * plane;
            const T init = bias.empty() ? T{0} : bias[o];
            std::fill(yo, yo + plane, init);
            for (int i = 0; i < g.in_channels; ++i) {
                const T* xi = xb + i * plane;
                for (int ky = 0; ky < k; ++ky) {
                    int y_lo, y_hi;
                    valid_range(ky - pad, s, y_lo, y_hi);
                    for (int kx = 0; kx < k; ++kx) {
                        int x_lo, x_hi;
                        valid_range(kx - pad, s, x_lo, x_hi);
                        const T w = weight[(o * g.in_channels + i) * k * k + ky * k + kx];
                        for (int oy = y_lo; oy < y_hi; ++oy) {
                            const int row = (oy + ky - pad) * s + kx - pad;
                            T* yrow = yo + oy * s;
                            for (int ox = x_lo; ox < x_hi; ++ox) yrow[ox] += w * xi[row + ox];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void backward_input(const LayerGeometry& g, std::size_t batch, std::span<const T> dy,
                    std::span<const T> weight, std::span<T> dx) {
    const auto nb = static_cast<std::int64_t>(batch);
    const int n_in = g.in_channels;
    const std::size_t in_size = g.input_size();
    const std::size_t out_size = g.output_size();
    const bool parallel = work(g, batch) >= kParallelWork;

    if (g.is_linear()) {
        const int n_out = g.out_channels;
#pragma omp parallel for schedule(static) if (parallel)
        for (std::int64_t b = 0; b < nb; ++b) {
            T* dxb = dx.data() + b * in_size;
            const T* dyb = dy.data() + b * out_size;
            for (int o = 0; o < n_out; ++o) {
                const T grad = dyb[o];
                const T* wo = weight.data() + static_cast<std::size_t>(o) * n_in;
#pragma omp simd
                for (int i = 0; i < n_in; ++i) dxb[i] += grad * wo[i];
            }
        }
        return;
    }

    // Gather form: each (b, i) plane of dx is owned by one iteration.
    const int s = g.side;
    const int k = g.kernel;
    const int pad = k / 2;
    const std::size_t plane = static_cast<std::size_t>(s) * s;
#pragma omp parallel for collapse(2) schedule(static) if (parallel)
    for (std::int64_t b = 0; b < nb; ++b) {
        for (int i = 0; i < n_in; ++i) {
            T* dxi = dx.data() + b * in_size + i * plane;
            const T* dyb = dy.data() + b * out_size;
            for (int o = 0; o < g.out_channels; ++o) {
                const T* dyo = dyb + o * plane;
                for (int ky = 0; ky < k; ++ky) {
                    // input row iy receives output row oy = iy - ky + pad
                    int y_lo, y_hi;
                    valid_range(pad - ky, s, y_lo, y_hi);
                    for (int kx = 0; kx < k; ++kx) {
                        int x_lo, x_hi;
                        valid_range(pad - kx, s, x_lo, x_hi);
                        const T w = weight[(o * n_in + i) * k * k + ky * k + kx];
                        for (int iy = y_lo; iy < y_hi; ++iy) {
                            const int row = (iy - ky + pad) * s + pad - kx;
                            T* dxrow = dxi + iy * s;
                            for (int ix = x_lo; ix < x_hi; ++ix) dxrow[ix] += w * dyo[row + ix];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void backward_weight(const LayerGeometry& g, std::size_t batch, std::span<const T> dy,
                     std::span<const T> x, std::span<T> dweight) {
    const int n_out = g.out_channels;
    const int n_in = g.in_channels;
    const std::size_t in_size = g.input_size();
    const std::size_t out_size = g.output_size();
    const bool parallel = work(g, batch) >= kParallelWork;

    if (g.is_linear()) {
#pragma omp parallel for schedule(static) if (parallel)
        for (int o = 0; o < n_out; ++o) {
            T* dwo = dweight.data() + static_cast<std::size_t>(o) * n_in;
            for (std::size_t b = 0; b < batch; ++b) {
                const T grad = dy[b * out_size + o];
                const T* xb = x.data() + b * in_size;
#pragma omp simd
                for (int i = 0; i < n_in; ++i) dwo[i] += grad * xb[i];
            }
        }
        return;
    }

    const int s = g.side;
    const int k = g.kernel;
    const int pad = k / 2;
    const std::size_t plane = static_cast<std::size_t>(s) * s;
#pragma omp parallel for collapse(2) schedule(static) if (parallel)
    for (int o = 0; o < n_out; ++o) {
        for (int i = 0; i < n_in; ++i) {
            for (int ky = 0; ky < k; ++ky) {
                int y_lo, y_hi;
                valid_range(ky - pad, s, y_lo, y_hi);
                for (int kx = 0; kx < k; ++kx) {
                    int x_lo, x_hi;
                    valid_range(kx - pad, s, x_lo, x_hi);
                    T acc = T{0};
                    for (std::size_t b = 0; b < batch; ++b) {
                        const T* dyo = dy.data() + b * out_size + o * plane;
                        const T* xi = x.data() + b * in_size + i * plane;
                        for (int oy = y_lo; oy < y_hi; ++oy) {
                            const int row = (oy + ky - pad) * s + kx - pad;
                            const T* dyrow = dyo + oy * s;
                            for (int ox = x_lo; ox < x_hi; ++ox) acc += dyrow[ox] * xi[row + ox];
                        }
                    }
                    dweight[(o * n_in + i) * k * k + ky * k + kx] += acc;
                }
            }
        }
    }
}

template <typename T>
void backward_bias(const LayerGeometry& g, std::size_t batch, std::span<const T> dy,
                   std::span<T> dbias) {
    const std::size_t plane = static_cast<std::size_t>(g.side) * g.side;
    const std::size_t out_size = g.output_size();
#pragma omp parallel for schedule(static) if (batch * out_size >= kParallelWork)
    for (int o = 0; o < g.out_channels; ++o) {
        T acc = T{0};
        for (std::size_t b = 0; b < batch; ++b) {
            const T* dyo = dy.data() + b * out_size + o * plane;
            for (std::size_t p = 0; p < plane; ++p) acc += dyo[p];
        }
        dbias[o] += acc;
    }
}

#define SPM_INSTANTIATE(T)                                                                   \
    template void forward<T>(const LayerGeometry&, std::size_t, std::span<const T>,          \
                             std::span<const T>, std::span<const T>, std::span<T>);          \
    template void backward_input<T>(const LayerGeometry&, std::size_t, std::span<const T>,   \
                                    std::span<const T>, std::span<T>);                       \
    template void backward_weight<T>(const LayerGeometry&, std::size_t, std::span<const T>,  \
                                     std::span<const T>, std::span<T>);                      \
    template void backward_bias<T>(const LayerGeometry&, std::size_t, std::span<const T>,    \
                                   std::span<T>);

SPM_INSTANTIATE(float)
SPM_INSTANTIATE(double)

#undef SPM_INSTANTIATE

}  // namespace omp
}  // namespace spm::kernels
