// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "spm/kernels.hpp"

namespace spm::kernels::reference {

template <typename T>
void forward(const LayerGeometry& g, std::size_t batch, std::span<const T> x,
             std::span<const T> weight, std::span<const T> bias, std::span<T> y) {
    const int s = g.side;
    const int k = g.kernel;
    const int pad = k / 2;
    for (std::size_t b = 0; b < batch; ++b) {
        const T* xb = x.data() + b * g.input_size();
        T* yb = y.data() + b * g.output_size();
        for (int o = 0; o < g.out_channels; ++o) {
            for (int oy = 0; oy < s; ++oy) {
                for (int ox = 0; ox < s; ++ox) {
                    T acc = bias.empty() ? T{0} : bias[o];
                    for (int i = 0; i < g.in_channels; ++i) {
                        for (int ky = 0; ky < k; ++ky) {
                            const int iy = oy + ky - pad;
                            if (iy < 0 || iy >= s) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                const int ix = ox + kx - pad;
                                if (ix < 0 || ix >= s) continue;
                                acc += weight[(o * g.in_channels + i) * k * k + ky * k + kx] *
                                       xb[(i * s + iy) * s + ix];
                            }
                        }
                    }
                    yb[(o * s + oy) * s + ox] = acc;
                }
            }
        }
    }
}

template <typename T>
void backward_input(const LayerGeometry& g, std::size_t batch, std::span<const T> dy,
                    std::span<const T> weight, std::span<T> dx) {
    const int s = g.side;
    const int k = g.kernel;
    const int pad = k / 2;
    for (std::size_t b = 0; b < batch; ++b) {
        const T* dyb = dy.data() + b * g.output_size();
        T* dxb = dx.data() + b * g.input_size();
        for (int o = 0; o < g.out_channels; ++o) {
            for (int oy = 0; oy < s; ++oy) {
                for (int ox = 0; ox < s; ++ox) {
                    const T grad = dyb[(o * s + oy) * s + ox];
                    for (int i = 0; i < g.in_channels; ++i) {
                        for (int ky = 0; ky < k; ++ky) {
                            const int iy = oy + ky - pad;
                            if (iy < 0 || iy >= s) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                const int ix = ox + kx - pad;
                                if (ix < 0 || ix >= s) continue;
                                dxb[(i * s + iy) * s + ix] +=
                                    weight[(o * g.in_channels + i) * k * k + ky * k + kx] * grad;
                            }
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
    const int s = g.side;
    const int k = g.kernel;
    const int pad = k / 2;
    for (std::size_t b = 0; b < batch; ++b) {
        const T* dyb = dy.data() + b * g.output_size();
        const T* xb = x.data() + b * g.input_size();
        for (int o = 0; o < g.out_channels; ++o) {
            for (int oy = 0; oy < s; ++oy) {
                for (int ox = 0; ox < s; ++ox) {
                    const T grad = dyb[(o * s + oy) * s + ox];
                    for (int i = 0; i < g.in_channels; ++i) {
                        for (int ky = 0; ky < k; ++ky) {
                            const int iy = oy + ky - pad;
                            if (iy < 0 || iy >= s) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                const int ix = ox + kx - pad;
                                if (ix < 0 || ix >= s) continue;
                                dweight[(o * g.in_channels + i) * k * k + ky * k + kx] +=
                                    grad * xb[(i * s + iy) * s + ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void backward_bias(const LayerGeometry& g, std::size_t batch, std::span<const T> dy,
                   std::span<T> dbias) {
    const std::size_t plane = static_cast<std::size_t>(g.side) * g.side;
    for (std::size_t b = 0; b < batch; ++b) {
        for (int o = 0; o < g.out_channels; ++o) {
            for (std::size_t p = 0; p < plane; ++p) {
                dbias[o] += dy[b * g.output_size() + o * plane + p];
            }
        }
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

}  // namespace spm::kernels::reference
