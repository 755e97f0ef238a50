// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

namespace spm::kernels {

/// Geometry of a host layer. A linear layer is a 1x1 convolution on a 1x1 grid.
/// Convolutions use stride 1 and "same" zero padding (kernel / 2).
struct LayerGeometry {
    int out_channels = 0;
    int in_channels = 0;
    int kernel = 1;
    int side = 1;

    bool is_linear() const noexcept { return side == 1 && kernel == 1; }
    std::size_t input_size() const noexcept {
        return static_cast<std::size_t>(in_channels) * side * side;
    }
    std::size_t output_size() const noexcept {
        return static_cast<std::size_t>(out_channels) * side * side;
    }
    /// Columns of the weight matrix: in_channels * kernel^2.
    std::size_t weight_cols() const noexcept {
        return static_cast<std::size_t>(in_channels) * kernel * kernel;
    }
    std::size_t weight_size() const noexcept { return out_channels * weight_cols(); }

    friend bool operator==(const LayerGeometry&, const LayerGeometry&) = default;
};

// All kernels take `batch` rows laid out contiguously. Forward overwrites `y`
// (bias may be empty); both backward kernels accumulate into their output.

/// Single-threaded loop-nest implementation. Kept as the oracle for the
/// parallel kernels and as the benchmark baseline.
namespace reference {

template <typename T>
void forward(const LayerGeometry& g, std::size_t batch, std::span<const T> x,
             std::span<const T> weight, std::span<const T> bias, std::span<T> y);

template <typename T>
void backward_input(const LayerGeometry& g, std::size_t batch, std::span<const T> dy,
                    std::span<const T> weight, std::span<T> dx);

template <typename T>
void backward_weight(const LayerGeometry& g, std::size_t batch, std::span<const T> dy,
                     std::span<const T> x, std::span<T> dweight);

template <typename T>
void backward_bias(const LayerGeometry& g, std::size_t batch, std::span<const T> dy,
                   std::span<T> dbias);

}  // namespace reference

/// OpenMP kernels. Every output element is owned by exactly one thread and
/// reduced in a fixed order, so results do not depend on the thread count.
namespace omp {

template <typename T>
void forward(const LayerGeometry& g, std::size_t batch, std::span<const T> x,
             std::span<const T> weight, std::span<const T> bias, std::span<T> y);

template <typename T>
void backward_input(const LayerGeometry& g, std::size_t batch, std::span<const T> dy,
                    std::span<const T> weight, std::span<T> dx);

template <typename T>
void backward_weight(const LayerGeometry& g, std::size_t batch, std::span<const T> dy,
                     std::span<const T> x, std::span<T> dweight);

template <typename T>
void backward_bias(const LayerGeometry& g, std::size_t batch, std::span<const T> dy,
                   std::span<T> dbias);

}  // namespace omp

// The library always runs the parallel kernels.
using omp::backward_bias;
using omp::backward_input;
using omp::backward_weight;
using omp::forward;

/// Number of threads the parallel kernels will use.
int max_threads();

}  // namespace spm::kernels
