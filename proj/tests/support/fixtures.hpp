// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "spm/adapter.hpp"
#include "spm/denoiser.hpp"
#include "spm/random.hpp"
#include "spm/testbed.hpp"
#include "spm/text.hpp"

namespace spm::testing {

/// Directory shared by every test process for pre-trained testbeds.
inline std::filesystem::path testbed_cache() {
    if (const char* dir = std::getenv("SPM_TESTBED_CACHE"); dir != nullptr && *dir != '\0') {
        return dir;
    }
    return std::filesystem::temp_directory_path() / "spm-testbed-cache";
}

/// Seed-0 testbed, built once per cache directory.
inline const Testbed& shared_testbed() {
    static const Testbed tb = cached_testbed(testbed_cache(), 0);
    return tb;
}

/// Full architecture at widths small enough for finite differences.
inline DenoiserConfig tiny_config() {
    DenoiserConfig c;
    c.channels = 2;
    c.side = 3;
    c.conv_channels = 2;
    c.hidden = 4;
    c.cond_dim = 4;
    c.time_features = 4;
    return c;
}

inline ConceptEncoding random_encoding(std::size_t dim, std::uint64_t seed, std::string source = {}) {
    Rng rng(seed);
    ConceptEncoding e;
    e.values.resize(dim);
    for (auto& v : e.values) v = rng.normal();
    e.source = std::move(source);
    return e;
}

template <typename T>
Matrix<T> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
    Matrix<T> m(rows, cols);
    Rng rng(seed);
    for (auto& v : m.values()) v = static_cast<T>(scale * rng.normal());
    return m;
}

/// Injected membrane with non-zero v_sig so it actually changes the output.
inline Membrane perturbed_membrane(const ModelSignature& sig, int d, std::uint64_t seed,
                                   double scale, std::string target = "target") {
    Membrane m = inject(sig, d, seed);
    m.name = target;
    m.targets = {std::move(target)};
    Rng rng(derive_seed(seed, 77));
    for (auto& [id, layer] : m.layers) {
        for (auto& v : layer.v_sig) v = static_cast<float>(scale * rng.normal());
    }
    return m;
}

}  // namespace spm::testing
