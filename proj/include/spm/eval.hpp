// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spm/registry.hpp"
#include "spm/testbed.hpp"

namespace spm {

struct EvalOptions {
    /// Samples per concept, spread over the prompt templates.
    int samples = 64;
    std::uint64_t seed = 0;
    int sampler_steps = 0;
    /// RBF kernel exp(-|a - b|^2 / kernel_width) on classifier features.
    double kernel_width = 20.0;
    /// Class counted as "erased"; -1 selects the background class.
    int surrogate_label = -1;
};

struct EvalRow {
    std::string concept_name;
    int label = 0;
    double concept_score = 0.0;  // mean classifier confidence on the concept's label
    double erasure_rate = 0.0;   // fraction classified as the surrogate class
    double accuracy = 0.0;       // fraction classified as the concept
    double drift = 0.0;          // MMD^2 against frozen generations
    int samples = 0;
    std::uint64_t seed = 0;
};

struct EvalReport {
    std::vector<std::string> membranes;
    bool facilitated_transport = true;
    double gamma_scale = 1.0;
    std::vector<EvalRow> rows;

    const EvalRow& row(int label) const;
    /// Pretty-printed JSON with a fixed key order.
    std::string to_json() const;
};

/// Biased squared MMD with kernel exp(-|a - b|^2 / width); 0 for identical sets.
double mmd2(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
            double width);

/// Generates `options.samples` images for one class through the composed model
/// (templates in turn, seeds paired with the frozen reference) and scores them.
EvalRow eval_concept(const ComposedModel& model, const Testbed& testbed, int label,
                     const EvalOptions& options);

EvalReport evaluate(const ComposedModel& model, const Testbed& testbed, const std::vector<int>& labels,
                    const EvalOptions& options);

}  // namespace spm
