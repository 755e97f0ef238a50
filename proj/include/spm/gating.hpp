// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "spm/adapter.hpp"
#include "spm/text.hpp"

namespace spm {

/// Fraction of the concept's distinct tokens that also occur in the prompt.
/// Throws ConfigError if the concept has no tokens.
double token_similarity(std::string_view concept_text, std::string_view prompt,
                        const TextEncoder& tokenizer);

/// Cosine of the pooled encodings, clamped below at 0.
double global_similarity(std::string_view concept_text, std::string_view prompt,
                         const TextEncoder& encoder);

struct TargetGate {
    std::string target;
    double s_f = 0.0;
    double s_t = 0.0;
    double gamma = 0.0;  // max(s_f, s_t)
};

struct GateReport {
    std::string membrane;
    std::string prompt;
    std::vector<TargetGate> targets;
    double gamma = 0.0;         // max over targets, in [0, 1]
    double gamma_scaled = 0.0;  // after the user multiplier (or the fixed value with FT off)
    bool transport = true;      // false when facilitated transport was disabled
};

struct GateOptions {
    double gamma_scale = 1.0;
    /// Largest accepted gamma_scale.
    double max_gamma = 4.0;
    /// When false every membrane runs at gamma_scale regardless of the prompt.
    bool facilitated_transport = true;

    void validate() const;
};

GateReport permeability(const Membrane& membrane, std::string_view prompt,
                        const TextEncoder& encoder, const GateOptions& options = {});

/// Single-line key=value rendering used by `spm gate`.
std::string format_gate_report(const GateReport& report);

}  // namespace spm
