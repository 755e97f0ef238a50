// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spm/text.hpp"

namespace spm {

/// Unnormalised anchor sampling weight (1 - |cos(c, c_tar)|)^alpha.
/// Candidates parallel to the target (|cos| within 1e-12 of 1) get exactly 0,
/// also for alpha = 0.
double anchor_weight(const ConceptEncoding& c, const ConceptEncoding& target, double alpha);

/// Candidate concept encodings with their sampling weights.
class AnchorPool {
public:
    AnchorPool(std::vector<ConceptEncoding> candidates, std::vector<double> weights, double alpha);

    const std::vector<ConceptEncoding>& candidates() const noexcept { return candidates_; }
    const std::vector<double>& weights() const noexcept { return weights_; }
    double alpha() const noexcept { return alpha_; }
    double total_weight() const noexcept { return total_; }
    std::size_t size() const noexcept { return candidates_.size(); }

    /// Weights normalised to sum to one.
    std::vector<double> probabilities() const;

private:
    std::vector<ConceptEncoding> candidates_;
    std::vector<double> weights_;
    double alpha_;
    double total_;
};

/// Encodes every vocabulary entry and weights it against the target.
/// Throws ConfigError on an empty vocabulary or zero total weight.
AnchorPool build_anchor_pool(std::span<const std::string> vocabulary,
                             const ConceptEncoding& target, double alpha,
                             const TextEncoder& encoder);

/// Multi-target variant: a candidate's weight is its smallest weight against
/// any of the targets, so it is suppressed near every erased concept.
AnchorPool build_anchor_pool(std::span<const std::string> vocabulary,
                             std::span<const ConceptEncoding> targets, double alpha,
                             const TextEncoder& encoder);

/// n independent categorical draws proportional to the pool weights.
std::vector<ConceptEncoding> sample_anchors(const AnchorPool& pool, int n, std::uint64_t seed);

/// Indices of n draws; same stream as sample_anchors for a given seed.
std::vector<std::size_t> sample_anchor_indices(const AnchorPool& pool, int n, std::uint64_t seed);

}  // namespace spm
