// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "spm/concept_space.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "spm/error.hpp"

namespace spm {

double anchor_weight(const ConceptEncoding& c, const ConceptEncoding& target, double alpha) {
    if (!(alpha >= 0.0)) throw ConfigError("anchor sharpness alpha must be >= 0");
    const double base = 1.0 - std::abs(cosine(c, target));
    if (base <= 1e-12) return 0.0;
    return std::pow(base, alpha);
}

AnchorPool::AnchorPool(std::vector<ConceptEncoding> candidates, std::vector<double> weights,
                       double alpha)
    : candidates_(std::move(candidates)), weights_(std::move(weights)), alpha_(alpha) {
    if (candidates_.empty()) throw ConfigError("anchor vocabulary is empty");
    if (candidates_.size() != weights_.size()) {
        throw ContractError("anchor pool needs one weight per candidate");
    }
    for (double w : weights_) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ContractError("anchor weights must be >= 0");
    }
    total_ = std::accumulate(weights_.begin(), weights_.end(), 0.0);
    if (!(total_ > 0.0)) {
        throw ConfigError("anchor pool has zero total weight: every candidate is parallel to the "
                          "target");
    }
}

std::vector<double> AnchorPool::probabilities() const {
    std::vector<double> p(weights_);
    for (double& v : p) v /= total_;
    return p;
}

AnchorPool build_anchor_pool(std::span<const std::string> vocabulary,
                             const ConceptEncoding& target, double alpha,
                             const TextEncoder& encoder) {
    return build_anchor_pool(vocabulary, std::span<const ConceptEncoding>(&target, 1), alpha,
                             encoder);
}

AnchorPool build_anchor_pool(std::span<const std::string> vocabulary,
                             std::span<const ConceptEncoding> targets, double alpha,
                             const TextEncoder& encoder) {
    if (vocabulary.empty()) throw ConfigError("anchor vocabulary is empty");
    if (targets.empty()) throw ConfigError("anchor pool needs at least one target encoding");
    std::vector<ConceptEncoding> candidates;
    std::vector<double> weights;
    candidates.reserve(vocabulary.size());
    for (const auto& word : vocabulary) {
        auto enc = encoder.encode(word);
        double w = 1.0;
        for (const auto& target : targets) w = std::min(w, anchor_weight(enc, target, alpha));
        candidates.push_back(std::move(enc));
        weights.push_back(w);
    }
    return AnchorPool(std::move(candidates), std::move(weights), alpha);
}

std::vector<std::size_t> sample_anchor_indices(const AnchorPool& pool, int n, std::uint64_t seed) {
    if (n < 1) throw ConfigError("anchor sample count must be >= 1");
    std::mt19937_64 engine(seed);
    std::discrete_distribution<std::size_t> dist(pool.weights().begin(), pool.weights().end());
    std::vector<std::size_t> out(static_cast<std::size_t>(n));
    for (auto& i : out) i = dist(engine);
    return out;
}

std::vector<ConceptEncoding> sample_anchors(const AnchorPool& pool, int n, std::uint64_t seed) {
    std::vector<ConceptEncoding> out;
    for (std::size_t i : sample_anchor_indices(pool, n, seed)) {
        out.push_back(pool.candidates()[i]);
    }
    return out;
}

}  // namespace spm
