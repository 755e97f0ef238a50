// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "spm/concept_space.hpp"
#include "spm/error.hpp"
#include "spm/testbed.hpp"
#include "support/fixtures.hpp"

namespace {

using spm::ConceptEncoding;

ConceptEncoding enc(std::vector<double> v) { return {std::move(v), ""}; }

// p-value of Pearson's statistic for observed counts against probabilities,
// skipping zero-probability cells (which must stay empty).
double chi_square_p(const std::vector<std::size_t>& counts, const std::vector<double>& probs,
                    std::size_t draws) {
    double stat = 0.0;
    int cells = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (probs[i] == 0.0) {
            EXPECT_EQ(counts[i], 0u) << "zero-weight candidate " << i << " was drawn";
            continue;
        }
        const double expected = probs[i] * static_cast<double>(draws);
        const double diff = static_cast<double>(counts[i]) - expected;
        stat += diff * diff / expected;
        ++cells;
    }
    boost::math::chi_squared dist(cells - 1);
    return boost::math::cdf(boost::math::complement(dist, stat));
}

TEST(AnchorWeight, Examples) {
    const auto a = enc({1.0, 0.0});
    EXPECT_EQ(spm::anchor_weight(a, a, 1.0), 0.0);
    EXPECT_EQ(spm::anchor_weight(a, a, 2.5), 0.0);
    EXPECT_EQ(spm::anchor_weight(enc({0.0, 3.0}), a, 1.0), 1.0);
    // cos = 0.5
    EXPECT_NEAR(spm::anchor_weight(enc({0.5, std::sqrt(0.75)}), a, 2.0), 0.25, 1e-15);
}

TEST(AnchorWeight, ParallelIsZeroEvenForAlphaZero) {
    const auto a = enc({1.0, 2.0, 3.0});
    EXPECT_EQ(spm::anchor_weight(enc({2.0, 4.0, 6.0}), a, 0.0), 0.0);
    EXPECT_EQ(spm::anchor_weight(enc({-1.0, -2.0, -3.0}), a, 0.0), 0.0);
    EXPECT_EQ(spm::anchor_weight(enc({1.0, 0.0, 0.0}), a, 0.0), 1.0);
}

TEST(AnchorWeight, SignInvariantAndSharpening) {
    const auto target = spm::testing::random_encoding(16, 1);
    for (std::uint64_t s = 2; s < 30; ++s) {
        auto c = spm::testing::random_encoding(16, s);
        auto neg = c;
        for (double& v : neg.values) v = -v;
        EXPECT_EQ(spm::anchor_weight(c, target, 1.3), spm::anchor_weight(neg, target, 1.3));
        // Relative weight against an orthogonal candidate (weight 1) drops as alpha grows.
        const double w1 = spm::anchor_weight(c, target, 1.0);
        const double w2 = spm::anchor_weight(c, target, 2.0);
        const double w3 = spm::anchor_weight(c, target, 3.0);
        EXPECT_LT(w2, w1);
        EXPECT_LT(w3, w2);
    }
}

TEST(AnchorWeight, ErrorCases) {
    const auto a = enc({1.0, 0.0});
    EXPECT_THROW(spm::anchor_weight(enc({0.0, 0.0}), a, 1.0), spm::DegenerateInputError);
    EXPECT_THROW(spm::anchor_weight(a, a, -1.0), spm::ConfigError);
}

TEST(AnchorPool, TargetOnlyVocabularyIsRejected) {
    spm::ToyTextEncoder toy;
    const std::vector<std::string> vocab = {"red square"};
    EXPECT_THROW(spm::build_anchor_pool(vocab, toy.encode("red square"), 1.0, toy), spm::ConfigError);
    EXPECT_THROW(spm::build_anchor_pool(std::span<const std::string>{}, toy.encode("x"), 1.0, toy),
                 spm::ConfigError);
}

TEST(AnchorPool, ConstructorChecks) {
    EXPECT_THROW(spm::AnchorPool({}, {}, 1.0), spm::ConfigError);
    EXPECT_THROW(spm::AnchorPool({enc({1.0})}, {1.0, 2.0}, 1.0), spm::ContractError);
    EXPECT_THROW(spm::AnchorPool({enc({1.0})}, {-1.0}, 1.0), spm::ContractError);
    const spm::AnchorPool pool({enc({1.0}), enc({2.0})}, {1.0, 3.0}, 1.0);
    EXPECT_EQ(pool.total_weight(), 4.0);
    EXPECT_EQ(pool.probabilities(), (std::vector<double>{0.25, 0.75}));
}

TEST(AnchorPool, OnlyNonParallelCandidateIsDrawn) {
    const auto target = enc({1.0, 0.0});
    const std::vector<ConceptEncoding> cands = {enc({0.0, 1.0}), enc({1.0, 0.0})};
    std::vector<double> w;
    for (const auto& c : cands) w.push_back(spm::anchor_weight(c, target, 1.0));
    const spm::AnchorPool pool(cands, w, 1.0);
    for (std::size_t i : spm::sample_anchor_indices(pool, 500, 3)) EXPECT_EQ(i, 0u);
}

TEST(AnchorPool, ToyVocabularyExcludesTheTarget) {
    spm::ToyTextEncoder toy;
    const auto& concepts = spm::ToyVocabulary::standard().concepts();
    const auto pool = spm::build_anchor_pool(concepts, toy.encode("red square"), 1.0, toy);
    ASSERT_EQ(pool.size(), concepts.size());
    for (std::size_t i = 0; i < concepts.size(); ++i) {
        if (concepts[i] == "red square") {
            EXPECT_EQ(pool.weights()[i], 0.0);
        } else {
            EXPECT_GT(pool.weights()[i], 0.0) << concepts[i];
        }
    }
}

TEST(AnchorPool, MultiTargetTakesTheSmallestWeight) {
    spm::ToyTextEncoder toy;
    const auto& concepts = spm::ToyVocabulary::standard().concepts();
    const std::vector<ConceptEncoding> targets = {toy.encode("red square"), toy.encode("blue bar")};
    const auto both = spm::build_anchor_pool(concepts, targets, 1.0, toy);
    const auto first = spm::build_anchor_pool(concepts, targets[0], 1.0, toy);
    const auto second = spm::build_anchor_pool(concepts, targets[1], 1.0, toy);
    for (std::size_t i = 0; i < concepts.size(); ++i) {
        EXPECT_EQ(both.weights()[i], std::min(first.weights()[i], second.weights()[i]));
    }
}

TEST(SampleAnchors, DeterministicAndSized) {
    const spm::AnchorPool pool({enc({1.0, 0.0}), enc({0.0, 1.0}), enc({1.0, 1.0})}, {1.0, 2.0, 3.0}, 1.0);
    EXPECT_EQ(spm::sample_anchor_indices(pool, 4, 9), spm::sample_anchor_indices(pool, 4, 9));
    EXPECT_NE(spm::sample_anchor_indices(pool, 64, 9), spm::sample_anchor_indices(pool, 64, 10));
    const auto anchors = spm::sample_anchors(pool, 4, 9);
    const auto idx = spm::sample_anchor_indices(pool, 4, 9);
    ASSERT_EQ(anchors.size(), 4u);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(anchors[k].values, pool.candidates()[idx[k]].values);
    EXPECT_THROW(spm::sample_anchors(pool, 0, 1), spm::ConfigError);
}

TEST(SampleAnchors, SingleCandidatePoolRepeats) {
    const spm::AnchorPool pool({enc({0.3, 0.4})}, {0.7}, 1.0);
    for (const auto& a : spm::sample_anchors(pool, 16, 4)) EXPECT_EQ(a.values, pool.candidates()[0].values);
}

class AnchorFrequencies : public ::testing::TestWithParam<double> {
protected:
    // Twelve candidates; the last is parallel to the target, weight exactly zero.
    spm::AnchorPool pool() const {
        const double alpha = GetParam();
        const auto target = spm::testing::random_encoding(6, 100);
        std::vector<ConceptEncoding> cands;
        for (std::uint64_t s = 0; s < 11; ++s) cands.push_back(spm::testing::random_encoding(6, 200 + s));
        cands.push_back(target);
        std::vector<double> w;
        for (const auto& c : cands) w.push_back(spm::anchor_weight(c, target, alpha));
        return {cands, w, alpha};
    }

    double p_value(const spm::AnchorPool& p, std::size_t draws, std::uint64_t seed) const {
        std::vector<std::size_t> counts(p.size(), 0);
        for (std::size_t i : spm::sample_anchor_indices(p, static_cast<int>(draws), seed)) ++counts[i];
        return chi_square_p(counts, p.probabilities(), draws);
    }
};

// Empirical frequencies of 10,000 draws match the normalised weights.
TEST_P(AnchorFrequencies, ChiSquareAgainstWeights) {
    const auto p = pool();
    const auto k = static_cast<std::uint64_t>(GetParam());
    EXPECT_GT(p_value(p, 10000, spm::derive_seed(2026, k)), 0.01);
}

// Across 200 independent streams the test rejects at its nominal 1% rate:
// more than 6 rejections has probability below 0.005 under a correct sampler.
TEST_P(AnchorFrequencies, RejectionRateIsNominal) {
    const auto p = pool();
    int rejected = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) rejected += p_value(p, 2000, seed + 1) <= 0.01 ? 1 : 0;
    EXPECT_LE(rejected, 6);
}

INSTANTIATE_TEST_SUITE_P(Alpha, AnchorFrequencies, ::testing::Values(0.0, 1.0, 2.0));

}  // namespace
