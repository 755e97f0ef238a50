// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <string>
#include <unordered_map>
#include <vector>

#include "spm/error.hpp"
#include "spm/gating.hpp"
#include "spm/testbed.hpp"
#include "spm/text.hpp"

namespace {

constexpr const char* kStylePrompt =
    "The swirling night sky above the village, in the style of Van Gogh";

spm::Membrane membrane_for(std::vector<std::string> targets, std::string name = "m") {
    spm::Membrane m;
    m.name = std::move(name);
    m.targets = std::move(targets);
    return m;
}

// One-hot word table: disjoint token sets have orthogonal encodings.
spm::TableTextEncoder one_hot_encoder(const std::vector<std::string>& words) {
    std::unordered_map<std::string, std::vector<double>> table;
    for (std::size_t i = 0; i < words.size(); ++i) {
        std::vector<double> v(words.size(), 0.0);
        v[i] = 1.0;
        table.emplace(words[i], std::move(v));
    }
    return spm::TableTextEncoder(std::move(table));
}

std::vector<std::string> synthetic_words(int n) {
    std::vector<std::string> words;
    for (int i = 0; i < n; ++i) words.push_back("w" + std::to_string(i));
    return words;
}

class Gating : public ::testing::Test {
protected:
    spm::ToyTextEncoder toy;
};

TEST_F(Gating, TokenSimilarityExamples) {
    EXPECT_EQ(spm::token_similarity("Van Gogh", kStylePrompt, toy), 1.0);
    EXPECT_EQ(spm::token_similarity("Van Gogh", "Water Lilies by Claude Monet", toy), 0.0);
    EXPECT_EQ(spm::token_similarity("Van Gogh", "a portrait by Gogh", toy), 0.5);
}

TEST_F(Gating, TokenSimilarityFoldsCaseAndDeduplicates) {
    EXPECT_EQ(spm::token_similarity("VAN gogh", "van GOGH", toy), 1.0);
    EXPECT_EQ(spm::token_similarity("gogh gogh van", "gogh", toy), 0.5);
    EXPECT_EQ(spm::token_similarity("red", "a redder square", toy), 0.0);
}

TEST_F(Gating, EmptyConceptIsConfigError) {
    EXPECT_THROW(spm::token_similarity("", "anything", toy), spm::ConfigError);
    EXPECT_THROW(spm::token_similarity(" ,; ", "anything", toy), spm::ConfigError);
}

TEST_F(Gating, GlobalSimilarityOfIdenticalStrings) {
    EXPECT_NEAR(spm::global_similarity("a red square", "a red square", toy), 1.0, 1e-12);
    EXPECT_NEAR(spm::global_similarity(kStylePrompt, kStylePrompt, toy), 1.0, 1e-12);
}

TEST_F(Gating, GlobalSimilarityClampsOrthogonalAndNegative) {
    const spm::TableTextEncoder enc({{"up", {1.0, 0.0}}, {"side", {0.0, 1.0}}, {"down", {-1.0, 0.0}}});
    EXPECT_EQ(spm::global_similarity("up", "side", enc), 0.0);
    EXPECT_EQ(spm::global_similarity("up", "down", enc), 0.0);
    EXPECT_THROW(spm::global_similarity("up", "unknown words", enc), spm::DegenerateInputError);
}

TEST_F(Gating, StylePromptOpensTheMembrane) {
    const auto report = spm::permeability(membrane_for({"Van Gogh"}, "van-gogh"), kStylePrompt, toy);
    ASSERT_EQ(report.targets.size(), 1u);
    EXPECT_EQ(report.targets[0].s_t, 1.0);
    EXPECT_LT(report.targets[0].s_f, 1.0);
    EXPECT_EQ(report.gamma, 1.0);
    EXPECT_EQ(report.gamma_scaled, 1.0);
    EXPECT_TRUE(report.transport);
}

TEST_F(Gating, ToyEncoderRanksRelatedPromptsHigher) {
    const double related = spm::global_similarity("red square", "a photo of a red square", toy);
    const double partial = spm::global_similarity("red square", "a photo of a red ring", toy);
    const double unrelated = spm::global_similarity("red square", "a photo of a blue bar", toy);
    EXPECT_GT(related, partial);
    EXPECT_GT(partial, unrelated);
}

TEST_F(Gating, DisjointOrthogonalPromptGivesZero) {
    const auto enc = one_hot_encoder({"van", "gogh", "water", "lilies", "monet"});
    const auto report = spm::permeability(membrane_for({"Van Gogh"}), "Water Lilies Monet", enc);
    EXPECT_EQ(report.targets[0].s_f, 0.0);
    EXPECT_EQ(report.targets[0].s_t, 0.0);
    EXPECT_EQ(report.gamma, 0.0);
    EXPECT_EQ(report.gamma_scaled, 0.0);
}

TEST_F(Gating, MultiTargetMembraneUsesItsMostActivatedTarget) {
    const auto report =
        spm::permeability(membrane_for({"blue bar", "red square"}), "a red square", toy);
    ASSERT_EQ(report.targets.size(), 2u);
    EXPECT_LT(report.targets[0].gamma, 1.0);
    EXPECT_EQ(report.targets[1].gamma, 1.0);
    EXPECT_EQ(report.gamma, 1.0);
}

TEST_F(Gating, GammaScaleAndTransportSwitch) {
    const auto m = membrane_for({"red square"});
    spm::GateOptions opts;
    opts.gamma_scale = 2.0;
    EXPECT_EQ(spm::permeability(m, "a red square", toy, opts).gamma_scaled, 2.0);
    const auto partial = spm::permeability(m, "a red ring", toy, opts);
    EXPECT_EQ(partial.gamma_scaled, 2.0 * partial.gamma);

    opts.facilitated_transport = false;
    opts.gamma_scale = 1.5;
    for (const char* prompt : {"a red square", "a blue bar", "", "zebra"}) {
        const auto r = spm::permeability(m, prompt, toy, opts);
        EXPECT_EQ(r.gamma_scaled, 1.5) << prompt;
        EXPECT_FALSE(r.transport);
    }
}

TEST_F(Gating, GammaScaleOutsideRangeIsConfigError) {
    const auto m = membrane_for({"red square"});
    spm::GateOptions opts;
    opts.gamma_scale = 4.5;
    EXPECT_THROW(spm::permeability(m, "x", toy, opts), spm::ConfigError);
    opts.gamma_scale = -0.1;
    EXPECT_THROW(spm::permeability(m, "x", toy, opts), spm::ConfigError);
    opts.gamma_scale = 4.0;
    EXPECT_NO_THROW(spm::permeability(m, "x", toy, opts));
    EXPECT_THROW(spm::permeability(membrane_for({}), "x", toy), spm::ConfigError);
}

TEST_F(Gating, ReportFormatting) {
    auto report = spm::permeability(membrane_for({"red square"}, "rs"), "a red square", toy);
    const auto text = spm::format_gate_report(report);
    EXPECT_NE(text.find("membrane=\"rs\" target=\"red square\" s_f="), std::string::npos);
    EXPECT_NE(text.find("s_t=1.000000 gamma=1.000000\n"), std::string::npos);
    EXPECT_NE(text.find("membrane=\"rs\" gamma=1.000000 gamma_scaled=1.000000 transport=on\n"),
              std::string::npos);
}

// Exhaustive sweep over a 50-word vocabulary with orthogonal word vectors.
TEST(GatingProperty, SyntheticVocabularySweep) {
    const auto words = synthetic_words(50);
    const auto enc = one_hot_encoder(words);
    for (std::size_t a = 0; a < words.size(); ++a) {
        for (std::size_t b = a + 1; b < words.size(); ++b) {
            const auto m = membrane_for({words[a] + " " + words[b]});
            for (std::size_t w = 0; w < words.size(); ++w) {
                const std::string p = words[w];
                const double g0 = spm::permeability(m, p, enc).gamma;
                const double g1 = spm::permeability(m, p + " " + words[a], enc).gamma;
                const auto full = spm::permeability(m, p + " " + words[a] + " " + words[b], enc);
                ASSERT_GE(g0, 0.0);
                ASSERT_LE(g0, 1.0);
                ASSERT_GE(g1, g0) << p << " + " << words[a];
                ASSERT_GE(full.gamma, g1);
                ASSERT_EQ(full.targets[0].s_t, 1.0);
                ASSERT_EQ(full.gamma, 1.0);
                if (w != a && w != b) ASSERT_EQ(g0, 0.0) << p;
            }
        }
    }
}

// s_t grows with the number of shared tokens for a fixed concept size, and
// gamma never falls when a missing target token is appended to any two-word
// prompt. Repeating a token already present can lower s_f through pooling.
TEST(GatingProperty, MonotoneInSharedTokens) {
    const auto words = synthetic_words(12);
    const auto enc = one_hot_encoder(words);
    const auto m = membrane_for({"w0 w1 w2"});
    for (const auto& x : words) {
        for (const auto& y : words) {
            const std::string p = x + " " + y;
            const double s = spm::token_similarity("w0 w1 w2", p, enc);
            for (const std::string target : {"w0", "w1", "w2"}) {
                if (target == x || target == y) continue;
                const std::string q = p + " " + target;
                ASSERT_GE(spm::token_similarity("w0 w1 w2", q, enc), s);
                ASSERT_GE(spm::permeability(m, q, enc).gamma, spm::permeability(m, p, enc).gamma)
                    << p << " + " << target;
            }
        }
    }
}

}  // namespace
