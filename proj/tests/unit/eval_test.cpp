// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "spm/error.hpp"
#include "spm/eval.hpp"
#include "spm/trainer.hpp"
#include "support/fixtures.hpp"

namespace {

using Samples = std::vector<std::vector<double>>;

TEST(Mmd, IdenticalSetsScoreZero) {
    const Samples a = {{0.0, 1.0}, {2.0, -1.0}, {0.5, 0.5}};
    EXPECT_EQ(spm::mmd2(a, a, 1.0), 0.0);
}

TEST(Mmd, HandComputedPair) {
    // Single points at distance^2 = 4 with width 2: 1 + 1 - 2 e^-2.
    const Samples a = {{0.0, 0.0}}, b = {{2.0, 0.0}};
    EXPECT_NEAR(spm::mmd2(a, b, 2.0), 2.0 - 2.0 * std::exp(-2.0), 1e-15);
    EXPECT_EQ(spm::mmd2(a, b, 2.0), spm::mmd2(b, a, 2.0));
}

TEST(Mmd, GrowsWithSeparation) {
    Samples base, near, far;
    spm::Rng rng(3);
    for (int i = 0; i < 64; ++i) {
        const double x = rng.normal(), y = rng.normal();
        base.push_back({x, y});
        near.push_back({x + 0.5, y});
        far.push_back({x + 3.0, y});
    }
    const double n = spm::mmd2(base, near, 4.0);
    const double f = spm::mmd2(base, far, 4.0);
    EXPECT_GT(n, 0.0);
    EXPECT_GT(f, n);
}

TEST(Mmd, ErrorCases) {
    EXPECT_THROW(spm::mmd2({}, {{1.0}}, 1.0), spm::ContractError);
    EXPECT_THROW(spm::mmd2({{1.0}}, {{1.0}}, 0.0), spm::ConfigError);
}

class Evaluation : public ::testing::Test {
protected:
    const spm::Testbed& tb = spm::testing::shared_testbed();
};

TEST_F(Evaluation, FrozenModelAgainstItself) {
    const auto frozen = spm::compose({}, tb.model, tb.schedule, tb.encoder);
    spm::EvalOptions opts;
    opts.samples = 32;
    opts.seed = 5;
    for (int label : {0, 6, 11}) {
        const auto row = spm::eval_concept(frozen, tb, label, opts);
        EXPECT_EQ(row.drift, 0.0);
        EXPECT_LE(row.erasure_rate, 0.05);
        EXPECT_GE(row.accuracy, 0.9);
        EXPECT_GT(row.concept_score, 0.5);
        EXPECT_EQ(row.samples, 32);
        EXPECT_EQ(row.concept_name, tb.vocabulary().class_name(label));
    }
}

TEST_F(Evaluation, ReportIsDeterministicAndSchemaStable) {
    const auto frozen = spm::compose({}, tb.model, tb.schedule, tb.encoder);
    spm::EvalOptions opts;
    opts.samples = 10;  // not a multiple of the template count
    opts.seed = 8;
    const auto a = spm::evaluate(frozen, tb, {1, 12}, opts);
    const auto b = spm::evaluate(frozen, tb, {1, 12}, opts);
    EXPECT_EQ(a.to_json(), b.to_json());
    EXPECT_EQ(a.row(12).erasure_rate, a.row(12).accuracy);  // background is its own surrogate
    EXPECT_THROW(a.row(3), spm::ContractError);

    const auto j = nlohmann::ordered_json::parse(a.to_json());
    std::vector<std::string> keys;
    for (const auto& [k, v] : j.items()) keys.push_back(k);
    EXPECT_EQ(keys, (std::vector<std::string>{"schema", "membranes", "facilitated_transport",
                                              "gamma_scale", "concepts"}));
    EXPECT_EQ(j.at("schema"), "spm-eval/1");
    ASSERT_EQ(j.at("concepts").size(), 2u);
    std::vector<std::string> row_keys;
    for (const auto& [k, v] : j.at("concepts").at(0).items()) row_keys.push_back(k);
    EXPECT_EQ(row_keys, (std::vector<std::string>{"concept", "label", "concept_score", "erasure_rate",
                                                  "accuracy", "drift", "samples", "seed"}));
    for (const auto& row : j.at("concepts")) {
        EXPECT_GE(row.at("erasure_rate").get<double>(), 0.0);
        EXPECT_LE(row.at("erasure_rate").get<double>(), 1.0);
        EXPECT_GE(row.at("drift").get<double>(), 0.0);
        EXPECT_EQ(row.at("samples"), 10);
    }
}

TEST_F(Evaluation, MembraneDriftIsPositiveOnlyWhereItActs) {
    auto m = spm::testing::perturbed_membrane(tb.model.signature(), 1, 3, 0.5, "red square");
    spm::GateOptions no_ft;
    no_ft.facilitated_transport = false;
    const auto always = spm::compose({m}, tb.model, tb.schedule, tb.encoder, no_ft);
    spm::EvalOptions opts;
    opts.samples = 16;
    opts.seed = 2;
    EXPECT_GT(spm::eval_concept(always, tb, 11, opts).drift, 0.0);
    no_ft.gamma_scale = 0.0;
    const auto closed = spm::compose({m}, tb.model, tb.schedule, tb.encoder, no_ft);
    EXPECT_EQ(spm::eval_concept(closed, tb, 11, opts).drift, 0.0);
    opts.samples = 0;
    EXPECT_THROW(spm::eval_concept(closed, tb, 11, opts), spm::ConfigError);
}

// Twenty independently trained membranes over six targets (several seeds per
// target) remove every target while the six untouched concepts stay correct.
// Stacked copies of one target add up like a larger gamma and may push the
// target past the background class, so removal is checked as lost accuracy.
TEST_F(Evaluation, TwentyMembranesKeepOtherConceptsIntact) {
    const std::vector<int> targets = {0, 5, 10, 3, 6, 9};
    const auto& vocab = tb.vocabulary();
    std::vector<spm::Membrane> membranes;
    for (std::uint64_t i = 0; i < 20; ++i) {
        const auto& name = vocab.class_name(targets[i % targets.size()]);
        auto cfg = spm::TrainConfig::toy_defaults();
        cfg.seed = 100 + i;
        const auto pool = spm::build_anchor_pool(vocab.concepts(), tb.encoder.encode(name), cfg.alpha, tb.encoder);
        membranes.push_back(spm::train_membrane(tb.model, tb.schedule, {name}, "", tb.encoder, cfg, &pool));
    }
    const auto model = spm::compose(membranes, tb.model, tb.schedule, tb.encoder);
    spm::EvalOptions opts;
    opts.samples = 32;
    opts.seed = 9;
    for (int label = 0; label < vocab.concept_count(); ++label) {
        const auto row = spm::eval_concept(model, tb, label, opts);
        if (std::find(targets.begin(), targets.end(), label) != targets.end()) {
            EXPECT_LE(row.accuracy, 0.15) << row.concept_name;
        } else {
            EXPECT_GE(row.accuracy, 0.85) << row.concept_name;
        }
    }
}

}  // namespace
