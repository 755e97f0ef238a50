// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "spm/error.hpp"
#include "spm/optim.hpp"
#include "spm/testbed.hpp"
#include "spm/trainer.hpp"
#include "support/fixtures.hpp"

namespace {

using spm::BasicMembrane;
using spm::ConceptEncoding;
using spm::Denoiser;
using spm::Matrix;

TEST(ErasingTarget, Examples) {
    const Matrix<double> tar(1, 3, std::vector<double>{1.0, -2.0, 0.5});
    const Matrix<double> sur(1, 3, std::vector<double>{0.25, 0.0, -1.0});
    EXPECT_EQ(spm::erasing_target(sur, sur, 1.0), sur);
    const Matrix<double> zero(1, 3);
    EXPECT_EQ(spm::erasing_target(tar, zero, 1.0), Matrix<double>(1, 3, std::vector<double>{-1.0, 2.0, -0.5}));
    const auto one = spm::erasing_target(tar, sur, 1.0);
    const auto three = spm::erasing_target(tar, sur, 3.0);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(three.data()[i] - sur.data()[i], 3.0 * (one.data()[i] - sur.data()[i]));
    }
    EXPECT_THROW(spm::erasing_target(tar, Matrix<double>(1, 2), 1.0), spm::ContractError);
}

TEST(TotalLoss, Examples) {
    EXPECT_EQ(spm::total_loss(1.5, 7.0, 0.0), 1.5);
    EXPECT_DOUBLE_EQ(spm::total_loss(1.0, 0.002, 1e3), 3.0);
}

TEST(TrainConfig, DefaultsAndValidation) {
    const auto large = spm::TrainConfig::large_model_defaults();
    EXPECT_EQ(large.eta, 1.0);
    EXPECT_EQ(large.lambda, 1e3);
    EXPECT_EQ(large.alpha, 1.0);
    EXPECT_EQ(large.steps, 3000);
    EXPECT_EQ(large.anchor_samples, 4);
    EXPECT_EQ(large.learning_rate, 1e-4);
    EXPECT_EQ(large.batch_size, 1);
    EXPECT_EQ(large.schedule.warmup_steps, 500);
    EXPECT_EQ(large.schedule.restart_cycles, 3);
    EXPECT_NO_THROW(large.validate());

    const auto toy = spm::TrainConfig::toy_defaults();
    EXPECT_EQ(toy.eta, large.eta);
    EXPECT_EQ(toy.lambda, large.lambda);
    EXPECT_EQ(toy.alpha, large.alpha);
    EXPECT_EQ(toy.anchor_samples, large.anchor_samples);
    EXPECT_NO_THROW(toy.validate());

    const std::vector<std::function<void(spm::TrainConfig&)>> breakers = {
        [](auto& c) { c.eta = 0.0; },           [](auto& c) { c.eta = NAN; },
        [](auto& c) { c.lambda = -1.0; },       [](auto& c) { c.alpha = -0.5; },
        [](auto& c) { c.steps = -1; },          [](auto& c) { c.anchor_samples = 0; },
        [](auto& c) { c.learning_rate = 0.0; }, [](auto& c) { c.dim = 0; },
        [](auto& c) { c.batch_size = 0; },      [](auto& c) { c.t_min = 30; c.t_max = 20; },
    };
    for (std::size_t i = 0; i < breakers.size(); ++i) {
        auto c = large;
        breakers[i](c);
        EXPECT_THROW(c.validate(), spm::ConfigError) << "case " << i;
    }
}

TEST(Schedule, WarmupThenCosineRestarts) {
    EXPECT_DOUBLE_EQ(spm::cosine_restart_factor(0, 100, 10, 3), 0.1);
    EXPECT_DOUBLE_EQ(spm::cosine_restart_factor(9, 100, 10, 3), 1.0);
    EXPECT_DOUBLE_EQ(spm::cosine_restart_factor(10, 100, 10, 3), 1.0);
    EXPECT_GT(spm::cosine_restart_factor(41, 100, 10, 3), 0.99);  // just after the first restart
    EXPECT_LT(spm::cosine_restart_factor(39, 100, 10, 3), 0.01);
    EXPECT_NEAR(spm::cosine_restart_factor(25, 100, 10, 3), 0.5, 1e-12);
    for (long s = 0; s < 100; ++s) {
        const double f = spm::cosine_restart_factor(s, 100, 10, 3);
        EXPECT_GE(f, 0.0);
        EXPECT_LE(f, 1.0);
    }
    EXPECT_DOUBLE_EQ(spm::cosine_decay_factor(0, 10), 1.0);
    EXPECT_NEAR(spm::cosine_decay_factor(10, 10), 0.0, 1e-15);
}

TEST(AdamW, FirstStepAndDecoupledDecay) {
    std::vector<double> p = {1.0, -2.0};
    const std::vector<double> g = {0.5, -0.25};
    spm::AdamW<double> opt(spm::AdamOptions{0.9, 0.999, 1e-8, 0.0});
    std::vector<std::span<double>> params = {p};
    std::vector<std::span<const double>> grads = {g};
    opt.step(params, grads, 0.1);
    // Bias-corrected first step moves each coordinate by lr * sign(g).
    EXPECT_NEAR(p[0], 0.9, 1e-7);
    EXPECT_NEAR(p[1], -1.9, 1e-7);

    std::vector<double> q = {2.0};
    const std::vector<double> zero = {0.0};
    spm::AdamW<double> decay(spm::AdamOptions{0.9, 0.999, 1e-8, 0.5});
    std::vector<std::span<double>> qp = {q};
    std::vector<std::span<const double>> zg = {zero};
    decay.step(qp, zg, 0.1);
    EXPECT_DOUBLE_EQ(q[0], 2.0 * (1.0 - 0.1 * 0.5));
}

// ---- loss functions on the tiny double-precision model ----

class Losses : public ::testing::Test {
protected:
    spm::DenoiserConfig config = spm::testing::tiny_config();
    Denoiser<double> model{config, 3};
    Matrix<double> x_t = spm::testing::random_matrix<double>(2, config.sample_dim(), 4);
    std::vector<int> t = {12, 37};
    ConceptEncoding c_tar = spm::testing::random_encoding(4, 5, "tar");
    ConceptEncoding c_sur = spm::testing::random_encoding(4, 6, "sur");
    std::vector<ConceptEncoding> anchors = {spm::testing::random_encoding(4, 7),
                                            spm::testing::random_encoding(4, 8),
                                            spm::testing::random_encoding(4, 9)};
    BasicMembrane<double> fresh = spm::inject(model.signature(), 2, 10).cast<double>();
    BasicMembrane<double> perturbed =
        spm::testing::perturbed_membrane(model.signature(), 2, 11, 0.3).cast<double>();

    using LossFn = std::function<spm::LossResult<double>(const BasicMembrane<double>&)>;

    // Central differences of the loss value against the analytic gradient.
    void gradcheck(const LossFn& loss) {
        constexpr double h = 1e-4;
        auto m = perturbed;
        const auto analytic = loss(m).grad;
        std::size_t checked = 0;
        for (auto& [id, layer] : m.layers) {
            for (auto* which : {&layer.v_sig, &layer.v_reg}) {
                const bool sig = which == &layer.v_sig;
                const auto& g = sig ? analytic.layers.at(id).v_sig : analytic.layers.at(id).v_reg;
                for (std::size_t i = 0; i < which->size(); ++i) {
                    const double saved = (*which)[i];
                    (*which)[i] = saved + h;
                    const double up = loss(m).value;
                    (*which)[i] = saved - h;
                    const double down = loss(m).value;
                    (*which)[i] = saved;
                    const double numeric = (up - down) / (2.0 * h);
                    const double scale = std::max(std::abs(numeric), std::abs(g[i]));
                    EXPECT_LE(std::abs(numeric - g[i]), 1e-4 * scale + 1e-10)
                        << id << (sig ? "/v_sig[" : "/v_reg[") << i << "] analytic=" << g[i]
                        << " numeric=" << numeric;
                    ++checked;
                }
            }
        }
        EXPECT_EQ(checked, perturbed.parameter_count());
    }
};

TEST_F(Losses, ErasingLossVanishesForEqualConceptsAtInit) {
    EXPECT_EQ(spm::erasing_loss(model, x_t, t, c_tar, c_tar, fresh, 1.0).value, 0.0);
    EXPECT_EQ(spm::erasing_loss(model, x_t, t, c_tar, c_tar, fresh, 5.0).value, 0.0);
}

TEST_F(Losses, ErasingLossAtInitIsScaledConceptGap) {
    // With v_sig = 0 the loss is (1 + eta)^2 * mean |eps_tar - eps_sur|^2.
    const auto eps_tar = model.predict(x_t, spm::condition_rows<double>(c_tar, 2), t);
    const auto eps_sur = model.predict(x_t, spm::condition_rows<double>(c_sur, 2), t);
    double gap = 0.0;
    for (std::size_t i = 0; i < eps_tar.size(); ++i) {
        const double d = eps_tar.data()[i] - eps_sur.data()[i];
        gap += d * d;
    }
    gap /= static_cast<double>(eps_tar.size());
    for (double eta : {0.5, 1.0, 3.0}) {
        EXPECT_NEAR(spm::erasing_loss(model, x_t, t, c_tar, c_sur, fresh, eta).value,
                    (1 + eta) * (1 + eta) * gap, 1e-12);
    }
}

TEST_F(Losses, ErasingLossGradient) {
    gradcheck([&](const auto& m) { return spm::erasing_loss(model, x_t, t, c_tar, c_sur, m, 1.0); });
    gradcheck([&](const auto& m) { return spm::erasing_loss(model, x_t, t, c_tar, c_sur, m, 3.0, 0.6); });
}

TEST_F(Losses, AnchoringLossGradient) {
    gradcheck([&](const auto& m) { return spm::anchoring_loss<double>(model, x_t, t, anchors, m); });
}

TEST_F(Losses, AnchoringLossZeroCases) {
    const auto at_init = spm::anchoring_loss<double>(model, x_t, t, anchors, fresh);
    EXPECT_EQ(at_init.value, 0.0);
    const auto closed = spm::anchoring_loss<double>(model, x_t, t, anchors, perturbed, 0.0);
    EXPECT_EQ(closed.value, 0.0);
    EXPECT_GT(spm::anchoring_loss<double>(model, x_t, t, anchors, perturbed).value, 0.0);
    EXPECT_THROW(spm::anchoring_loss<double>(model, x_t, t, {}, perturbed), spm::ConfigError);
}

TEST_F(Losses, AnchoringLossDecreasesUnderGradientDescent) {
    auto m = perturbed;
    double prev = spm::anchoring_loss<double>(model, x_t, t, anchors, m).value;
    const double start = prev;
    for (int step = 0; step < 30; ++step) {
        const auto r = spm::anchoring_loss<double>(model, x_t, t, anchors, m);
        for (auto& [id, layer] : m.layers) {
            const auto& g = r.grad.layers.at(id);
            for (std::size_t i = 0; i < layer.v_sig.size(); ++i) layer.v_sig[i] -= 0.5 * g.v_sig[i];
            for (std::size_t i = 0; i < layer.v_reg.size(); ++i) layer.v_reg[i] -= 0.5 * g.v_reg[i];
        }
        const double now = spm::anchoring_loss<double>(model, x_t, t, anchors, m).value;
        EXPECT_LE(now, prev + 1e-15) << "step " << step;
        prev = now;
    }
    EXPECT_LT(prev, 0.5 * start);
}

// ---- latents and the training loop on an untrained full-size model ----

class Training : public ::testing::Test {
protected:
    Denoiser<float> model{spm::DenoiserConfig{}, 21};
    spm::NoiseSchedule schedule = spm::NoiseSchedule::linear(50, 1e-3, 0.3);
    spm::ToyTextEncoder encoder;
    spm::AnchorPool pool = spm::build_anchor_pool(spm::ToyVocabulary::standard().concepts(),
                                                  encoder.encode("red square"), 1.0, encoder);

    spm::TrainConfig short_config(long steps) const {
        auto c = spm::TrainConfig::toy_defaults();
        c.steps = steps;
        c.schedule.warmup_steps = 1;
        c.seed = 4;
        return c;
    }
};

TEST_F(Training, SampleLatentIsSeededAndInRange) {
    const auto c = encoder.encode("red square");
    const auto a = spm::sample_latent(model, schedule, c, 25, 50, 8);
    const auto b = spm::sample_latent(model, schedule, c, 25, 50, 8);
    EXPECT_EQ(a.t, b.t);
    EXPECT_EQ(a.x_t, b.x_t);
    std::vector<int> seen;
    for (std::uint64_t s = 0; s < 40; ++s) {
        const int t = spm::sample_latent(model, schedule, c, 25, 50, s).t;
        EXPECT_GE(t, 25);
        EXPECT_LE(t, 50);
        seen.push_back(t);
    }
    EXPECT_GT(*std::max_element(seen.begin(), seen.end()), *std::min_element(seen.begin(), seen.end()));
    EXPECT_THROW(spm::sample_latent(model, schedule, c, 0, 50, 1), spm::ConfigError);
    EXPECT_THROW(spm::sample_latent(model, schedule, c, 10, 51, 1), spm::ConfigError);
}

TEST_F(Training, LatentAtTerminalStepIsPureNoise) {
    const auto c = encoder.encode("red square");
    const auto latent = spm::sample_latent(model, schedule, c, 50, 50, 3);
    EXPECT_EQ(latent.t, 50);
    spm::Rng rng(spm::derive_seed(spm::derive_seed(3, 1), 0));
    for (float v : latent.x_t.values()) EXPECT_EQ(v, static_cast<float>(rng.normal()));
}

TEST_F(Training, ZeroStepsReturnsTheInjectedMembrane) {
    auto c = short_config(0);
    c.dim = 2;
    const auto m = spm::train_membrane(model, schedule, {"red square"}, "", encoder, c, &pool);
    auto want = spm::inject(model.signature(), 2, spm::derive_seed(c.seed, 0));
    for (const auto& [id, l] : want.layers) EXPECT_EQ(m.layers.at(id), l);
    EXPECT_EQ(m.name, "red square");
    EXPECT_EQ(m.targets, std::vector<std::string>{"red square"});
    EXPECT_EQ(m.source_signature, model.signature());
    EXPECT_NO_THROW(m.validate());
}

TEST_F(Training, HostIsNeverModifiedAndRunIsReproducible) {
    const auto before = model.digest();
    const auto c = short_config(3);
    const auto a = spm::train_membrane(model, schedule, {"red square"}, "", encoder, c, &pool);
    EXPECT_EQ(model.digest(), before);
    const auto b = spm::train_membrane(model, schedule, {"red square"}, "", encoder, c, &pool);
    EXPECT_EQ(a, b);
    bool moved = false;
    for (const auto& [id, l] : a.layers)
        for (float v : l.v_sig) moved = moved || v != 0.0f;
    EXPECT_TRUE(moved);
    EXPECT_EQ(a.train_meta.steps, 3);
    EXPECT_EQ(a.train_meta.lambda, 1e3);
    EXPECT_TRUE(a.train_meta.enable_la);
}

TEST_F(Training, ProgressRecordsAndCheckpoints) {
    auto c = short_config(4);
    c.checkpoint_every = 2;
    std::vector<spm::TrainRecord> records;
    std::vector<long> checkpoints;
    spm::TrainCallbacks cb;
    cb.progress = [&](const spm::TrainRecord& r) { records.push_back(r); };
    cb.checkpoint = [&](const spm::Membrane& m, long step) {
        checkpoints.push_back(step);
        EXPECT_EQ(m.name, "red square");
    };
    spm::train_membrane(model, schedule, {"red square"}, "", encoder, c, &pool, cb);
    ASSERT_EQ(records.size(), 4u);
    EXPECT_EQ(checkpoints, (std::vector<long>{2, 4}));
    EXPECT_EQ(records[0].anc, 0.0);  // membrane starts at identity
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        EXPECT_EQ(r.step, static_cast<long>(i));
        EXPECT_DOUBLE_EQ(r.total, r.era + 1e3 * r.anc);
        const auto j = nlohmann::json::parse(r.to_json());
        EXPECT_EQ(j.at("step").get<long>(), r.step);
        EXPECT_DOUBLE_EQ(j.at("L_era").get<double>(), r.era);
        EXPECT_DOUBLE_EQ(j.at("L_anc").get<double>(), r.anc);
        EXPECT_DOUBLE_EQ(j.at("total").get<double>(), r.total);
        EXPECT_TRUE(j.contains("lr"));
        EXPECT_EQ(j.at("t").size(), 1u);
        EXPECT_EQ(r.to_json().find('\n'), std::string::npos);
    }
}

TEST_F(Training, AblationForcesLambdaToZero) {
    auto c = short_config(2);
    c.enable_la = false;
    std::vector<spm::TrainRecord> records;
    spm::TrainCallbacks cb;
    cb.progress = [&](const spm::TrainRecord& r) { records.push_back(r); };
    const auto m = spm::train_membrane(model, schedule, {"red square"}, "", encoder, c, nullptr, cb);
    EXPECT_EQ(m.train_meta.lambda, 0.0);
    EXPECT_FALSE(m.train_meta.enable_la);
    for (const auto& r : records) {
        EXPECT_EQ(r.anc, 0.0);
        EXPECT_EQ(r.total, r.era);
    }
}

TEST_F(Training, MultiTargetNamesAndLatents) {
    auto c = short_config(1);
    c.batch_size = 2;
    std::vector<spm::TrainRecord> records;
    spm::TrainCallbacks cb;
    cb.progress = [&](const spm::TrainRecord& r) { records.push_back(r); };
    const auto m = spm::train_membrane(model, schedule, {"red square", "blue bar"}, "green ring",
                                       encoder, c, &pool, cb);
    EXPECT_EQ(m.name, "red square+blue bar");
    EXPECT_EQ(m.surrogate, "green ring");
    ASSERT_EQ(records.size(), 1u);
    EXPECT_EQ(records[0].t.size(), 4u);
}

TEST_F(Training, ErrorCases) {
    auto c = short_config(1);
    EXPECT_THROW(spm::train_membrane(model, schedule, {}, "", encoder, c, &pool), spm::ConfigError);
    EXPECT_THROW(spm::train_membrane(model, schedule, {"red square"}, "", encoder, c, nullptr),
                 spm::ConfigError);
    // The first Adam update moves every parameter by about lr, so the
    // intervention overflows single precision on the next forward pass.
    c.steps = 3;
    c.learning_rate = 1e30;
    try {
        spm::train_membrane(model, schedule, {"red square"}, "", encoder, c, &pool);
        FAIL() << "expected a training error";
    } catch (const spm::TrainingError& e) {
        EXPECT_EQ(e.step(), 1);
        EXPECT_EQ(e.category(), spm::ErrorCategory::kTraining);
    }
}

}  // namespace
