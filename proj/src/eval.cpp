// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "spm/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

#include "spm/error.hpp"
#include "spm/random.hpp"

namespace spm {

namespace {

double kernel_mean(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                   double width) {
    double sum = 0.0;
    for (const auto& x : a) {
        for (const auto& y : b) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) d2 += (x[i] - y[i]) * (x[i] - y[i]);
            sum += std::exp(-d2 / width);
        }
    }
    return sum / static_cast<double>(a.size() * b.size());
}

}  // namespace

double mmd2(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
            double width) {
    if (a.empty() || b.empty()) throw ContractError("MMD needs two non-empty samples");
    if (!(width > 0.0)) throw ConfigError("MMD kernel width must be positive");
    const double v = kernel_mean(a, a, width) + kernel_mean(b, b, width) - 2.0 * kernel_mean(a, b, width);
    return std::max(0.0, v);
}

EvalRow eval_concept(const ComposedModel& model, const Testbed& testbed, int label,
                     const EvalOptions& options) {
    if (options.samples < 1) throw ConfigError("evaluation needs at least one sample");
    const auto& vocab = testbed.vocabulary();
    const int surrogate = options.surrogate_label < 0 ? vocab.background_label() : options.surrogate_label;
    const int n_templates = static_cast<int>(vocab.templates().size());

    EvalRow row;
    row.concept_name = vocab.class_name(label);
    row.label = label;
    row.samples = options.samples;
    row.seed = options.seed;

    std::vector<std::vector<double>> feats;
    std::vector<std::vector<double>> frozen_feats;
    for (int tp = 0; tp < n_templates; ++tp) {
        const int n = options.samples / n_templates + (tp < options.samples % n_templates ? 1 : 0);
        if (n == 0) continue;
        const auto prompt = vocab.prompt(label, tp);
        const std::uint64_t seed = derive_seed(options.seed, static_cast<std::uint64_t>(tp));
        const auto x = model.generate(prompt, static_cast<std::size_t>(n), seed, options.sampler_steps);
        const auto x0 = testbed.generate(prompt, static_cast<std::size_t>(n), seed, {}, options.sampler_steps);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const auto p = testbed.classifier.probabilities(x.row(r));
            const auto best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
            row.concept_score += p[static_cast<std::size_t>(label)];
            row.erasure_rate += best == surrogate;
            row.accuracy += best == label;
            feats.push_back(testbed.classifier.features(x.row(r)));
            frozen_feats.push_back(testbed.classifier.features(x0.row(r)));
        }
    }
    const auto total = static_cast<double>(feats.size());
    row.concept_score /= total;
    row.erasure_rate /= total;
    row.accuracy /= total;
    row.drift = mmd2(feats, frozen_feats, options.kernel_width);
    return row;
}

EvalReport evaluate(const ComposedModel& model, const Testbed& testbed, const std::vector<int>& labels,
                    const EvalOptions& options) {
    EvalReport report;
    for (const auto& m : model.membranes()) report.membranes.push_back(m.name);
    report.facilitated_transport = model.options().facilitated_transport;
    report.gamma_scale = model.options().gamma_scale;
    for (int label : labels) report.rows.push_back(eval_concept(model, testbed, label, options));
    return report;
}

const EvalRow& EvalReport::row(int label) const {
    for (const auto& r : rows) {
        if (r.label == label) return r;
    }
    throw ContractError("report has no row for label " + std::to_string(label));
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["schema"] = "spm-eval/1";
    j["membranes"] = membranes;
    j["facilitated_transport"] = facilitated_transport;
    j["gamma_scale"] = gamma_scale;
    j["concepts"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json row;
        row["concept"] = r.concept_name;
        row["label"] = r.label;
        row["concept_score"] = r.concept_score;
        row["erasure_rate"] = r.erasure_rate;
        row["accuracy"] = r.accuracy;
        row["drift"] = r.drift;
        row["samples"] = r.samples;
        row["seed"] = r.seed;
        j["concepts"].push_back(std::move(row));
    }
    return j.dump(2) + "\n";
}

}  // namespace spm
