// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "spm/gating.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "spm/error.hpp"

namespace spm {

double token_similarity(std::string_view concept_text, std::string_view prompt,
                        const TextEncoder& tokenizer) {
    const auto concept_tokens = tokenizer.token_set(concept_text);
    if (concept_tokens.empty()) {
        throw ConfigError("concept '" + std::string(concept_text) + "' has no tokens");
    }
    const auto prompt_tokens = tokenizer.token_set(prompt);
    std::size_t shared = 0;
    for (const auto& t : concept_tokens) shared += prompt_tokens.count(t);
    return static_cast<double>(shared) / static_cast<double>(concept_tokens.size());
}

double global_similarity(std::string_view concept_text, std::string_view prompt,
                         const TextEncoder& encoder) {
    return std::max(0.0, cosine(encoder.encode(concept_text), encoder.encode(prompt)));
}

void GateOptions::validate() const {
    if (!(max_gamma > 0.0)) throw ConfigError("max gamma must be positive");
    if (!(gamma_scale >= 0.0) || gamma_scale > max_gamma) {
        std::ostringstream os;
        os << "gamma scale " << gamma_scale << " outside [0, " << max_gamma << "]";
        throw ConfigError(os.str());
    }
}

GateReport permeability(const Membrane& membrane, std::string_view prompt,
                        const TextEncoder& encoder, const GateOptions& options) {
    options.validate();
    if (membrane.targets.empty()) {
        throw ConfigError("membrane '" + membrane.name + "' has no target concepts");
    }
    GateReport report;
    report.membrane = membrane.name;
    report.prompt = std::string(prompt);
    report.transport = options.facilitated_transport;
    for (const auto& target : membrane.targets) {
        TargetGate gate;
        gate.target = target;
        gate.s_t = token_similarity(target, prompt, encoder);
        gate.s_f = global_similarity(target, prompt, encoder);
        gate.gamma = std::max(gate.s_f, gate.s_t);
        report.gamma = std::max(report.gamma, gate.gamma);
        report.targets.push_back(std::move(gate));
    }
    report.gamma_scaled = options.facilitated_transport ? report.gamma * options.gamma_scale
                                                        : options.gamma_scale;
    return report;
}

std::string format_gate_report(const GateReport& report) {
    std::ostringstream os;
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    for (const auto& t : report.targets) {
        os << "membrane=\"" << report.membrane << "\" target=\"" << t.target
           << "\" s_f=" << num(t.s_f) << " s_t=" << num(t.s_t) << " gamma=" << num(t.gamma)
           << '\n';
    }
    os << "membrane=\"" << report.membrane << "\" gamma=" << num(report.gamma)
       << " gamma_scaled=" << num(report.gamma_scaled)
       << " transport=" << (report.transport ? "on" : "off") << '\n';
    return os.str();
}

}  // namespace spm
