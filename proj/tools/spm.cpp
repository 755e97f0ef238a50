// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// spm: command-line front end for building the toy testbed, training,
// gating, composing, evaluating and inspecting membranes.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "spm/binary_io.hpp"
#include "spm/concept_space.hpp"
#include "spm/digest.hpp"
#include "spm/error.hpp"
#include "spm/eval.hpp"
#include "spm/gating.hpp"
#include "spm/registry.hpp"
#include "spm/testbed.hpp"
#include "spm/trainer.hpp"

namespace fs = std::filesystem;

namespace {

// Process exit codes. 0 is success and 2 a command-line usage error.
int exit_code(spm::ErrorCategory c) {
    switch (c) {
        case spm::ErrorCategory::kConfiguration: return 3;
        case spm::ErrorCategory::kContract: return 4;
        case spm::ErrorCategory::kDegenerateInput: return 5;
        case spm::ErrorCategory::kTraining: return 6;
        case spm::ErrorCategory::kTestbed: return 7;
        case spm::ErrorCategory::kChecksum: return 8;
        case spm::ErrorCategory::kVersion: return 9;
        case spm::ErrorCategory::kTruncated: return 10;
        case spm::ErrorCategory::kFormat: return 11;
        case spm::ErrorCategory::kIncompatible: return 12;
        case spm::ErrorCategory::kIo: return 13;
    }
    return 1;
}

void log_stderr(const std::string& line) { std::cerr << line << '\n'; }

std::vector<spm::Membrane> load_all(const std::vector<std::string>& paths) {
    std::vector<spm::Membrane> out;
    for (const auto& p : paths) out.push_back(spm::load_membrane(p));
    return out;
}

// 8-bit RGB image of one sample, each pixel upscaled to a scale x scale block.
void write_ppm(const fs::path& path, std::span<const float> x, int side, int scale) {
    const int plane = side * side;
    std::string data = "P6\n" + std::to_string(side * scale) + " " + std::to_string(side * scale) + "\n255\n";
    for (int i = 0; i < side * scale; ++i) {
        for (int j = 0; j < side * scale; ++j) {
            const int p = (i / scale) * side + j / scale;
            for (int ch = 0; ch < 3; ++ch) {
                const double v = (static_cast<double>(x[static_cast<std::size_t>(ch * plane + p)]) + 0.5) / 1.5;
                data.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5)));
            }
        }
    }
    spm::io::write_text_atomic(path, data);
}

std::vector<int> read_concept_labels(const fs::path& file, const spm::ToyVocabulary& vocab) {
    std::vector<int> labels;
    for (const auto& line : spm::read_lines_file(file)) {
        const auto label = vocab.label_of(line);
        if (!label || *label == vocab.background_label()) {
            throw spm::ConfigError("unknown concept '" + line + "' in " + file.string());
        }
        labels.push_back(*label);
    }
    if (labels.empty()) throw spm::ConfigError("concept list " + file.string() + " is empty");
    return labels;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-permeable membrane toolkit for concept erasure"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "spm 0.1.0");

    // testbed ---------------------------------------------------------------
    auto* testbed = app.add_subcommand("testbed", "Build or derive the toy diffusion testbed");
    testbed->require_subcommand(1);
    std::uint64_t tb_seed = 0;
    std::string tb_out;
    long tb_steps = spm::TestbedOptions{}.pretrain_steps;
    auto* tb_build = testbed->add_subcommand("build", "Pre-train a testbed from scratch");
    tb_build->add_option("--seed", tb_seed, "Root seed")->capture_default_str();
    tb_build->add_option("--out", tb_out, "Output directory")->required();
    tb_build->add_option("--steps", tb_steps, "Pre-training steps")->capture_default_str();

    std::string ft_model;
    std::uint64_t ft_seed = 1;
    long ft_steps = 300;
    double ft_lr = 5e-4;
    std::string ft_out;
    auto* tb_ft = testbed->add_subcommand("finetune", "Derive a fine-tuned testbed with the same signature");
    tb_ft->add_option("--model", ft_model, "Source testbed directory")->required();
    tb_ft->add_option("--seed", ft_seed, "Data seed of the fine-tuning run")->capture_default_str();
    tb_ft->add_option("--steps", ft_steps, "Fine-tuning steps")->capture_default_str();
    tb_ft->add_option("--lr", ft_lr, "Learning rate")->capture_default_str();
    tb_ft->add_option("--out", ft_out, "Output directory")->required();

    // train -----------------------------------------------------------------
    auto defaults = spm::TrainConfig::toy_defaults();
    spm::TrainConfig cfg = defaults;
    std::string tr_model;
    std::vector<std::string> tr_targets;
    std::string tr_surrogate;
    std::string tr_vocab;
    std::string tr_out;
    int tr_log_every = 50;
    bool tr_no_la = false;
    auto* train = app.add_subcommand("train", "Train a membrane that erases the target concepts");
    train->add_option("--model", tr_model, "Testbed directory")->required();
    train->add_option("--target", tr_targets, "Target concept (repeatable)")->required();
    train->add_option("--surrogate", tr_surrogate, "Surrogate concept (default: empty prompt)");
    train->add_option("--name", cfg.name, "Membrane name (default: joined targets)");
    train->add_option("--eta", cfg.eta, "Erasure guidance strength")->capture_default_str();
    train->add_option("--lambda", cfg.lambda, "Anchoring weight")->capture_default_str();
    train->add_option("--alpha", cfg.alpha, "Anchor sampling sharpness")->capture_default_str();
    train->add_option("--dim", cfg.dim, "Intrinsic dimension d")->capture_default_str();
    train->add_option("--steps", cfg.steps, "Optimisation steps")->capture_default_str();
    train->add_option("--lr", cfg.learning_rate, "Peak learning rate")->capture_default_str();
    train->add_option("--warmup", cfg.schedule.warmup_steps, "Warmup steps (default: steps / 6)");
    train->add_option("--restarts", cfg.schedule.restart_cycles, "Cosine restart cycles")->capture_default_str();
    train->add_option("--anchor-samples", cfg.anchor_samples, "Anchors per step")->capture_default_str();
    train->add_option("--anchor-vocab", tr_vocab, "Anchor vocabulary file (default: toy concepts)");
    train->add_option("--seed", cfg.seed, "Root seed")->capture_default_str();
    train->add_option("--t-min", cfg.t_min, "Lowest training timestep (0: T/2)");
    train->add_option("--t-max", cfg.t_max, "Highest training timestep (0: T)");
    train->add_option("--checkpoint-every", cfg.checkpoint_every, "Write --out every N steps");
    train->add_option("--log-every", tr_log_every, "Progress record period")->capture_default_str();
    train->add_flag("--no-la", tr_no_la, "Disable latent anchoring (lambda = 0)");
    train->add_option("--out", tr_out, "Output .spm file")->required();

    // gate ------------------------------------------------------------------
    std::string gt_spm;
    std::string gt_prompt;
    std::string gt_encoder = "toy";
    std::string gt_table;
    spm::GateOptions gt_opts;
    bool gt_no_ft = false;
    auto* gate = app.add_subcommand("gate", "Print the permeability of a membrane for a prompt");
    gate->add_option("--spm", gt_spm, "Membrane file")->required();
    gate->add_option("--prompt", gt_prompt, "Prompt text")->required();
    gate->add_option("--encoder", gt_encoder, "Text encoder")->check(CLI::IsMember({"toy", "plugin"}))->capture_default_str();
    gate->add_option("--encoder-table", gt_table, "Word-vector table for --encoder plugin");
    gate->add_option("--gamma-scale", gt_opts.gamma_scale, "Permeability multiplier")->capture_default_str();
    gate->add_flag("--no-ft", gt_no_ft, "Disable facilitated transport (gamma = gamma scale)");

    // compose ---------------------------------------------------------------
    std::string cp_model;
    std::vector<std::string> cp_spms;
    std::string cp_prompt;
    spm::GateOptions cp_opts;
    bool cp_no_ft = false;
    std::uint64_t cp_seed = 0;
    int cp_samples = 8;
    std::string cp_out;
    auto* comp = app.add_subcommand("compose", "Generate with several membranes overlaid");
    comp->add_option("--model", cp_model, "Testbed directory")->required();
    comp->add_option("--spm", cp_spms, "Membrane files (repeatable, may be empty)");
    comp->add_option("--prompt", cp_prompt, "Prompt text")->required();
    comp->add_option("--gamma-scale", cp_opts.gamma_scale, "Permeability multiplier")->capture_default_str();
    comp->add_flag("--no-ft", cp_no_ft, "Disable facilitated transport (gamma = gamma scale)");
    comp->add_option("--seed", cp_seed, "Sampling seed")->capture_default_str();
    comp->add_option("--samples", cp_samples, "Number of samples")->capture_default_str();
    comp->add_option("--out", cp_out, "Output directory")->required();

    // eval ------------------------------------------------------------------
    std::string ev_model;
    std::vector<std::string> ev_spms;
    std::string ev_concepts;
    spm::EvalOptions ev_opts;
    spm::GateOptions ev_gate;
    bool ev_no_ft = false;
    std::string ev_report;
    auto* eval = app.add_subcommand("eval", "Score concepts under a set of membranes");
    eval->add_option("--model", ev_model, "Testbed directory")->required();
    eval->add_option("--spm", ev_spms, "Membrane files (repeatable)");
    eval->add_option("--concepts", ev_concepts, "Concept list file")->required();
    eval->add_option("--samples", ev_opts.samples, "Samples per concept")->capture_default_str();
    eval->add_option("--seed", ev_opts.seed, "Evaluation seed")->capture_default_str();
    eval->add_option("--gamma-scale", ev_gate.gamma_scale, "Permeability multiplier")->capture_default_str();
    eval->add_flag("--no-ft", ev_no_ft, "Disable facilitated transport (gamma = gamma scale)");
    eval->add_option("--report", ev_report, "Output JSON report")->required();

    // inspect / transfer-check -----------------------------------------------
    std::string in_file;
    auto* inspect = app.add_subcommand("inspect", "Print a membrane manifest");
    inspect->add_option("file", in_file, "Membrane file")->required();

    std::string tc_model;
    std::string tc_spm;
    auto* tcheck = app.add_subcommand("transfer-check", "Check a membrane against a testbed signature");
    tcheck->add_option("--model", tc_model, "Testbed directory")->required();
    tcheck->add_option("--spm", tc_spm, "Membrane file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*tb_build) {
            spm::TestbedOptions opts;
            opts.pretrain_steps = tb_steps;
            const auto tb = spm::build_testbed(tb_seed, opts, log_stderr);
            spm::save_testbed(tb, tb_out);
            std::cout << "testbed seed=" << tb.seed << " accuracy=" << tb.mean_accuracy()
                      << " signature=" << tb.model.signature().digest() << " out=" << tb_out << '\n';
        } else if (*tb_ft) {
            const auto base = spm::load_testbed(ft_model);
            const auto tb = spm::fine_tune_testbed(base, ft_seed, ft_steps, ft_lr, log_stderr);
            spm::save_testbed(tb, ft_out);
            std::cout << "testbed seed=" << tb.seed << " parent=" << tb.parent_digest
                      << " accuracy=" << tb.mean_accuracy() << " out=" << ft_out << '\n';
        } else if (*train) {
            const auto tb = spm::load_testbed(tr_model);
            if (train->count("--warmup") == 0) cfg.schedule.warmup_steps = cfg.steps / 6;
            cfg.enable_la = !tr_no_la;
            const auto vocabulary = tr_vocab.empty() ? tb.vocabulary().concepts() : spm::read_lines_file(tr_vocab);
            std::vector<spm::ConceptEncoding> target_enc;
            for (const auto& t : tr_targets) target_enc.push_back(tb.encoder.encode(t));
            std::unique_ptr<spm::AnchorPool> pool;
            if (cfg.enable_la) {
                pool = std::make_unique<spm::AnchorPool>(
                    spm::build_anchor_pool(vocabulary, target_enc, cfg.alpha, tb.encoder));
            }
            spm::TrainCallbacks callbacks;
            callbacks.progress = [&](const spm::TrainRecord& r) {
                if (tr_log_every > 0 && (r.step % tr_log_every == 0 || r.step + 1 == cfg.steps)) {
                    std::cout << r.to_json() << '\n';
                }
            };
            callbacks.checkpoint = [&](const spm::Membrane& m, long) { spm::save_membrane(m, tr_out); };
            const auto membrane = spm::train_membrane(tb.model, tb.schedule, tr_targets, tr_surrogate, tb.encoder,
                                                      cfg, pool.get(), callbacks);
            const auto manifest = spm::save_membrane(membrane, tr_out);
            std::cerr << "saved " << tr_out << " (" << manifest.checksum << ")\n";
        } else if (*gate) {
            const auto membrane = spm::load_membrane(gt_spm);
            std::unique_ptr<spm::TextEncoder> encoder;
            if (gt_encoder == "plugin") {
                if (gt_table.empty()) throw spm::ConfigError("--encoder plugin needs --encoder-table");
                encoder = std::make_unique<spm::TableTextEncoder>(spm::TableTextEncoder::from_file(gt_table));
            } else {
                encoder = std::make_unique<spm::ToyTextEncoder>();
            }
            gt_opts.facilitated_transport = !gt_no_ft;
            std::cout << spm::format_gate_report(spm::permeability(membrane, gt_prompt, *encoder, gt_opts));
        } else if (*comp) {
            const auto tb = spm::load_testbed(cp_model);
            cp_opts.facilitated_transport = !cp_no_ft;
            if (cp_samples < 1) throw spm::ConfigError("--samples must be >= 1");
            const auto model = spm::compose(load_all(cp_spms), tb.model, tb.schedule, tb.encoder, cp_opts);
            for (const auto& r : model.gate(cp_prompt)) std::cout << spm::format_gate_report(r);
            const auto x = model.generate(cp_prompt, static_cast<std::size_t>(cp_samples), cp_seed);
            fs::create_directories(cp_out);
            std::vector<std::byte> bytes;
            spm::io::append_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(x.rows()));
            spm::io::append_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(x.cols()));
            spm::io::append_le<float>(bytes, x.span());
            spm::io::write_file_atomic(fs::path(cp_out) / "samples.bin", bytes);
            for (std::size_t r = 0; r < x.rows(); ++r) {
                char name[32];
                std::snprintf(name, sizeof name, "sample_%03zu.ppm", r);
                write_ppm(fs::path(cp_out) / name, x.row(r), tb.options.model.side, 8);
            }
            std::cout << "samples=" << x.rows() << " sha256=" << spm::sha256_hex(bytes) << " out=" << cp_out << '\n';
        } else if (*eval) {
            const auto tb = spm::load_testbed(ev_model);
            ev_gate.facilitated_transport = !ev_no_ft;
            const auto labels = read_concept_labels(ev_concepts, tb.vocabulary());
            const auto model = spm::compose(load_all(ev_spms), tb.model, tb.schedule, tb.encoder, ev_gate);
            const auto report = spm::evaluate(model, tb, labels, ev_opts);
            spm::io::write_text_atomic(ev_report, report.to_json());
            for (const auto& r : report.rows) {
                std::printf("concept=\"%s\" concept_score=%.6f erasure_rate=%.4f accuracy=%.4f drift=%.6f\n",
                            r.concept_name.c_str(), r.concept_score, r.erasure_rate, r.accuracy, r.drift);
            }
        } else if (*inspect) {
            std::cout << spm::format_manifest(spm::read_manifest(in_file));
        } else if (*tcheck) {
            const auto tb = spm::load_testbed(tc_model);
            const auto membrane = spm::load_membrane(tc_spm);
            const auto report = spm::check_compatibility(membrane, tb.model.signature());
            if (!report.ok) throw spm::IncompatibleError(report.message);
            std::cout << "compatible membrane=\"" << membrane.name
                      << "\" signature=" << tb.model.signature().digest() << '\n';
        }
    } catch (const spm::Error& e) {
        std::cerr << "spm: error [" << spm::category_name(e.category()) << "]: " << e.what() << '\n';
        return exit_code(e.category());
    } catch (const std::exception& e) {
        std::cerr << "spm: error [internal]: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
