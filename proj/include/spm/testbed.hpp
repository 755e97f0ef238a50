// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "spm/denoiser.hpp"
#include "spm/diffusion.hpp"
#include "spm/matrix.hpp"
#include "spm/random.hpp"
#include "spm/text.hpp"

namespace spm {

/// Colour x shape concept set, filler words and prompt templates of the toy world.
class ToyVocabulary {
public:
    static const ToyVocabulary& standard();

    const std::vector<std::string>& colors() const noexcept { return colors_; }
    const std::vector<std::string>& shapes() const noexcept { return shapes_; }
    const std::vector<std::string>& fillers() const noexcept { return fillers_; }
    const std::vector<std::string>& templates() const noexcept { return templates_; }
    /// The 12 "colour shape" phrases, label order.
    const std::vector<std::string>& concepts() const noexcept { return concepts_; }

    int concept_count() const noexcept { return static_cast<int>(concepts_.size()); }
    /// Label of the empty-prompt background class.
    int background_label() const noexcept { return concept_count(); }
    int class_count() const noexcept { return concept_count() + 1; }

    /// Concept phrase of a label; the background label maps to "".
    const std::string& class_name(int label) const;
    std::optional<int> label_of(std::string_view name) const;
    /// Template `index` filled with the class name; the background prompt is "".
    std::string prompt(int label, int template_index) const;

private:
    ToyVocabulary();

    std::vector<std::string> colors_;
    std::vector<std::string> shapes_;
    std::vector<std::string> fillers_;
    std::vector<std::string> templates_;
    std::vector<std::string> concepts_;
    std::string empty_;
};

/// Deterministic toy text encoder. Concept words and colour-shape bigrams own
/// orthonormal directions, filler words are short random vectors and unknown
/// words hash to unit vectors. A prompt encodes to the normalised mean of its
/// token vectors (with a leading <bos>) and one vector per adjacent token pair.
class ToyTextEncoder final : public TextEncoder {
public:
    static constexpr std::size_t kDim = 32;

    explicit ToyTextEncoder(std::uint64_t seed = 1);

    ConceptEncoding encode(std::string_view text) const override;
    std::size_t dim() const override { return kDim; }
    std::string name() const override { return "toy"; }
    std::uint64_t seed() const noexcept { return seed_; }

private:
    std::vector<double> token_vector(const std::string& token) const;
    std::vector<double> pair_vector(const std::string& a, const std::string& b) const;

    std::uint64_t seed_;
    std::unordered_map<std::string, std::vector<double>> words_;
    std::unordered_map<std::string, std::vector<double>> pairs_;
};

/// Clean image of a class: background -0.5, shape pixels +1 in the colour channel.
std::vector<float> toy_prototype(int label, const DenoiserConfig& config);

/// Labelled training batch: prototypes plus Gaussian pixel noise.
struct ToyBatch {
    Matrix<float> x0;
    std::vector<int> labels;
    std::vector<int> templates;
};
ToyBatch toy_batch(std::size_t n, double noise_std, const DenoiserConfig& config, Rng& rng);

/// Nearest-centroid classifier with softmax(-|x - mu|^2 / tau) confidences.
class ToyClassifier {
public:
    ToyClassifier() = default;
    ToyClassifier(Matrix<double> centroids, double tau);

    /// Centroids estimated from `per_class` noisy samples of every class.
    static ToyClassifier fit(const DenoiserConfig& config, int per_class, double noise_std,
                             double tau, std::uint64_t seed);

    const Matrix<double>& centroids() const noexcept { return centroids_; }
    double tau() const noexcept { return tau_; }
    int class_count() const noexcept { return static_cast<int>(centroids_.rows()); }

    /// Euclidean distance to every centroid.
    std::vector<double> features(std::span<const float> x) const;
    std::vector<double> probabilities(std::span<const float> x) const;
    int predict(std::span<const float> x) const;

    friend bool operator==(const ToyClassifier&, const ToyClassifier&) = default;

private:
    Matrix<double> centroids_;
    double tau_ = 2.0;
};

struct TestbedOptions {
    DenoiserConfig model;
    int schedule_steps = 50;
    double beta_start = 1e-3;
    double beta_end = 0.3;
    long pretrain_steps = 4000;
    int batch_size = 128;
    double learning_rate = 2e-3;
    double noise_std = 0.1;
    double classifier_tau = 2.0;
    int classifier_fit_samples = 256;
    /// Held-out frozen generations per (class, template) in the acceptance check.
    int check_samples_per_template = 8;
    double min_accuracy = 0.95;
    /// Every single class must reach this accuracy as well.
    double min_class_accuracy = 0.9;
    std::uint64_t encoder_seed = 1;
};

using TestbedLog = std::function<void(const std::string&)>;

/// Pre-trained toy world: denoiser, schedule, text encoder and classifier.
struct Testbed {
    std::uint64_t seed = 0;
    TestbedOptions options;
    NoiseSchedule schedule;
    Denoiser<float> model;
    ToyClassifier classifier;
    ToyTextEncoder encoder;
    /// Frozen-generation accuracy per class (background last).
    std::vector<double> accuracy;
    double final_loss = 0.0;
    /// Digest of the model this one was fine-tuned from; empty for a fresh build.
    std::string parent_digest;

    const ToyVocabulary& vocabulary() const { return ToyVocabulary::standard(); }
    double mean_accuracy() const;

    /// n samples for a prompt; row i is independent of n (see sample()).
    Matrix<float> generate(std::string_view prompt, std::size_t n, std::uint64_t seed,
                           std::span<const Intervention<float>> interventions = {},
                           int sampler_steps = 0) const;
};

/// Pre-trains from scratch and checks frozen generations. Throws TestbedError
/// when mean accuracy is below options.min_accuracy, any class is below
/// options.min_class_accuracy or the empty prompt does not produce the
/// background class.
Testbed build_testbed(std::uint64_t seed, const TestbedOptions& options = {},
                      const TestbedLog& log = {});

/// Continues pre-training a copy of `base` with a different data stream. The
/// signature is unchanged, so membranes transfer between the two.
Testbed fine_tune_testbed(const Testbed& base, std::uint64_t seed, long steps = 300,
                          double learning_rate = 5e-4, const TestbedLog& log = {});

/// Frozen-generation accuracy per class.
std::vector<double> frozen_accuracy(const Testbed& testbed, std::uint64_t seed);

/// Writes testbed.json, denoiser.bin and classifier.bin into `dir`.
void save_testbed(const Testbed& testbed, const std::filesystem::path& dir);
/// Throws TestbedError if the directory is missing, ChecksumError on corrupt
/// payloads and VersionError on an unknown format.
Testbed load_testbed(const std::filesystem::path& dir);

/// Loads `<cache>/testbed-<seed>` or builds and stores it. Concurrent callers
/// may both build; the first completed directory wins.
Testbed cached_testbed(const std::filesystem::path& cache, std::uint64_t seed,
                       const TestbedLog& log = {});

/// Same for the fine-tuned variant `<cache>/testbed-<seed>-ft<ft_seed>`.
Testbed cached_fine_tuned_testbed(const std::filesystem::path& cache, const Testbed& base,
                                  std::uint64_t ft_seed, const TestbedLog& log = {});

}  // namespace spm
