// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "spm/testbed.hpp"

#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unistd.h>

#include "spm/binary_io.hpp"
#include "spm/digest.hpp"
#include "spm/error.hpp"
#include "spm/optim.hpp"

namespace spm {

namespace {

constexpr int kTestbedFormatVersion = 1;
constexpr const char* kTestbedFormat = "spm-testbed";

// 6x6 masks, '#' marks shape pixels.
const std::array<std::array<const char*, 6>, 4> kMasks = {{
    {"......", ".####.", ".#..#.", ".#..#.", ".####.", "......"},  // square
    {"..##..", "..##..", "######", "######", "..##..", "..##.."},  // cross
    {"..##..", ".#..#.", "#....#", "#....#", ".#..#.", "..##.."},  // ring
    {"......", "......", "######", "######", "......", "......"},  // bar
}};

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<double> random_direction(std::uint64_t seed, std::size_t dim, double norm) {
    Rng rng(seed);
    std::vector<double> v(dim);
    rng.fill_normal<double>(v);
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    const double scale = norm / std::sqrt(n2);
    for (double& x : v) x *= scale;
    return v;
}

double l2(const std::vector<double>& v) {
    return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

}  // namespace

// ---------------------------------------------------------------- vocabulary

ToyVocabulary::ToyVocabulary()
    : colors_{"red", "green", "blue"},
      shapes_{"square", "cross", "ring", "bar"},
      fillers_{"a",     "an",        "the",    "photo",  "of", "picture", "drawing", "image",
               "rendering", "sketch", "in", "style", "with", "bright",  "simple"},
      templates_{"{}",
                 "a photo of a {}",
                 "a drawing of a {}",
                 "an image of the {}",
                 "a sketch of a {}",
                 "a rendering of a {}",
                 "a picture of the {}",
                 "a simple {} in the style of a drawing"} {
    for (const auto& c : colors_) {
        for (const auto& s : shapes_) concepts_.push_back(c + " " + s);
    }
}

const ToyVocabulary& ToyVocabulary::standard() {
    static const ToyVocabulary vocab;
    return vocab;
}

const std::string& ToyVocabulary::class_name(int label) const {
    if (label == background_label()) return empty_;
    if (label < 0 || label > background_label()) {
        throw ContractError("class label " + std::to_string(label) + " out of range");
    }
    return concepts_[static_cast<std::size_t>(label)];
}

std::optional<int> ToyVocabulary::label_of(std::string_view name) const {
    const auto tokens = word_tokens(name);
    if (tokens.empty()) return background_label();
    std::string joined;
    for (const auto& t : tokens) joined += (joined.empty() ? "" : " ") + t;
    for (int i = 0; i < concept_count(); ++i) {
        if (concepts_[static_cast<std::size_t>(i)] == joined) return i;
    }
    return std::nullopt;
}

std::string ToyVocabulary::prompt(int label, int template_index) const {
    if (template_index < 0 || template_index >= static_cast<int>(templates_.size())) {
        throw ContractError("template index out of range");
    }
    if (label == background_label()) return "";
    std::string out = templates_[static_cast<std::size_t>(template_index)];
    out.replace(out.find("{}"), 2, class_name(label));
    return out;
}

// ------------------------------------------------------------------ encoder

ToyTextEncoder::ToyTextEncoder(std::uint64_t seed) : seed_(seed) {
    const auto& vocab = ToyVocabulary::standard();
    const std::size_t words = vocab.colors().size() + vocab.shapes().size();
    const std::size_t pairs = vocab.concepts().size();

    Rng rng(derive_seed(seed, 0));
    Eigen::MatrixXd gauss(kDim, static_cast<Eigen::Index>(words + pairs));
    for (Eigen::Index j = 0; j < gauss.cols(); ++j) {
        for (Eigen::Index i = 0; i < gauss.rows(); ++i) gauss(i, j) = rng.normal();
    }
    const Eigen::MatrixXd q =
        Eigen::HouseholderQR<Eigen::MatrixXd>(gauss).householderQ() *
        Eigen::MatrixXd::Identity(kDim, gauss.cols());
    auto column = [&](std::size_t j) {
        std::vector<double> v(kDim);
        for (std::size_t i = 0; i < kDim; ++i) v[i] = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        return v;
    };

    std::size_t col = 0;
    for (const auto& w : vocab.colors()) words_[w] = column(col++);
    for (const auto& w : vocab.shapes()) words_[w] = column(col++);
    for (const auto& c : vocab.colors()) {
        for (const auto& s : vocab.shapes()) pairs_[c + " " + s] = column(col++);
    }
    std::uint64_t stream = 1;
    for (const auto& w : vocab.fillers()) words_[w] = random_direction(derive_seed(seed, stream++), kDim, 0.1);
    words_["<bos>"] = random_direction(derive_seed(seed, stream++), kDim, 0.1);
}

std::vector<double> ToyTextEncoder::token_vector(const std::string& token) const {
    if (auto it = words_.find(token); it != words_.end()) return it->second;
    return random_direction(derive_seed(seed_, fnv1a(token)), kDim, 1.0);
}

std::vector<double> ToyTextEncoder::pair_vector(const std::string& a, const std::string& b) const {
    const std::string key = a + " " + b;
    if (auto it = pairs_.find(key); it != pairs_.end()) return it->second;
    return random_direction(derive_seed(seed_, fnv1a(key)), kDim, 1.0);
}

ConceptEncoding ToyTextEncoder::encode(std::string_view text) const {
    std::vector<std::string> tokens{"<bos>"};
    for (auto& t : tokenize(text)) tokens.push_back(std::move(t));

    std::vector<double> sum(kDim, 0.0);
    std::vector<std::vector<double>> vecs;
    for (const auto& t : tokens) vecs.push_back(token_vector(t));
    for (const auto& v : vecs) {
        for (std::size_t i = 0; i < kDim; ++i) sum[i] += v[i];
    }
    for (std::size_t k = 0; k + 1 < tokens.size(); ++k) {
        const double weight = l2(vecs[k]) * l2(vecs[k + 1]);
        const auto r = pair_vector(tokens[k], tokens[k + 1]);
        for (std::size_t i = 0; i < kDim; ++i) sum[i] += weight * r[i];
    }
    const double n = l2(sum);
    for (double& v : sum) v /= n;
    return {std::move(sum), std::string(text)};
}

// --------------------------------------------------------------------- data

std::vector<float> toy_prototype(int label, const DenoiserConfig& config) {
    const auto& vocab = ToyVocabulary::standard();
    if (config.channels != 3 || config.side != 6) {
        throw ConfigError("toy images are 3x6x6");
    }
    if (label < 0 || label > vocab.background_label()) {
        throw ContractError("class label " + std::to_string(label) + " out of range");
    }
    std::vector<float> x(static_cast<std::size_t>(config.sample_dim()), -0.5f);
    if (label == vocab.background_label()) return x;
    const int color = label / static_cast<int>(vocab.shapes().size());
    const int shape = label % static_cast<int>(vocab.shapes().size());
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            if (kMasks[static_cast<std::size_t>(shape)][static_cast<std::size_t>(i)][j] == '#') {
                x[static_cast<std::size_t>(color * 36 + i * 6 + j)] = 1.0f;
            }
        }
    }
    return x;
}

ToyBatch toy_batch(std::size_t n, double noise_std, const DenoiserConfig& config, Rng& rng) {
    const auto& vocab = ToyVocabulary::standard();
    const auto dim = static_cast<std::size_t>(config.sample_dim());
    std::vector<std::vector<float>> protos;
    for (int c = 0; c < vocab.class_count(); ++c) protos.push_back(toy_prototype(c, config));

    ToyBatch batch{Matrix<float>(n, dim), std::vector<int>(n), std::vector<int>(n)};
    const int n_templates = static_cast<int>(vocab.templates().size());
    for (std::size_t r = 0; r < n; ++r) {
        batch.labels[r] = rng.uniform_int(0, vocab.class_count() - 1);
        batch.templates[r] = rng.uniform_int(0, n_templates - 1);
        const auto& p = protos[static_cast<std::size_t>(batch.labels[r])];
        auto row = batch.x0.row(r);
        for (std::size_t j = 0; j < dim; ++j) {
            row[j] = p[j] + static_cast<float>(noise_std * rng.normal());
        }
    }
    return batch;
}

// --------------------------------------------------------------- classifier

ToyClassifier::ToyClassifier(Matrix<double> centroids, double tau)
    : centroids_(std::move(centroids)), tau_(tau) {
    if (!(tau_ > 0.0)) throw ConfigError("classifier temperature must be positive");
}

ToyClassifier ToyClassifier::fit(const DenoiserConfig& config, int per_class, double noise_std,
                                 double tau, std::uint64_t seed) {
    const auto& vocab = ToyVocabulary::standard();
    const auto dim = static_cast<std::size_t>(config.sample_dim());
    Rng rng(seed);
    Matrix<double> centroids(static_cast<std::size_t>(vocab.class_count()), dim);
    for (int c = 0; c < vocab.class_count(); ++c) {
        const auto proto = toy_prototype(c, config);
        auto row = centroids.row(static_cast<std::size_t>(c));
        for (int s = 0; s < per_class; ++s) {
            for (std::size_t j = 0; j < dim; ++j) row[j] += proto[j] + noise_std * rng.normal();
        }
        for (auto& v : row) v /= per_class;
    }
    return ToyClassifier(std::move(centroids), tau);
}

std::vector<double> ToyClassifier::features(std::span<const float> x) const {
    if (x.size() != centroids_.cols()) throw ContractError("classifier input has the wrong size");
    std::vector<double> out(centroids_.rows());
    for (std::size_t c = 0; c < centroids_.rows(); ++c) {
        const auto mu = centroids_.row(c);
        double d2 = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double diff = static_cast<double>(x[j]) - mu[j];
            d2 += diff * diff;
        }
        out[c] = std::sqrt(d2);
    }
    return out;
}

std::vector<double> ToyClassifier::probabilities(std::span<const float> x) const {
    auto logits = features(x);
    double best = -std::numeric_limits<double>::infinity();
    for (double& v : logits) {
        v = -v * v / tau_;
        best = std::max(best, v);
    }
    double total = 0.0;
    for (double& v : logits) {
        v = std::exp(v - best);
        total += v;
    }
    for (double& v : logits) v /= total;
    return logits;
}

int ToyClassifier::predict(std::span<const float> x) const {
    const auto d = features(x);
    return static_cast<int>(std::min_element(d.begin(), d.end()) - d.begin());
}

// ------------------------------------------------------------------ testbed

double Testbed::mean_accuracy() const {
    if (accuracy.empty()) return 0.0;
    return std::accumulate(accuracy.begin(), accuracy.end(), 0.0) / static_cast<double>(accuracy.size());
}

Matrix<float> Testbed::generate(std::string_view prompt, std::size_t n, std::uint64_t seed,
                                std::span<const Intervention<float>> interventions,
                                int sampler_steps) const {
    return generate_samples<float>(model, schedule, encoder.encode(prompt), n, seed, interventions,
                                   sampler_steps);
}

namespace {

void log_line(const TestbedLog& log, const std::string& line) {
    if (log) log(line);
}

// Denoising-score pre-training on noisy prototypes; returns the last batch loss.
double pretrain(Denoiser<float>& model, const NoiseSchedule& schedule, const ToyTextEncoder& encoder,
                const TestbedOptions& options, std::uint64_t data_seed, long steps, double lr,
                const TestbedLog& log) {
    const auto& vocab = ToyVocabulary::standard();
    const auto& cfg = model.config();
    const std::size_t dim = model.sample_dim();
    const auto batch_size = static_cast<std::size_t>(options.batch_size);

    std::vector<std::vector<ConceptEncoding>> prompts(static_cast<std::size_t>(vocab.class_count()));
    for (int c = 0; c < vocab.class_count(); ++c) {
        for (int tp = 0; tp < static_cast<int>(vocab.templates().size()); ++tp) {
            prompts[static_cast<std::size_t>(c)].push_back(encoder.encode(vocab.prompt(c, tp)));
        }
    }

    Rng rng(data_seed);
    AdamW<float> optimizer;
    double last_loss = 0.0;
    for (long step = 0; step < steps; ++step) {
        auto batch = toy_batch(batch_size, options.noise_std, cfg, rng);
        std::vector<int> t(batch_size);
        Matrix<float> noise(batch_size, dim);
        Matrix<float> x_t(batch_size, dim);
        Matrix<float> cond(batch_size, static_cast<std::size_t>(cfg.cond_dim));
        for (std::size_t r = 0; r < batch_size; ++r) {
            t[r] = rng.uniform_int(1, schedule.steps());
            rng.fill_normal(noise.row(r));
            const double ab = schedule.alpha_bar(t[r]);
            const auto a = static_cast<float>(std::sqrt(ab));
            const auto b = static_cast<float>(std::sqrt(1.0 - ab));
            for (std::size_t j = 0; j < dim; ++j) x_t(r, j) = a * batch.x0(r, j) + b * noise(r, j);
            const auto& enc = prompts[static_cast<std::size_t>(batch.labels[r])]
                                     [static_cast<std::size_t>(batch.templates[r])];
            for (std::size_t j = 0; j < enc.size(); ++j) cond(r, j) = static_cast<float>(enc.values[j]);
        }

        DenoiserCache<float> cache;
        const auto pred = model.predict(x_t, cond, t, {}, &cache);
        Matrix<float> d_eps(batch_size, dim);
        const double scale = 2.0 / static_cast<double>(pred.size());
        double loss = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double diff = static_cast<double>(pred.data()[i]) - noise.data()[i];
            loss += diff * diff;
            d_eps.data()[i] = static_cast<float>(scale * diff);
        }
        loss /= static_cast<double>(pred.size());
        if (!std::isfinite(loss)) throw TestbedError("pre-training diverged at step " + std::to_string(step));
        last_loss = loss;

        auto grads = model.zero_grads();
        model.backward(cache, d_eps, {}, &grads);
        std::vector<std::span<float>> params;
        std::vector<std::span<const float>> grad_spans;
        for (std::size_t i = 0; i < grads.size(); ++i) {
            params.emplace_back(model.layers()[i].weight);
            params.emplace_back(model.layers()[i].bias);
            grad_spans.emplace_back(grads[i].weight);
            grad_spans.emplace_back(grads[i].bias);
        }
        optimizer.step(params, grad_spans, lr * cosine_decay_factor(step, steps));
        if (step % 500 == 0 || step + 1 == steps) {
            std::ostringstream os;
            os << "pretrain step " << step << " loss " << loss;
            log_line(log, os.str());
        }
    }
    return last_loss;
}

void check_testbed(Testbed& tb, const TestbedLog& log) {
    tb.accuracy = frozen_accuracy(tb, derive_seed(tb.seed, 3));
    std::ostringstream os;
    os << "frozen accuracy mean " << tb.mean_accuracy() << " background "
       << tb.accuracy.back();
    log_line(log, os.str());
    if (tb.mean_accuracy() < tb.options.min_accuracy) {
        throw TestbedError("pre-training did not converge: frozen accuracy " +
                           std::to_string(tb.mean_accuracy()) + " < " +
                           std::to_string(tb.options.min_accuracy));
    }
    const auto worst = std::min_element(tb.accuracy.begin(), tb.accuracy.end());
    if (*worst < tb.options.min_class_accuracy) {
        throw TestbedError("pre-training did not converge: class " +
                           std::to_string(worst - tb.accuracy.begin()) + " accuracy " +
                           std::to_string(*worst) + " < " +
                           std::to_string(tb.options.min_class_accuracy));
    }
    if (tb.accuracy.back() <= 0.5) {
        throw TestbedError("empty prompt does not generate the background class");
    }
}

}  // namespace

std::vector<double> frozen_accuracy(const Testbed& testbed, std::uint64_t seed) {
    const auto& vocab = testbed.vocabulary();
    const int n_templates = static_cast<int>(vocab.templates().size());
    const auto per = static_cast<std::size_t>(testbed.options.check_samples_per_template);
    std::vector<double> acc;
    for (int label = 0; label < vocab.class_count(); ++label) {
        std::size_t hits = 0;
        for (int tp = 0; tp < n_templates; ++tp) {
            const auto x = testbed.generate(vocab.prompt(label, tp), per,
                                            derive_seed(seed, static_cast<std::uint64_t>(label * n_templates + tp)));
            for (std::size_t r = 0; r < x.rows(); ++r) hits += testbed.classifier.predict(x.row(r)) == label;
        }
        acc.push_back(static_cast<double>(hits) / static_cast<double>(per * n_templates));
    }
    return acc;
}

Testbed build_testbed(std::uint64_t seed, const TestbedOptions& options, const TestbedLog& log) {
    Testbed tb;
    tb.seed = seed;
    tb.options = options;
    tb.schedule = NoiseSchedule::linear(options.schedule_steps, options.beta_start, options.beta_end);
    tb.encoder = ToyTextEncoder(options.encoder_seed);
    if (options.model.cond_dim != static_cast<int>(ToyTextEncoder::kDim)) {
        throw ConfigError("denoiser conditioning width must match the toy encoder");
    }
    tb.model = Denoiser<float>(options.model, derive_seed(seed, 1));
    tb.classifier = ToyClassifier::fit(options.model, options.classifier_fit_samples,
                                       options.noise_std, options.classifier_tau, derive_seed(seed, 4));
    tb.final_loss = pretrain(tb.model, tb.schedule, tb.encoder, options, derive_seed(seed, 2),
                             options.pretrain_steps, options.learning_rate, log);
    check_testbed(tb, log);
    return tb;
}

Testbed fine_tune_testbed(const Testbed& base, std::uint64_t seed, long steps, double learning_rate,
                          const TestbedLog& log) {
    if (steps < 1) throw ConfigError("fine-tuning needs at least one step");
    Testbed tb = base;
    tb.parent_digest = base.model.digest();
    tb.seed = seed;
    tb.final_loss = pretrain(tb.model, tb.schedule, tb.encoder, tb.options, derive_seed(seed, 5),
                             steps, learning_rate, log);
    check_testbed(tb, log);
    return tb;
}

// -------------------------------------------------------------- persistence

namespace {

std::vector<std::byte> denoiser_bytes(const Denoiser<float>& model) {
    std::vector<std::byte> out;
    for (const auto& l : model.layers()) {
        io::append_le<float>(out, l.weight);
        io::append_le<float>(out, l.bias);
    }
    return out;
}

nlohmann::json config_json(const DenoiserConfig& c) {
    return {{"channels", c.channels},       {"side", c.side},         {"conv_channels", c.conv_channels},
            {"hidden", c.hidden},           {"cond_dim", c.cond_dim}, {"time_features", c.time_features}};
}

DenoiserConfig config_from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.channels = j.at("channels");
    c.side = j.at("side");
    c.conv_channels = j.at("conv_channels");
    c.hidden = j.at("hidden");
    c.cond_dim = j.at("cond_dim");
    c.time_features = j.at("time_features");
    return c;
}

}  // namespace

void save_testbed(const Testbed& tb, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto model_bytes = denoiser_bytes(tb.model);
    std::vector<std::byte> clf_bytes;
    io::append_le<double>(clf_bytes, tb.classifier.centroids().span());

    const auto& o = tb.options;
    nlohmann::json j;
    j["format"] = kTestbedFormat;
    j["format_version"] = kTestbedFormatVersion;
    j["seed"] = tb.seed;
    j["parent_digest"] = tb.parent_digest;
    j["model"] = config_json(o.model);
    j["model_digest"] = tb.model.digest();
    j["signature_digest"] = tb.model.signature().digest();
    j["schedule"] = {{"steps", o.schedule_steps}, {"beta_start", o.beta_start}, {"beta_end", o.beta_end}};
    j["pretraining"] = {{"steps", o.pretrain_steps},         {"batch_size", o.batch_size},
                        {"learning_rate", o.learning_rate},  {"noise_std", o.noise_std},
                        {"final_loss", tb.final_loss}};
    j["classifier"] = {{"tau", tb.classifier.tau()},
                       {"classes", tb.classifier.class_count()},
                       {"fit_samples", o.classifier_fit_samples}};
    j["check"] = {{"samples_per_template", o.check_samples_per_template},
                  {"min_accuracy", o.min_accuracy},
                  {"min_class_accuracy", o.min_class_accuracy},
                  {"accuracy", tb.accuracy}};
    j["encoder"] = {{"name", tb.encoder.name()}, {"seed", tb.encoder.seed()}};
    j["files"] = {{"denoiser.bin", sha256_hex(model_bytes)}, {"classifier.bin", sha256_hex(clf_bytes)}};

    io::write_file_atomic(dir / "denoiser.bin", model_bytes);
    io::write_file_atomic(dir / "classifier.bin", clf_bytes);
    io::write_text_atomic(dir / "testbed.json", j.dump(2) + "\n");
}

Testbed load_testbed(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "testbed.json")) {
        throw TestbedError("no testbed found at '" + dir.string() + "' (run `spm testbed build`)");
    }
    const auto text = io::read_file(dir / "testbed.json");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(reinterpret_cast<const char*>(text.data()),
                                  reinterpret_cast<const char*>(text.data()) + text.size());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("testbed.json is not valid JSON: " + std::string(e.what()));
    }
    if (j.value("format", "") != kTestbedFormat) throw FormatError("not a testbed directory");
    const int version = j.at("format_version");
    if (version != kTestbedFormatVersion) {
        throw VersionError("testbed format version " + std::to_string(version) + " is not supported");
    }

    try {
        Testbed tb;
        tb.seed = j.at("seed");
        tb.parent_digest = j.at("parent_digest");
        auto& o = tb.options;
        o.model = config_from_json(j.at("model"));
        o.schedule_steps = j.at("schedule").at("steps");
        o.beta_start = j.at("schedule").at("beta_start");
        o.beta_end = j.at("schedule").at("beta_end");
        o.pretrain_steps = j.at("pretraining").at("steps");
        o.batch_size = j.at("pretraining").at("batch_size");
        o.learning_rate = j.at("pretraining").at("learning_rate");
        o.noise_std = j.at("pretraining").at("noise_std");
        tb.final_loss = j.at("pretraining").at("final_loss");
        o.classifier_tau = j.at("classifier").at("tau");
        o.classifier_fit_samples = j.at("classifier").at("fit_samples");
        o.check_samples_per_template = j.at("check").at("samples_per_template");
        o.min_accuracy = j.at("check").at("min_accuracy");
        o.min_class_accuracy = j.at("check").at("min_class_accuracy");
        tb.accuracy = j.at("check").at("accuracy").get<std::vector<double>>();
        o.encoder_seed = j.at("encoder").at("seed");
        tb.encoder = ToyTextEncoder(o.encoder_seed);
        tb.schedule = NoiseSchedule::linear(o.schedule_steps, o.beta_start, o.beta_end);

        const auto model_bytes = io::read_file(dir / "denoiser.bin");
        const auto clf_bytes = io::read_file(dir / "classifier.bin");
        if (sha256_hex(model_bytes) != j.at("files").at("denoiser.bin")) {
            throw ChecksumError("denoiser.bin checksum mismatch in '" + dir.string() + "'");
        }
        if (sha256_hex(clf_bytes) != j.at("files").at("classifier.bin")) {
            throw ChecksumError("classifier.bin checksum mismatch in '" + dir.string() + "'");
        }

        Denoiser<float> shape(o.model, 0);
        auto layers = shape.layers();
        std::size_t offset = 0;
        for (auto& l : layers) {
            const std::size_t need = (l.weight.size() + l.bias.size()) * sizeof(float);
            if (offset + need > model_bytes.size()) throw TruncatedError("denoiser.bin is truncated");
            l.weight = io::read_le<float>(model_bytes, offset, l.weight.size());
            offset += l.weight.size() * sizeof(float);
            l.bias = io::read_le<float>(model_bytes, offset, l.bias.size());
            offset += l.bias.size() * sizeof(float);
        }
        if (offset != model_bytes.size()) throw FormatError("denoiser.bin has trailing bytes");
        tb.model = Denoiser<float>::from_layers(o.model, std::move(layers));
        if (tb.model.digest() != j.at("model_digest")) {
            throw ChecksumError("denoiser digest mismatch in '" + dir.string() + "'");
        }

        const int classes = j.at("classifier").at("classes");
        const std::size_t n = static_cast<std::size_t>(classes) * static_cast<std::size_t>(o.model.sample_dim());
        if (clf_bytes.size() != n * sizeof(double)) throw TruncatedError("classifier.bin has the wrong size");
        tb.classifier = ToyClassifier(
            Matrix<double>(static_cast<std::size_t>(classes), static_cast<std::size_t>(o.model.sample_dim()),
                           io::read_le<double>(clf_bytes, 0, n)),
            o.classifier_tau);
        return tb;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("testbed.json is missing fields: " + std::string(e.what()));
    }
}

namespace {

template <typename Build>
Testbed cached(const std::filesystem::path& dir, Build build) {
    if (std::filesystem::exists(dir / "testbed.json")) return load_testbed(dir);
    Testbed tb = build();
    std::filesystem::create_directories(dir.parent_path());
    auto tmp = dir;
    tmp += ".tmp." + std::to_string(::getpid());
    std::filesystem::remove_all(tmp);
    save_testbed(tb, tmp);
    std::error_code ec;
    std::filesystem::rename(tmp, dir, ec);
    if (ec) std::filesystem::remove_all(tmp);  // another process got there first
    return tb;
}

}  // namespace

Testbed cached_testbed(const std::filesystem::path& cache, std::uint64_t seed, const TestbedLog& log) {
    return cached(cache / ("testbed-" + std::to_string(seed)), [&] { return build_testbed(seed, {}, log); });
}

Testbed cached_fine_tuned_testbed(const std::filesystem::path& cache, const Testbed& base,
                                  std::uint64_t ft_seed, const TestbedLog& log) {
    const auto dir = cache / ("testbed-" + std::to_string(base.seed) + "-ft" + std::to_string(ft_seed));
    return cached(dir, [&] { return fine_tune_testbed(base, ft_seed, 300, 5e-4, log); });
}

}  // namespace spm
