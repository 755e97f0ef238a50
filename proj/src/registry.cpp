// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "spm/registry.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include <array>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "spm/binary_io.hpp"
#include "spm/digest.hpp"
#include "spm/error.hpp"

namespace spm {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'P', 'M', 'E', 'M', 'B', 'R', '\0'};
constexpr std::size_t kHeaderBytes = kMagic.size() + sizeof(std::uint32_t) + sizeof(std::uint64_t);

using nlohmann::json;

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

json manifest_json(const MembraneManifest& m) {
    json layers = json::array();
    for (const auto& l : m.source_signature.layers()) {
        layers.push_back({{"id", l.layer_id}, {"m", l.m}, {"n", l.n}, {"k", l.kernel_size}});
    }
    json tensors = json::array();
    for (const auto& t : m.tensors) {
        tensors.push_back({{"name", t.name}, {"dtype", "float32"}, {"shape", t.shape}, {"offset", t.offset}});
    }
    const auto& tm = m.train_meta;
    return {{"format_version", m.format_version},
            {"name", m.name},
            {"targets", m.targets},
            {"surrogate", m.surrogate},
            {"dim", m.dim},
            {"train_meta",
             {{"eta", tm.eta},
              {"alpha", tm.alpha},
              {"lambda", tm.lambda},
              {"steps", tm.steps},
              {"seed", tm.seed},
              {"anchor_samples", tm.anchor_samples},
              {"learning_rate", tm.learning_rate},
              {"enable_la", tm.enable_la}}},
            {"source_signature", {{"digest", m.source_signature.digest()}, {"layers", layers}}},
            {"created", m.created},
            {"checksum", m.checksum},
            {"payload_bytes", m.payload_bytes},
            {"tensors", tensors}};
}

MembraneManifest manifest_from_json(const json& j) {
    MembraneManifest m;
    m.format_version = j.at("format_version");
    m.name = j.at("name");
    m.targets = j.at("targets").get<std::vector<std::string>>();
    m.surrogate = j.at("surrogate");
    m.dim = j.at("dim");
    const auto& tm = j.at("train_meta");
    m.train_meta = TrainMeta{tm.at("eta"),  tm.at("alpha"),          tm.at("lambda"),        tm.at("steps"),
                             tm.at("seed"), tm.at("anchor_samples"), tm.at("learning_rate"), tm.at("enable_la")};
    std::vector<LayerSignature> layers;
    for (const auto& l : j.at("source_signature").at("layers")) {
        layers.push_back({l.at("id"), l.at("m"), l.at("n"), l.at("k")});
    }
    m.source_signature = ModelSignature(std::move(layers));
    if (m.source_signature.digest() != j.at("source_signature").at("digest")) {
        throw FormatError("manifest signature digest does not match its layer list");
    }
    m.created = j.at("created");
    m.checksum = j.at("checksum");
    m.payload_bytes = j.at("payload_bytes");
    for (const auto& t : j.at("tensors")) {
        if (t.at("dtype") != "float32") throw FormatError("unsupported tensor dtype");
        m.tensors.push_back({t.at("name"), t.at("shape").get<std::vector<std::size_t>>(), t.at("offset")});
    }
    return m;
}

struct ParsedHeader {
    std::uint32_t version = 0;
    std::uint64_t manifest_bytes = 0;
};

ParsedHeader parse_header(std::span<const std::byte> bytes, const std::filesystem::path& path) {
    if (bytes.size() < kMagic.size() || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
        if (bytes.size() < kMagic.size() && !bytes.empty() &&
            std::memcmp(bytes.data(), kMagic.data(), bytes.size()) == 0) {
            throw TruncatedError("'" + path.string() + "' ends inside the header");
        }
        throw FormatError("'" + path.string() + "' is not a membrane file");
    }
    if (bytes.size() < kHeaderBytes) throw TruncatedError("'" + path.string() + "' ends inside the header");
    ParsedHeader h;
    h.version = io::read_le<std::uint32_t>(bytes, kMagic.size(), 1)[0];
    h.manifest_bytes = io::read_le<std::uint64_t>(bytes, kMagic.size() + 4, 1)[0];
    if (h.version != kMembraneFormatVersion) {
        throw VersionError("'" + path.string() + "' has format version " + std::to_string(h.version) +
                           "; this build reads version " + std::to_string(kMembraneFormatVersion));
    }
    if (bytes.size() - kHeaderBytes < h.manifest_bytes) {
        throw TruncatedError("'" + path.string() + "' ends inside the manifest");
    }
    return h;
}

MembraneManifest parse_manifest(std::span<const std::byte> bytes, const ParsedHeader& h,
                                const std::filesystem::path& path) {
    const auto* begin = reinterpret_cast<const char*>(bytes.data() + kHeaderBytes);
    try {
        auto m = manifest_from_json(json::parse(begin, begin + h.manifest_bytes));
        if (m.format_version != h.version) throw FormatError("manifest and header versions differ");
        return m;
    } catch (const json::exception& e) {
        throw FormatError("'" + path.string() + "' has a malformed manifest: " + e.what());
    }
}

// Holds flock() on a directory for the lifetime of the object.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& dir) {
        fd_ = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
        if (fd_ < 0) throw IoError("cannot open directory '" + dir.string() + "'");
        if (::flock(fd_, LOCK_EX) != 0) {
            ::close(fd_);
            throw IoError("cannot lock directory '" + dir.string() + "'");
        }
    }
    ~DirectoryLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    int fd_ = -1;
};

}  // namespace

MembraneManifest save_membrane(const Membrane& membrane, const std::filesystem::path& path) {
    membrane.validate();
    MembraneManifest m;
    m.name = membrane.name;
    m.targets = membrane.targets;
    m.surrogate = membrane.surrogate;
    m.train_meta = membrane.train_meta;
    m.source_signature = membrane.source_signature;
    m.dim = membrane.dim();
    m.created = utc_now();

    std::vector<std::byte> payload;
    for (const auto& sig : membrane.source_signature.layers()) {
        const auto& l = membrane.layers.at(sig.layer_id);
        m.tensors.push_back({"layers/" + sig.layer_id + "/v_sig",
                             {static_cast<std::size_t>(l.m), static_cast<std::size_t>(l.d)},
                             payload.size()});
        io::append_le<float>(payload, l.v_sig);
        m.tensors.push_back({"layers/" + sig.layer_id + "/v_reg",
                             {static_cast<std::size_t>(l.d), l.reg_cols()},
                             payload.size()});
        io::append_le<float>(payload, l.v_reg);
    }
    m.payload_bytes = payload.size();
    m.checksum = "sha256:" + sha256_hex(payload);

    const std::string manifest = manifest_json(m).dump();
    std::vector<std::byte> file;
    file.reserve(kHeaderBytes + manifest.size() + payload.size());
    io::append_le<char>(file, std::span<const char>(kMagic));
    io::append_le<std::uint32_t>(file, kMembraneFormatVersion);
    io::append_le<std::uint64_t>(file, manifest.size());
    io::append_le<char>(file, std::span<const char>(manifest.data(), manifest.size()));
    file.insert(file.end(), payload.begin(), payload.end());

    auto dir = path.parent_path();
    if (dir.empty()) dir = ".";
    std::filesystem::create_directories(dir);
    DirectoryLock lock(dir);
    io::write_file_atomic(path, file);
    return m;
}

MembraneManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::byte> head(kHeaderBytes);
    in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
    head.resize(static_cast<std::size_t>(in.gcount()));
    if (head.size() < kHeaderBytes) parse_header(head, path);  // throws with the right category
    const auto version = io::read_le<std::uint32_t>(head, kMagic.size(), 1)[0];
    const auto length = io::read_le<std::uint64_t>(head, kMagic.size() + 4, 1)[0];
    if (std::memcmp(head.data(), kMagic.data(), kMagic.size()) == 0 && version == kMembraneFormatVersion &&
        length < (std::uint64_t{1} << 32)) {
        head.resize(kHeaderBytes + length);
        in.read(reinterpret_cast<char*>(head.data() + kHeaderBytes), static_cast<std::streamsize>(length));
        head.resize(kHeaderBytes + static_cast<std::size_t>(in.gcount()));
    }
    const auto h = parse_header(head, path);
    return parse_manifest(head, h, path);
}

Membrane load_membrane(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    const auto h = parse_header(bytes, path);
    const auto m = parse_manifest(bytes, h, path);
    const std::size_t start = kHeaderBytes + h.manifest_bytes;
    const std::size_t available = bytes.size() - start;
    if (available < m.payload_bytes) {
        throw TruncatedError("'" + path.string() + "' payload has " + std::to_string(available) + " of " +
                             std::to_string(m.payload_bytes) + " bytes");
    }
    if (available > m.payload_bytes) throw FormatError("'" + path.string() + "' has trailing bytes");
    const std::span<const std::byte> payload(bytes.data() + start, m.payload_bytes);
    if ("sha256:" + sha256_hex(payload) != m.checksum) {
        throw ChecksumError("'" + path.string() + "' payload checksum mismatch");
    }

    Membrane out;
    out.name = m.name;
    out.targets = m.targets;
    out.surrogate = m.surrogate;
    out.train_meta = m.train_meta;
    out.source_signature = m.source_signature;
    const auto& sigs = m.source_signature.layers();
    if (m.tensors.size() != 2 * sigs.size()) {
        throw FormatError("'" + path.string() + "' tensor list does not match its layer list");
    }
    for (std::size_t i = 0; i < sigs.size(); ++i) {
        auto layer = SpmLayer::zeros_like(sigs[i], m.dim);
        const auto& ts = m.tensors[2 * i];
        const auto& tr = m.tensors[2 * i + 1];
        const std::string prefix = "layers/" + sigs[i].layer_id + "/";
        const std::vector<std::size_t> sig_shape{static_cast<std::size_t>(layer.m), static_cast<std::size_t>(layer.d)};
        const std::vector<std::size_t> reg_shape{static_cast<std::size_t>(layer.d), layer.reg_cols()};
        if (ts.name != prefix + "v_sig" || tr.name != prefix + "v_reg" || ts.shape != sig_shape ||
            tr.shape != reg_shape || ts.offset + layer.v_sig.size() * 4 > m.payload_bytes ||
            tr.offset + layer.v_reg.size() * 4 > m.payload_bytes) {
            throw FormatError("'" + path.string() + "' tensor entries for layer '" + sigs[i].layer_id +
                              "' are inconsistent");
        }
        layer.v_sig = io::read_le<float>(payload, ts.offset, layer.v_sig.size());
        layer.v_reg = io::read_le<float>(payload, tr.offset, layer.v_reg.size());
        out.layers.emplace(sigs[i].layer_id, std::move(layer));
    }
    out.validate();
    return out;
}

std::string format_manifest(const MembraneManifest& m) {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "name: " << m.name << '\n';
    os << "format_version: " << m.format_version << '\n';
    os << "targets:";
    for (const auto& t : m.targets) os << " \"" << t << '"';
    os << '\n';
    os << "surrogate: \"" << m.surrogate << "\"\n";
    os << "dim: " << m.dim << '\n';
    const auto& tm = m.train_meta;
    os << "train_meta: eta=" << tm.eta << " alpha=" << tm.alpha << " lambda=" << tm.lambda
       << " steps=" << tm.steps << " seed=" << tm.seed << " anchor_samples=" << tm.anchor_samples
       << " learning_rate=" << tm.learning_rate << " la=" << (tm.enable_la ? "on" : "off") << '\n';
    os << "source_signature: " << m.source_signature.digest() << '\n';
    os << "overhead_ratio: " << overhead_ratio(m.source_signature, m.dim) << '\n';
    os << "created: " << m.created << '\n';
    os << "checksum: " << m.checksum << '\n';
    os << "payload_bytes: " << m.payload_bytes << '\n';
    for (const auto& l : m.source_signature.layers()) {
        os << "layer " << l.layer_id << " m=" << l.m << " n=" << l.n << " k=" << l.kernel_size
           << " v_sig=[" << l.m << "," << m.dim << "] v_reg=[" << m.dim << ","
           << l.n * l.kernel_size * l.kernel_size << "]\n";
    }
    return os.str();
}

CompatibilityReport check_compatibility(const Membrane& membrane, const ModelSignature& signature) {
    CompatibilityReport report;
    const auto mismatch = membrane.source_signature.first_mismatch(signature);
    if (!mismatch) return report;
    report.ok = false;
    report.message = "membrane '" + membrane.name + "' is incompatible: " + *mismatch;
    // Name the first layer whose entry differs, preferring the membrane's view.
    const auto& a = membrane.source_signature.layers();
    const auto& b = signature.layers();
    for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
        if (i >= a.size()) { report.layer_id = b[i].layer_id; break; }
        if (i >= b.size() || !(a[i] == b[i])) { report.layer_id = a[i].layer_id; break; }
    }
    return report;
}

ComposedModel::ComposedModel(const Denoiser<float>& model, const NoiseSchedule& schedule,
                             const TextEncoder& encoder, std::vector<Membrane> membranes, GateOptions options)
    : model_(&model), schedule_(&schedule), encoder_(&encoder), membranes_(std::move(membranes)),
      options_(options) {
    options_.validate();
}

std::vector<GateReport> ComposedModel::gate(std::string_view prompt) const {
    std::vector<GateReport> out;
    for (const auto& m : membranes_) out.push_back(permeability(m, prompt, *encoder_, options_));
    return out;
}

std::vector<Intervention<float>> ComposedModel::interventions(std::string_view prompt) const {
    std::vector<Intervention<float>> out;
    const auto reports = gate(prompt);
    for (std::size_t i = 0; i < membranes_.size(); ++i) {
        out.push_back({&membranes_[i], static_cast<float>(reports[i].gamma_scaled)});
    }
    return out;
}

Matrix<float> ComposedModel::generate(std::string_view prompt, std::size_t n, std::uint64_t seed,
                                      int sampler_steps) const {
    const auto ivs = interventions(prompt);
    return generate_samples<float>(*model_, *schedule_, encoder_->encode(prompt), n, seed, ivs, sampler_steps);
}

ComposedModel compose(std::vector<Membrane> membranes, const Denoiser<float>& model,
                      const NoiseSchedule& schedule, const TextEncoder& encoder, GateOptions options) {
    for (const auto& m : membranes) {
        m.validate();
        const auto report = check_compatibility(m, model.signature());
        if (!report.ok) throw IncompatibleError(report.message);
    }
    return ComposedModel(model, schedule, encoder, std::move(membranes), options);
}

}  // namespace spm
