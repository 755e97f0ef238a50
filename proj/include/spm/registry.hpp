// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spm/adapter.hpp"
#include "spm/denoiser.hpp"
#include "spm/diffusion.hpp"
#include "spm/gating.hpp"
#include "spm/text.hpp"

namespace spm {

/// Membrane archive layout (all integers little-endian):
///   8 bytes  magic "SPMEMBR\0"
///   u32      format version
///   u64      manifest length in bytes
///   manifest UTF-8 JSON
///   payload  float32 tensors in manifest order, row-major
/// Tensors are named layers/<layer_id>/v_sig ([m, d]) and
/// layers/<layer_id>/v_reg ([d, n k^2]).
inline constexpr std::uint32_t kMembraneFormatVersion = 1;

struct TensorEntry {
    std::string name;
    std::vector<std::size_t> shape;
    std::uint64_t offset = 0;  // bytes from payload start
};

struct MembraneManifest {
    std::uint32_t format_version = kMembraneFormatVersion;
    std::string name;
    std::vector<std::string> targets;
    std::string surrogate;
    TrainMeta train_meta;
    ModelSignature source_signature;
    int dim = 0;
    std::string created;   // UTC, ISO 8601
    std::string checksum;  // "sha256:<hex>" of the payload
    std::uint64_t payload_bytes = 0;
    std::vector<TensorEntry> tensors;
};

/// Writes `membrane` to `path` under an exclusive lock on the destination
/// directory, via a temporary file and atomic rename. Returns the manifest.
MembraneManifest save_membrane(const Membrane& membrane, const std::filesystem::path& path);

/// Throws FormatError (not a membrane file), VersionError (unknown format
/// version), TruncatedError (short file) or ChecksumError (corrupt payload).
Membrane load_membrane(const std::filesystem::path& path);

/// Reads only the header and manifest.
MembraneManifest read_manifest(const std::filesystem::path& path);

/// Stable human-readable dump of a manifest.
std::string format_manifest(const MembraneManifest& manifest);

struct CompatibilityReport {
    bool ok = true;
    std::string message;                 // empty when ok
    std::optional<std::string> layer_id; // first offending layer, if any
};

CompatibilityReport check_compatibility(const Membrane& membrane, const ModelSignature& signature);

/// Frozen model plus a set of membranes, each gated per prompt. Keeps
/// references to model, schedule and encoder; they must outlive the handle.
class ComposedModel {
public:
    ComposedModel(const Denoiser<float>& model, const NoiseSchedule& schedule,
                  const TextEncoder& encoder, std::vector<Membrane> membranes,
                  GateOptions options = {});

    const std::vector<Membrane>& membranes() const noexcept { return membranes_; }
    const GateOptions& options() const noexcept { return options_; }
    const Denoiser<float>& model() const noexcept { return *model_; }

    /// One report per membrane.
    std::vector<GateReport> gate(std::string_view prompt) const;
    std::vector<Intervention<float>> interventions(std::string_view prompt) const;

    /// Same seeding contract as sample(); with no membranes the output is
    /// bit-identical to the frozen model.
    Matrix<float> generate(std::string_view prompt, std::size_t n, std::uint64_t seed,
                           int sampler_steps = 0) const;

private:
    const Denoiser<float>* model_;
    const NoiseSchedule* schedule_;
    const TextEncoder* encoder_;
    std::vector<Membrane> membranes_;
    GateOptions options_;
};

/// Validates every membrane against the model. Throws IncompatibleError
/// naming the membrane and first offending layer.
ComposedModel compose(std::vector<Membrane> membranes, const Denoiser<float>& model,
                      const NoiseSchedule& schedule, const TextEncoder& encoder,
                      GateOptions options = {});

}  // namespace spm
