// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace spm {

/// Pooled text encoding of a prompt or concept.
struct ConceptEncoding {
    std::vector<double> values;
    std::string source;

    double norm() const;
    std::size_t size() const noexcept { return values.size(); }
};

/// Cosine similarity in [-1, 1]. Throws DegenerateInputError on a zero-norm
/// or non-finite encoding and ContractError on a length mismatch.
double cosine(const ConceptEncoding& a, const ConceptEncoding& b);

/// Whole-word tokenizer: lower-cases ASCII and splits on anything that is not
/// a letter or digit.
std::vector<std::string> word_tokens(std::string_view text);

/// Text encoder contract shared by gating and anchor sampling.
class TextEncoder {
public:
    virtual ~TextEncoder() = default;

    virtual ConceptEncoding encode(std::string_view text) const = 0;
    virtual std::size_t dim() const = 0;
    virtual std::string name() const = 0;

    /// Tokens as the encoder sees them (case-folded, with duplicates).
    virtual std::vector<std::string> tokenize(std::string_view text) const {
        return word_tokens(text);
    }

    /// Deduplicated token set.
    std::set<std::string> token_set(std::string_view text) const;
};

/// Plug-in encoder backed by a word-vector table ("word v1 v2 ..." per line,
/// e.g. exported from an external text model). Encodes by mean-pooling the
/// known words; unknown words are skipped.
class TableTextEncoder final : public TextEncoder {
public:
    static TableTextEncoder from_file(const std::filesystem::path& path);
    explicit TableTextEncoder(std::unordered_map<std::string, std::vector<double>> table);

    ConceptEncoding encode(std::string_view text) const override;
    std::size_t dim() const override { return dim_; }
    std::string name() const override { return "table"; }

private:
    std::unordered_map<std::string, std::vector<double>> table_;
    std::size_t dim_ = 0;
};

/// Newline-delimited list of strings; blank lines and lines starting with
/// '#' are skipped, surrounding whitespace is trimmed.
std::vector<std::string> read_lines_file(const std::filesystem::path& path);

}  // namespace spm
