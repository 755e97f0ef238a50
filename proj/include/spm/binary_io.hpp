// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace spm::io {

/// Appends values to `out` as little-endian bytes.
template <typename T>
void append_le(std::vector<std::byte>& out, std::span<const T> values) {
    static_assert(std::is_arithmetic_v<T>);
    const std::size_t start = out.size();
    out.resize(start + values.size_bytes());
    std::memcpy(out.data() + start, values.data(), values.size_bytes());
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        for (std::size_t i = start; i < out.size(); i += sizeof(T)) {
            std::reverse(out.begin() + static_cast<std::ptrdiff_t>(i),
                         out.begin() + static_cast<std::ptrdiff_t>(i + sizeof(T)));
        }
    }
}

template <typename T>
void append_le(std::vector<std::byte>& out, T value) {
    append_le<T>(out, std::span<const T>(&value, 1));
}

/// Reads `count` little-endian values starting at `offset`; the caller checks bounds.
template <typename T>
std::vector<T> read_le(std::span<const std::byte> bytes, std::size_t offset, std::size_t count) {
    std::vector<T> out(count);
    std::memcpy(out.data(), bytes.data() + offset, count * sizeof(T));
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        auto* raw = reinterpret_cast<unsigned char*>(out.data());
        for (std::size_t i = 0; i < count; ++i) std::reverse(raw + i * sizeof(T), raw + (i + 1) * sizeof(T));
    }
    return out;
}

/// Whole-file read; throws IoError.
std::vector<std::byte> read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file, fsyncs and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes);

void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace spm::io
