// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "spm/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "spm/error.hpp"

namespace spm {

double ConceptEncoding::norm() const {
    double sum = 0.0;
    for (double v : values) sum += v * v;
    return std::sqrt(sum);
}

double cosine(const ConceptEncoding& a, const ConceptEncoding& b) {
    if (a.size() != b.size()) {
        throw ContractError("encoding lengths differ: " + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()));
    }
    const double na = a.norm();
    const double nb = b.norm();
    if (!(na > 0.0) || !(nb > 0.0) || !std::isfinite(na) || !std::isfinite(nb)) {
        throw DegenerateInputError("zero-norm encoding for '" + (na > 0.0 ? b.source : a.source) +
                                   "'");
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a.values[i] * b.values[i];
    return std::clamp(dot / (na * nb), -1.0, 1.0);
}

std::vector<std::string> word_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : text) {
        const auto uc = static_cast<unsigned char>(ch);
        if (std::isalnum(uc)) {
            current.push_back(static_cast<char>(std::tolower(uc)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::set<std::string> TextEncoder::token_set(std::string_view text) const {
    auto tokens = tokenize(text);
    return {tokens.begin(), tokens.end()};
}

TableTextEncoder TableTextEncoder::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open encoder table " + path.string());
    std::unordered_map<std::string, std::vector<double>> table;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream fields(line);
        std::string word;
        if (!(fields >> word) || word.front() == '#') continue;
        std::vector<double> values;
        double v;
        while (fields >> v) values.push_back(v);
        auto tokens = word_tokens(word);
        if (tokens.size() != 1) continue;
        table[tokens.front()] = std::move(values);
    }
    return TableTextEncoder(std::move(table));
}

TableTextEncoder::TableTextEncoder(std::unordered_map<std::string, std::vector<double>> table)
    : table_(std::move(table)) {
    if (table_.empty()) throw ConfigError("encoder table is empty");
    dim_ = table_.begin()->second.size();
    for (const auto& [word, values] : table_) {
        if (values.size() != dim_ || dim_ == 0) {
            throw ConfigError("encoder table row '" + word + "' has inconsistent length");
        }
    }
}

ConceptEncoding TableTextEncoder::encode(std::string_view text) const {
    ConceptEncoding out{std::vector<double>(dim_, 0.0), std::string(text)};
    std::size_t count = 0;
    for (const auto& token : tokenize(text)) {
        auto it = table_.find(token);
        if (it == table_.end()) continue;
        for (std::size_t i = 0; i < dim_; ++i) out.values[i] += it->second[i];
        ++count;
    }
    if (count > 0) {
        for (double& v : out.values) v /= static_cast<double>(count);
    }
    return out;
}

std::vector<std::string> read_lines_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto last = line.find_last_not_of(" \t\r");
        lines.push_back(line.substr(first, last - first + 1));
    }
    return lines;
}

}  // namespace spm
