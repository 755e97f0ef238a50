// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace spm {

/// Error categories. The CLI maps each one to a distinct exit code.
enum class ErrorCategory {
    kConfiguration,
    kContract,
    kDegenerateInput,
    kTraining,
    kTestbed,
    kChecksum,
    kVersion,
    kTruncated,
    kFormat,
    kIncompatible,
    kIo,
};

const char* category_name(ErrorCategory category);

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

#define SPM_DEFINE_ERROR(Name, Category)                                   \
    class Name : public Error {                                            \
    public:                                                                \
        explicit Name(const std::string& message) : Error(Category, message) {} \
    };

SPM_DEFINE_ERROR(ConfigError, ErrorCategory::kConfiguration)
SPM_DEFINE_ERROR(ContractError, ErrorCategory::kContract)
SPM_DEFINE_ERROR(DegenerateInputError, ErrorCategory::kDegenerateInput)
SPM_DEFINE_ERROR(TestbedError, ErrorCategory::kTestbed)
SPM_DEFINE_ERROR(ChecksumError, ErrorCategory::kChecksum)
SPM_DEFINE_ERROR(VersionError, ErrorCategory::kVersion)
SPM_DEFINE_ERROR(TruncatedError, ErrorCategory::kTruncated)
SPM_DEFINE_ERROR(FormatError, ErrorCategory::kFormat)
SPM_DEFINE_ERROR(IncompatibleError, ErrorCategory::kIncompatible)
SPM_DEFINE_ERROR(IoError, ErrorCategory::kIo)

#undef SPM_DEFINE_ERROR

/// Raised when a loss turns non-finite; carries the step it happened on.
class TrainingError : public Error {
public:
    TrainingError(const std::string& message, long step)
        : Error(ErrorCategory::kTraining, message), step_(step) {}

    long step() const noexcept { return step_; }

private:
    long step_;
};

}  // namespace spm
