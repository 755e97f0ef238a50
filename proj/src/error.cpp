// Copyright 2026 The SPM Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "spm/error.hpp"

namespace spm {

const char* category_name(ErrorCategory category) {
    switch (category) {
        case ErrorCategory::kConfiguration: return "configuration";
        case ErrorCategory::kContract: return "contract";
        case ErrorCategory::kDegenerateInput: return "degenerate-input";
        case ErrorCategory::kTraining: return "training";
        case ErrorCategory::kTestbed: return "testbed";
        case ErrorCategory::kChecksum: return "checksum";
        case ErrorCategory::kVersion: return "version";
        case ErrorCategory::kTruncated: return "truncated";
        case ErrorCategory::kFormat: return "format";
        case ErrorCategory::kIncompatible: return "incompatible";
        case ErrorCategory::kIo: return "io";
    }
    return "unknown";
}

}  // namespace spm
