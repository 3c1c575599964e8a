// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pabdm {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

// Reserved vocabulary ids shared by every model and task.
inline constexpr Token kMaskToken = 0;
inline constexpr Token kPadToken = 1;
inline constexpr Token kEosToken = 2;

/// Precondition or contract violation on caller-supplied values.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values reached a numeric routine.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A decoding session broke one of its own invariants (e.g. ran past max_len).
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Batch prefix spread exceeds the candidate range; the caller must re-bucket.
class BucketingError : public DomainError {
 public:
  using DomainError::DomainError;
};

}  // namespace pabdm
