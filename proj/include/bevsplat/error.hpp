// Copyright Contributors to the bevsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bevsplat {

/// Precondition violated by caller-supplied values (shapes, ranges, non-finite input).
class DomainError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

/// Malformed input (`.bvt` stream or JSON document). `field()` names what failed.
class ParseError : public std::runtime_error {
  public:
    ParseError(std::string field, const std::string &detail)
        : std::runtime_error("parse error (" + field + "): " + detail), field_(std::move(field)) {}

    const std::string &field() const noexcept { return field_; }

  private:
    std::string field_;
};

/// Byte sink or source failure.
class IoError : public std::runtime_error {
  public:
    IoError(std::uint64_t offset, const std::string &detail)
        : std::runtime_error("I/O error at byte " + std::to_string(offset) + ": " + detail), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

  private:
    std::uint64_t offset_;
};

/// Numeric breakdown during optimization (non-finite loss or gradient).
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace bevsplat
