// Copyright 2026 The KVCompose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace kvc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or matrix dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is invalid or infeasible.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An operation was called with arguments outside its contract.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// An internal structural invariant would be broken.
class InvariantError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

enum class FormatErrorKind {
  kBadMagic,
  kUnsupportedVersion,
  kTruncated,
  kTrailingBytes,
  kBadShape,
  kChecksumMismatch,
};

const char* to_string(FormatErrorKind kind);

/// Parse failure of a binary file; `offset` is the byte where the problem was found.
class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, std::uint64_t offset, const std::string& detail)
      : Error(std::string(to_string(kind)) + " at byte " + std::to_string(offset) + ": " +
              detail),
        kind_(kind),
        offset_(offset) {}

  FormatErrorKind kind() const { return kind_; }
  std::uint64_t offset() const { return offset_; }

 private:
  FormatErrorKind kind_;
  std::uint64_t offset_;
};

}  // namespace kvc
