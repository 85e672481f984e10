// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace glag {

/// Raised when a caller breaks a documented precondition.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Model and dataset (or two datasets) disagree on dimension or class count.
class DimensionMismatch : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};

/// Matrix could not be factored even at the largest jitter.
class NotPsdError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed config document; key() names the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// File-format error. offset() is the byte position where parsing stopped.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::uint64_t offset, const std::string& what)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GLAG_EXPECT(cond, msg)                  \
  do {                                          \
    if (!(cond)) throw ::glag::ContractViolation(msg); \
  } while (0)

/// Warnings go to stderr unless silenced (tests and the C API toggle this).
void log_warning(const std::string& message);
void set_warnings_enabled(bool enabled);
std::uint64_t warning_count();

}  // namespace glag
