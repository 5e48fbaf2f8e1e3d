// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RLRS_ERRORS_HPP
#define RLRS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace rlrs {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or incomplete configuration (missing key, unknown tag, bad value).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Argument outside an operation's domain (shape mismatch, step out of range).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace rlrs

#endif  // RLRS_ERRORS_HPP
