// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace diffseg {

// Base of every error the library raises. The CLI maps the subclasses onto
// exit codes (config 2, data 3, numeric 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed binary archive or volume file.
class FormatError : public DataError {
 public:
  enum class Kind { bad_magic, truncated, duplicate_name, invalid_field, io };

  FormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace diffseg
