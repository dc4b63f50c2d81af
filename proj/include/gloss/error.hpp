#pragma once

#include <stdexcept>
#include <string>

namespace gloss {

// Base class for all library errors. Concrete subtypes name the failure;
// the message carries context (record id, token index, offending value).
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace gloss
