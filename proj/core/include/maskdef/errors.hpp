#pragma once

#include <stdexcept>
#include <string>

namespace maskdef {

/// Malformed or unreadable input data (embedding files, tables, corpora,
/// model manifests).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition (bad position, bad config).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace maskdef
