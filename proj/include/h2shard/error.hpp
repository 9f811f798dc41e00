#pragma once

#include <stdexcept>
#include <string>

namespace h2shard {

/// Raised for malformed input, violated preconditions, and infeasible requests.
/// `what()` is always a single line so the CLI can print it verbatim.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& message) : std::runtime_error(message) {}
};

}  // namespace h2shard
