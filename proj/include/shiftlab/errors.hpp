// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace shiftlab {

/// A training loss or gradient went non-finite.
class DivergenceError : public std::runtime_error {
public:
  DivergenceError(const std::string &what, std::size_t iteration)
      : std::runtime_error(what + " (iteration " + std::to_string(iteration) +
                           ")"),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

private:
  std::size_t iteration_;
};

} // namespace shiftlab
