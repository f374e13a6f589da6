#pragma once

#include <stdexcept>
#include <string>

namespace smiprobe {

// All library failures surface as this type. Messages start with a short,
// stable phrase (e.g. "insufficient samples") so callers can grep for them.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace smiprobe
