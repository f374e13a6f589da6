#pragma once

// The smiprobe command line: simulate | characterize | measure | report.
// Every error is printed to `err` as "smiprobe: error: <message>" and makes
// run_cli return non-zero.

#include <iosfwd>
#include <string>
#include <vector>

namespace smiprobe {

inline constexpr const char* kErrorPrefix = "smiprobe: error: ";

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace smiprobe
