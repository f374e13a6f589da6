#pragma once

// Delimited text form of a trace: header `t_s,power_w,source`, one sample per
// line. Numbers are written in shortest round-trip form so a write/read cycle
// is lossless and re-runs are byte-identical.

#include <filesystem>
#include <iosfwd>
#include <string>

#include "smiprobe/trace.hpp"

namespace smiprobe {

inline constexpr std::string_view kTraceHeader = "t_s,power_w,source";

std::string format_number(double value);
double parse_number(std::string_view text);

void write_trace(std::ostream& out, const PowerTrace& trace);
PowerTrace read_trace(std::istream& in);

void save_trace(const std::filesystem::path& path, const PowerTrace& trace);
PowerTrace load_trace(const std::filesystem::path& path);

}  // namespace smiprobe
