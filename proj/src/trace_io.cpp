#include "smiprobe/trace_io.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

namespace smiprobe {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

}  // namespace

std::string format_number(double value) {
  if (value == 0.0) value = 0.0;  // drop the sign of -0
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) throw Error("cannot format number");
  return std::string(buf.data(), end);
}

double parse_number(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || end != text.data() + text.size() || text.empty())
    throw Error("malformed number '" + std::string(text) + "'");
  return value;
}

void write_trace(std::ostream& out, const PowerTrace& trace) {
  const auto source = to_string(trace.source());
  out << kTraceHeader << '\n';
  for (const auto& s : trace.samples())
    out << format_number(s.t) << ',' << format_number(s.p) << ',' << source << '\n';
}

PowerTrace read_trace(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kTraceHeader)
    throw Error("malformed trace: expected header '" + std::string(kTraceHeader) + "'");
  std::vector<PowerSample> samples;
  std::optional<Source> source;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view row = trim(line);
    if (row.empty()) continue;
    const auto c1 = row.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : row.find(',', c1 + 1);
    if (c2 == std::string_view::npos)
      throw Error("malformed trace: line " + std::to_string(line_no));
    try {
      const Source s = source_from_string(trim(row.substr(c2 + 1)));
      if (source && *source != s)
        throw Error("mixed sources");
      source = s;
      samples.push_back({parse_number(row.substr(0, c1)),
                         parse_number(row.substr(c1 + 1, c2 - c1 - 1))});
    } catch (const Error& e) {
      throw Error("malformed trace: line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return PowerTrace(source.value_or(Source::GroundTruth), std::move(samples));
}

void save_trace(const std::filesystem::path& path, const PowerTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_trace(out, trace);
}

PowerTrace load_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return read_trace(in);
}

}  // namespace smiprobe
