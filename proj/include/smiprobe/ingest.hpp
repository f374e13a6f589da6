#pragma once

// Getting traces into the toolkit: nvidia-smi CSV logs, the power meter's
// binary frame stream, and lining two traces up in time.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smiprobe/trace.hpp"

namespace smiprobe {

// Fields of `nvidia-smi --query-gpu=... --format=csv,nounits` that we read.
// Other columns are allowed in the log and ignored.
enum class SmiField { Timestamp, Index, PowerDraw, PowerInstant, PowerAverage, Arrival };

std::string_view field_name(SmiField field);

struct SmiLogRecord {
  std::int64_t wall_time_us = 0;  // printed timestamp, microseconds since the epoch
  std::optional<double> arrival_s;  // host time the line was read, when captured live
  int gpu_index = 0;
  std::optional<double> power_draw_w;
  std::optional<double> power_instant_w;
  std::optional<double> power_average_w;

  friend bool operator==(const SmiLogRecord&, const SmiLogRecord&) = default;
};

struct SmiLog {
  std::vector<SmiField> columns;  // recognised columns, in header order
  std::vector<SmiLogRecord> records;
  std::size_t skipped_rows = 0;  // rows where every power field was missing

  friend bool operator==(const SmiLog&, const SmiLog&) = default;
};

// "2024/01/31 13:45:07.125" <-> microseconds since the epoch (no time zone).
std::int64_t parse_smi_timestamp(std::string_view text);
std::string format_smi_timestamp(std::int64_t micros);

// Line-at-a-time parser for logs arriving from a running process. The first
// non-blank line must be the header.
class SmiLogParser {
 public:
  // Returns the record parsed from the line, if it held one.
  std::optional<SmiLogRecord> feed_line(std::string_view line,
                                        std::optional<double> arrival_s = std::nullopt);

  bool has_header() const { return !header_.empty(); }
  const SmiLog& log() const { return log_; }
  SmiLog take();

 private:
  struct Column {
    std::optional<SmiField> field;
  };
  void parse_header(std::string_view line);

  std::vector<Column> header_;
  SmiLog log_;
  std::size_t line_no_ = 0;
};

SmiLog read_smi_log(std::string_view text);
std::string serialize_smi_log(const SmiLog& log);

struct SmiTrace {
  int gpu_index = 0;
  SmiField field = SmiField::PowerDraw;
  PowerTrace trace;
};

// One trace per power field per GPU on a timebase starting at 0 at the first
// record. Arrival times are used when every record has one.
std::vector<SmiTrace> smi_traces(const SmiLog& log);
std::vector<SmiTrace> parse_smi_log(std::string_view text);

// Meter frames: sync byte, four rails of {voltage code, current code} as
// little-endian u16, then the 8-bit sum of those 16 payload bytes.
inline constexpr std::uint8_t kPmdSync = 0xAA;
inline constexpr std::size_t kPmdFrameSize = 18;
inline constexpr int kPmdRails = 4;

struct PmdCodes {
  std::array<std::uint16_t, kPmdRails> volt{};
  std::array<std::uint16_t, kPmdRails> amp{};
};

std::array<std::uint8_t, kPmdFrameSize> encode_pmd_frame(const PmdCodes& codes);

struct PmdDecodeOptions {
  double sample_rate = 5000.0;
  double volt_quantum = 0.007568;
  double amp_quantum = 0.0488;
  double max_drop_fraction = 0.01;
};

struct PmdStream {
  std::array<PowerTrace, kPmdRails> rails;
  PowerTrace total;
  std::size_t frames = 0;   // decoded
  std::size_t dropped = 0;  // slots lost to corruption
};

// Frames are timestamped by slot (slot / sample_rate); dropped frames keep
// their slot so later samples stay on time.
PmdStream decode_pmd_stream(std::span<const std::uint8_t> bytes,
                            const PmdDecodeOptions& options = {});

// Offset (seconds, on a 1 ms grid) within [min_offset, max_offset] that best
// correlates the traces, such that b(t + offset) matches a(t). Undo it with
// shift_earlier(b, offset).
double align_traces(const PowerTrace& a, const PowerTrace& b, double min_offset,
                    double max_offset);

}  // namespace smiprobe
