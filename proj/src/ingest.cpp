#include "smiprobe/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <map>

#include "smiprobe/trace_io.hpp"

namespace smiprobe {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    out.push_back(trim(line.substr(pos, comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

// Header cells carry a unit suffix such as " [W]" unless the log was written
// without them.
std::string_view strip_unit(std::string_view cell) {
  if (!cell.empty() && cell.back() == ']') {
    const auto open = cell.rfind('[');
    if (open != std::string_view::npos && open > 0) return trim(cell.substr(0, open));
  }
  return cell;
}

bool is_power(SmiField f) {
  return f == SmiField::PowerDraw || f == SmiField::PowerInstant ||
         f == SmiField::PowerAverage;
}

bool is_missing(std::string_view cell) {
  return cell.empty() || cell == "[N/A]" || cell == "N/A" || cell == "[Not Supported]" ||
         cell == "[Unknown Error]";
}

std::optional<double>& power_slot(SmiLogRecord& r, SmiField f) {
  switch (f) {
    case SmiField::PowerInstant: return r.power_instant_w;
    case SmiField::PowerAverage: return r.power_average_w;
    default: return r.power_draw_w;
  }
}

const std::optional<double>& power_slot(const SmiLogRecord& r, SmiField f) {
  return power_slot(const_cast<SmiLogRecord&>(r), f);
}

int parse_int(std::string_view text, const char* what) {
  int value = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || end != text.data() + text.size() || text.empty())
    throw Error(std::string("malformed ") + what + " '" + std::string(text) + "'");
  return value;
}

std::string pad(long long value, int width) {
  std::string s = std::to_string(value);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

}  // namespace

std::string_view field_name(SmiField field) {
  switch (field) {
    case SmiField::Timestamp: return "timestamp";
    case SmiField::Index: return "index";
    case SmiField::PowerDraw: return "power.draw";
    case SmiField::PowerInstant: return "power.draw.instant";
    case SmiField::PowerAverage: return "power.draw.average";
    case SmiField::Arrival: return "host.arrival";
  }
  return "?";
}

std::int64_t parse_smi_timestamp(std::string_view text) {
  text = trim(text);
  // YYYY/MM/DD HH:MM:SS[.frac]
  const auto bad = [&] {
    return Error("malformed timestamp '" + std::string(text) + "'");
  };
  if (text.size() < 19 || text[4] != '/' || text[7] != '/' || text[10] != ' ' ||
      text[13] != ':' || text[16] != ':')
    throw bad();
  int y, mo, d, h, mi, s;
  try {
    y = parse_int(text.substr(0, 4), "year");
    mo = parse_int(text.substr(5, 2), "month");
    d = parse_int(text.substr(8, 2), "day");
    h = parse_int(text.substr(11, 2), "hour");
    mi = parse_int(text.substr(14, 2), "minute");
    s = parse_int(text.substr(17, 2), "second");
  } catch (const Error&) {
    throw bad();
  }
  std::int64_t micros = 0;
  if (text.size() > 19) {
    if (text[19] != '.' || text.size() == 20 || text.size() > 26) throw bad();
    const auto frac = text.substr(20);
    if (!std::all_of(frac.begin(), frac.end(), [](char c) { return c >= '0' && c <= '9'; }))
      throw bad();
    micros = parse_int(frac, "fraction");
    for (std::size_t i = frac.size(); i < 6; ++i) micros *= 10;
  }
  using namespace std::chrono;
  const year_month_day date{year{y}, month{static_cast<unsigned>(mo)},
                            day{static_cast<unsigned>(d)}};
  if (!date.ok() || h > 23 || mi > 59 || s > 60) throw bad();
  const auto days = sys_days(date).time_since_epoch().count();
  return ((static_cast<std::int64_t>(days) * 24 + h) * 60 + mi) * 60'000'000LL +
         static_cast<std::int64_t>(s) * 1'000'000 + micros;
}

std::string format_smi_timestamp(std::int64_t micros) {
  using namespace std::chrono;
  constexpr std::int64_t kDay = 86'400'000'000LL;
  std::int64_t days = micros / kDay;
  std::int64_t rest = micros % kDay;
  if (rest < 0) {
    rest += kDay;
    --days;
  }
  const year_month_day date{sys_days{std::chrono::days{days}}};
  const auto sec = rest / 1'000'000;
  const auto frac = rest % 1'000'000;
  std::string out = pad(static_cast<int>(date.year()), 4) + '/' +
                    pad(static_cast<unsigned>(date.month()), 2) + '/' +
                    pad(static_cast<unsigned>(date.day()), 2) + ' ' + pad(sec / 3600, 2) +
                    ':' + pad(sec / 60 % 60, 2) + ':' + pad(sec % 60, 2) + '.';
  // nvidia-smi prints milliseconds; keep sub-millisecond digits only if present
  out += frac % 1000 == 0 ? pad(frac / 1000, 3) : pad(frac, 6);
  return out;
}

void SmiLogParser::parse_header(std::string_view line) {
  bool has_time = false;
  bool has_power = false;
  std::vector<SmiField> seen;
  for (auto cell : split_fields(line)) {
    const auto name = strip_unit(cell);
    Column col;
    for (auto f : {SmiField::Timestamp, SmiField::Index, SmiField::PowerDraw,
                   SmiField::PowerInstant, SmiField::PowerAverage, SmiField::Arrival})
      if (name == field_name(f)) col.field = f;
    if (col.field) {
      if (std::find(seen.begin(), seen.end(), *col.field) != seen.end())
        throw Error("malformed header at line " + std::to_string(line_no_) +
                    ": duplicate column '" + std::string(name) + "'");
      seen.push_back(*col.field);
      has_time |= *col.field == SmiField::Timestamp;
      has_power |= is_power(*col.field);
    }
    header_.push_back(col);
  }
  if (!has_time || !has_power)
    throw Error("malformed header at line " + std::to_string(line_no_) +
                ": need a timestamp column and at least one power.draw column");
  log_.columns = seen;
}

std::optional<SmiLogRecord> SmiLogParser::feed_line(std::string_view line,
                                                    std::optional<double> arrival_s) {
  ++line_no_;
  line = trim(line);
  if (line.empty()) return std::nullopt;
  if (header_.empty()) {
    parse_header(line);
    return std::nullopt;
  }
  const auto cells = split_fields(line);
  const auto where = [&] { return "malformed row at line " + std::to_string(line_no_) + ": "; };
  if (cells.size() != header_.size())
    throw Error(where() + "expected " + std::to_string(header_.size()) + " fields, got " +
                std::to_string(cells.size()));
  SmiLogRecord rec;
  rec.arrival_s = arrival_s;
  bool any_power = false;
  try {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!header_[i].field) continue;
      const SmiField f = *header_[i].field;
      std::string_view cell = cells[i];
      if (f == SmiField::Timestamp) {
        rec.wall_time_us = parse_smi_timestamp(cell);
      } else if (f == SmiField::Index) {
        rec.gpu_index = parse_int(cell, "gpu index");
      } else if (f == SmiField::Arrival) {
        if (!is_missing(cell)) rec.arrival_s = parse_number(cell);
      } else if (!is_missing(cell)) {
        // Logs written with units print "123.45 W".
        if (cell.size() > 1 && cell.back() == 'W') cell = trim(cell.substr(0, cell.size() - 1));
        const double p = parse_number(cell);
        if (!std::isfinite(p) || p < 0.0)
          throw Error("power must be finite and >= 0, got '" + std::string(cell) + "'");
        power_slot(rec, f) = p;
        any_power = true;
      }
    }
  } catch (const Error& e) {
    throw Error(where() + e.what());
  }
  if (!any_power) {
    ++log_.skipped_rows;
    return std::nullopt;
  }
  log_.records.push_back(rec);
  return rec;
}

SmiLog SmiLogParser::take() {
  SmiLog out = std::move(log_);
  log_ = {};
  header_.clear();
  line_no_ = 0;
  return out;
}

SmiLog read_smi_log(std::string_view text) {
  if (trim(text).empty()) throw Error("empty input: no header or rows");
  SmiLogParser parser;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    parser.feed_line(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return parser.take();
}

std::string serialize_smi_log(const SmiLog& log) {
  std::vector<SmiField> columns = log.columns;
  const bool any_arrival = std::any_of(log.records.begin(), log.records.end(),
                                       [](const SmiLogRecord& r) { return r.arrival_s.has_value(); });
  if (any_arrival && std::find(columns.begin(), columns.end(), SmiField::Arrival) == columns.end())
    columns.push_back(SmiField::Arrival);
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i > 0) out += ", ";
    out += field_name(columns[i]);
    if (is_power(columns[i])) out += " [W]";
    if (columns[i] == SmiField::Arrival) out += " [s]";
  }
  out += '\n';
  for (const auto& r : log.records) {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (i > 0) out += ", ";
      switch (columns[i]) {
        case SmiField::Timestamp: out += format_smi_timestamp(r.wall_time_us); break;
        case SmiField::Index: out += std::to_string(r.gpu_index); break;
        case SmiField::Arrival:
          out += r.arrival_s ? format_number(*r.arrival_s) : "[N/A]";
          break;
        default: {
          const auto& v = power_slot(r, columns[i]);
          out += v ? format_number(*v) : "[N/A]";
        }
      }
    }
    out += '\n';
  }
  return out;
}

std::vector<SmiTrace> smi_traces(const SmiLog& log) {
  if (log.records.empty()) throw Error("insufficient samples: log has no rows");
  const bool use_arrival = std::all_of(log.records.begin(), log.records.end(),
                                       [](const SmiLogRecord& r) { return r.arrival_s.has_value(); });
  auto time_of = [&](const SmiLogRecord& r) {
    return use_arrival ? *r.arrival_s : static_cast<double>(r.wall_time_us) * 1e-6;
  };
  const double t0 = time_of(log.records.front());

  std::map<std::pair<int, int>, std::vector<PowerSample>> series;
  for (const auto& r : log.records) {
    // Differences taken before scaling keep microsecond timestamps exact.
    const double t = use_arrival ? *r.arrival_s - t0
                                 : static_cast<double>(r.wall_time_us - log.records.front().wall_time_us) * 1e-6;
    for (auto f : {SmiField::PowerDraw, SmiField::PowerInstant, SmiField::PowerAverage}) {
      const auto& v = power_slot(r, f);
      if (!v) continue;
      auto& s = series[{r.gpu_index, static_cast<int>(f)}];
      if (!s.empty() && !(t > s.back().t))
        throw Error("timestamp not increasing: GPU " + std::to_string(r.gpu_index) + " at t=" +
                    format_number(t));
      s.push_back({t, *v});
    }
  }
  std::vector<SmiTrace> out;
  for (auto& [key, samples] : series) {
    const auto field = static_cast<SmiField>(key.second);
    const Source source = field == SmiField::PowerAverage ? Source::SmiAverage : Source::SmiInstant;
    out.push_back({key.first, field, PowerTrace(source, std::move(samples))});
  }
  return out;
}

std::vector<SmiTrace> parse_smi_log(std::string_view text) {
  return smi_traces(read_smi_log(text));
}

std::array<std::uint8_t, kPmdFrameSize> encode_pmd_frame(const PmdCodes& codes) {
  std::array<std::uint8_t, kPmdFrameSize> frame{};
  frame[0] = kPmdSync;
  std::uint8_t sum = 0;
  for (int r = 0; r < kPmdRails; ++r) {
    if (codes.volt[r] > 4095 || codes.amp[r] > 4095)
      throw Error("invalid meter code: codes are 12-bit (<= 4095)");
    const std::uint16_t words[2] = {codes.volt[r], codes.amp[r]};
    for (int k = 0; k < 2; ++k) {
      const auto pos = static_cast<std::size_t>(1 + 4 * r + 2 * k);
      frame[pos] = static_cast<std::uint8_t>(words[k] & 0xFF);
      frame[pos + 1] = static_cast<std::uint8_t>(words[k] >> 8);
    }
  }
  for (std::size_t i = 1; i < kPmdFrameSize - 1; ++i) sum = static_cast<std::uint8_t>(sum + frame[i]);
  frame[kPmdFrameSize - 1] = sum;
  return frame;
}

namespace {

std::optional<PmdCodes> read_frame(std::span<const std::uint8_t> bytes, std::size_t at) {
  if (at + kPmdFrameSize > bytes.size() || bytes[at] != kPmdSync) return std::nullopt;
  std::uint8_t sum = 0;
  for (std::size_t i = 1; i < kPmdFrameSize - 1; ++i) sum = static_cast<std::uint8_t>(sum + bytes[at + i]);
  if (sum != bytes[at + kPmdFrameSize - 1]) return std::nullopt;
  PmdCodes codes;
  for (int r = 0; r < kPmdRails; ++r) {
    const auto pos = at + static_cast<std::size_t>(1 + 4 * r);
    codes.volt[r] = static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
    codes.amp[r] = static_cast<std::uint16_t>(bytes[pos + 2] | (bytes[pos + 3] << 8));
    if (codes.volt[r] > 4095 || codes.amp[r] > 4095) return std::nullopt;
  }
  return codes;
}

}  // namespace

PmdStream decode_pmd_stream(std::span<const std::uint8_t> bytes, const PmdDecodeOptions& options) {
  if (!(options.sample_rate > 0.0)) throw Error("invalid meter options: sample rate must be > 0");
  std::array<std::vector<PowerSample>, kPmdRails> rails;
  std::vector<PowerSample> total;
  const std::size_t expected = bytes.size() / kPmdFrameSize;
  for (auto& r : rails) r.reserve(expected);
  total.reserve(expected);

  PmdStream out;
  std::size_t at = 0;
  std::size_t slot = 0;
  while (at + kPmdFrameSize <= bytes.size()) {
    if (auto codes = read_frame(bytes, at)) {
      const double t = static_cast<double>(slot) / options.sample_rate;
      double sum = 0.0;
      for (int r = 0; r < kPmdRails; ++r) {
        const double p = (codes->volt[r] * options.volt_quantum) * (codes->amp[r] * options.amp_quantum);
        rails[r].push_back({t, p});
        sum += p;
      }
      total.push_back({t, sum});
      ++out.frames;
      ++slot;
      at += kPmdFrameSize;
      continue;
    }
    // Resync on the next sync byte that starts two valid frames in a row (or a
    // valid final frame), so a stray 0xAA inside a payload is not trusted.
    std::size_t next = at + 1;
    for (; next + kPmdFrameSize <= bytes.size(); ++next) {
      if (bytes[next] != kPmdSync || !read_frame(bytes, next)) continue;
      const std::size_t after = next + kPmdFrameSize;
      if (after + kPmdFrameSize > bytes.size() || read_frame(bytes, after)) break;
    }
    if (next + kPmdFrameSize > bytes.size()) next = bytes.size();
    const auto lost = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(next - at) / kPmdFrameSize)));
    out.dropped += lost;
    slot += lost;
    at = next;
  }
  const std::size_t slots = out.frames + out.dropped;
  if (slots == 0) throw Error("insufficient samples: no complete meter frame");
  if (static_cast<double>(out.dropped) > options.max_drop_fraction * static_cast<double>(slots))
    throw Error("unrecoverable desync: dropped " + std::to_string(out.dropped) + " of " +
                std::to_string(slots) + " frames");
  const double period = 1.0 / options.sample_rate;
  for (int r = 0; r < kPmdRails; ++r) out.rails[r] = PowerTrace(Source::Pmd, std::move(rails[r]), period);
  out.total = PowerTrace(Source::Pmd, std::move(total), period);
  return out;
}

double align_traces(const PowerTrace& a, const PowerTrace& b, double min_offset, double max_offset) {
  if (!(max_offset >= min_offset)) throw Error("invalid alignment range: max < min");
  if (a.size() < 2 || b.size() < 2) throw Error("insufficient samples: alignment needs two traces");
  constexpr double kGrid = 0.001;
  // Both traces are sampled on the same absolute 1 ms grid.
  const double origin = std::floor(std::min(a.front().t, b.front().t) / kGrid) * kGrid;
  auto resample = [&](const PowerTrace& tr, long long& first) {
    first = static_cast<long long>(std::ceil((tr.front().t - origin) / kGrid - 1e-9));
    const auto last = static_cast<long long>(std::floor((tr.back().t - origin) / kGrid + 1e-9));
    std::vector<double> v;
    for (long long k = first; k <= last; ++k)
      v.push_back(value_at(tr, std::clamp(origin + k * kGrid, tr.front().t, tr.back().t)));
    return v;
  };
  long long a0 = 0, b0 = 0;
  const auto va = resample(a, a0);
  const auto vb = resample(b, b0);
  auto flat = [](const std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return v.empty() || !(*hi - *lo > 1e-12 * std::max(1.0, std::abs(*hi)));
  };
  if (flat(va) || flat(vb)) throw Error("no alignment feature: a trace is flat");

  const auto lag_lo = static_cast<long long>(std::ceil(min_offset / kGrid - 1e-9));
  const auto lag_hi = static_cast<long long>(std::floor(max_offset / kGrid + 1e-9));
  const long long na = static_cast<long long>(va.size());
  const long long nb = static_cast<long long>(vb.size());
  double best_r = -2.0;
  long long best_lag = 0;
  bool found = false;
  for (long long lag = lag_lo; lag <= lag_hi; ++lag) {
    // a at grid k pairs with b at grid k + lag
    const long long k_lo = std::max(a0, b0 - lag);
    const long long k_hi = std::min(a0 + na - 1, b0 + nb - 1 - lag);
    if (k_hi - k_lo + 1 < 10) continue;
    const auto n = static_cast<double>(k_hi - k_lo + 1);
    double sa = 0, sb = 0;
    for (long long k = k_lo; k <= k_hi; ++k) {
      sa += va[static_cast<std::size_t>(k - a0)];
      sb += vb[static_cast<std::size_t>(k + lag - b0)];
    }
    const double ma = sa / n, mb = sb / n;
    double sab = 0, saa = 0, sbb = 0;
    for (long long k = k_lo; k <= k_hi; ++k) {
      const double x = va[static_cast<std::size_t>(k - a0)] - ma;
      const double y = vb[static_cast<std::size_t>(k + lag - b0)] - mb;
      sab += x * y;
      saa += x * x;
      sbb += y * y;
    }
    if (!(saa > 0.0 && sbb > 0.0)) continue;
    const double r = sab / std::sqrt(saa * sbb);
    // Ties go to the smallest shift.
    if (r > best_r + 1e-12 || (std::abs(r - best_r) <= 1e-12 && std::llabs(lag) < std::llabs(best_lag))) {
      best_r = r;
      best_lag = lag;
      found = true;
    }
  }
  if (!found) throw Error("no alignment feature: traces do not vary over a common span");
  return static_cast<double>(best_lag) * kGrid;
}

}  // namespace smiprobe
