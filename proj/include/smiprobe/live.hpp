#pragma once

// Live sampling: run nvidia-smi (or anything printing the same CSV) as a
// child process and timestamp each line as it arrives. Timing is best effort;
// arrival times carry the scheduler's jitter, typically well under 1 ms on an
// idle host.

#include <chrono>
#include <memory>
#include <string>
#include <vector>

#include "smiprobe/ingest.hpp"

namespace smiprobe {

// nvidia-smi --query-gpu=timestamp,index,power.draw,power.draw.instant,
//   power.draw.average --format=csv,nounits -lms <interval_ms>
std::vector<std::string> default_smi_command(int query_interval_ms);

struct LiveOptions {
  double duration = 5.0;           // seconds until the child is stopped
  double first_row_timeout = 2.0;  // seconds allowed before the first row
  std::size_t queue_capacity = 4096;  // lines buffered between reader and parser
};

// Background capture that runs until stop(). Times (arrival and now()) are
// seconds since construction, so work timed with now() lines up with the
// records.
class LiveSampler {
 public:
  LiveSampler(const std::vector<std::string>& command, const LiveOptions& options = {});
  ~LiveSampler();
  LiveSampler(const LiveSampler&) = delete;
  LiveSampler& operator=(const LiveSampler&) = delete;

  double now() const;
  // Stops the child and returns what was parsed. Rethrows a parse error or
  // the no-rows timeout if either happened.
  SmiLog stop();

 private:
  struct State;
  std::unique_ptr<State> state_;
};

// Runs the command for options.duration seconds. Records carry arrival times
// in seconds since the child was started.
SmiLog live_capture(const std::vector<std::string>& command, const LiveOptions& options);

// Trace of power.draw (or the first power field present) for GPU 0.
PowerTrace live_sample(const std::vector<std::string>& command, double duration);

}  // namespace smiprobe
