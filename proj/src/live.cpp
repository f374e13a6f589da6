#include "smiprobe/live.hpp"

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

extern char** environ;

namespace smiprobe {

namespace {

using Clock = std::chrono::steady_clock;

struct Line {
  std::string text;
  double arrival = 0.0;
};

// Lines handed from the reader thread to the parser. push blocks while the
// queue is full; pop waits up to `timeout` for a line.
class LineQueue {
 public:
  explicit LineQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(Line line) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || cancelled_; });
    if (cancelled_) return;
    items_.push_back(std::move(line));
    not_empty_.notify_one();
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
  }

  void cancel() {
    std::lock_guard lock(mutex_);
    cancelled_ = true;
    not_full_.notify_all();
  }

  enum class Status { Line, Timeout, Closed };

  Status pop(Line& out, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    if (!not_empty_.wait_for(lock, timeout, [&] { return !items_.empty() || closed_; }))
      return Status::Timeout;
    if (items_.empty()) return Status::Closed;
    out = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return Status::Line;
  }

 private:
  std::size_t capacity_;
  std::mutex mutex_;
  std::condition_variable not_empty_, not_full_;
  std::deque<Line> items_;
  bool closed_ = false;
  bool cancelled_ = false;
};

class Child {
 public:
  explicit Child(const std::vector<std::string>& command) {
    if (command.empty()) throw Error("failed to start: empty command");
    int fds[2];
    if (pipe(fds) != 0) throw Error(std::string("failed to start: pipe: ") + std::strerror(errno));
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
    posix_spawn_file_actions_addclose(&actions, fds[0]);
    posix_spawn_file_actions_addclose(&actions, fds[1]);
    std::vector<char*> argv;
    for (const auto& a : command) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    const int rc = posix_spawnp(&pid_, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    close(fds[1]);
    if (rc != 0) {
      close(fds[0]);
      throw Error("failed to start '" + command[0] + "': " + std::strerror(rc));
    }
    fd_ = fds[0];
  }

  ~Child() {
    stop();
    if (fd_ >= 0) close(fd_);
  }

  int fd() const { return fd_; }

  void stop() {
    if (pid_ <= 0) return;
    kill(pid_, SIGTERM);
    for (int i = 0; i < 100; ++i) {
      if (waitpid(pid_, nullptr, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    kill(pid_, SIGKILL);
    waitpid(pid_, nullptr, 0);
    pid_ = -1;
  }

 private:
  pid_t pid_ = -1;
  int fd_ = -1;
};

void read_lines(int fd, Clock::time_point start, LineQueue& queue, const std::atomic<bool>& stop) {
  std::string pending;
  char buf[4096];
  while (!stop) {
    pollfd p{fd, POLLIN, 0};
    const int ready = poll(&p, 1, 20);
    if (ready < 0 && errno == EINTR) continue;
    if (ready <= 0) continue;
    const ssize_t n = read(fd, buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    const double now = std::chrono::duration<double>(Clock::now() - start).count();
    pending.append(buf, static_cast<std::size_t>(n));
    std::size_t nl;
    while ((nl = pending.find('\n')) != std::string::npos) {
      queue.push({pending.substr(0, nl), now});
      pending.erase(0, nl + 1);
    }
  }
  if (!pending.empty()) {
    queue.push({pending, std::chrono::duration<double>(Clock::now() - start).count()});
  }
  queue.close();
}

}  // namespace

std::vector<std::string> default_smi_command(int query_interval_ms) {
  if (query_interval_ms < 1) throw Error("invalid query interval: must be >= 1 ms");
  return {"nvidia-smi",
          "--query-gpu=timestamp,index,power.draw,power.draw.instant,power.draw.average",
          "--format=csv,nounits", "-lms", std::to_string(query_interval_ms)};
}

struct LiveSampler::State {
  Clock::time_point start = Clock::now();
  LiveOptions options;
  Child child;
  LineQueue queue;
  std::atomic<bool> stop{false};
  std::thread reader;
  std::thread consumer;
  SmiLogParser parser;
  bool got_row = false;
  std::exception_ptr error;

  State(const std::vector<std::string>& command, const LiveOptions& opts)
      : options(opts), child(command), queue(opts.queue_capacity) {}

  double elapsed() const { return std::chrono::duration<double>(Clock::now() - start).count(); }

  void consume() {
    try {
      while (!stop) {
        if (!got_row && elapsed() >= options.first_row_timeout)
          throw Error("no rows: nothing parsed within " +
                      std::to_string(options.first_row_timeout) + " s");
        Line line;
        const auto status = queue.pop(line, std::chrono::milliseconds(10));
        if (status == LineQueue::Status::Closed) break;
        if (status == LineQueue::Status::Timeout) continue;
        if (parser.feed_line(line.text, line.arrival)) got_row = true;
      }
    } catch (...) {
      error = std::current_exception();
    }
  }
};

LiveSampler::LiveSampler(const std::vector<std::string>& command, const LiveOptions& options) {
  if (options.queue_capacity == 0) throw Error("invalid live options: queue capacity is 0");
  state_ = std::make_unique<State>(command, options);
  State& s = *state_;
  s.reader = std::thread(read_lines, s.child.fd(), s.start, std::ref(s.queue), std::cref(s.stop));
  s.consumer = std::thread([&s] { s.consume(); });
}

LiveSampler::~LiveSampler() {
  if (state_) {
    try {
      stop();
    } catch (...) {
    }
  }
}

double LiveSampler::now() const { return state_->elapsed(); }

SmiLog LiveSampler::stop() {
  if (!state_) throw Error("live sampler already stopped");
  auto s = std::move(state_);
  s->stop = true;
  s->queue.cancel();
  s->reader.join();
  s->consumer.join();
  s->child.stop();
  if (s->error) std::rethrow_exception(s->error);
  if (!s->got_row) throw Error("no rows: the command produced no records");
  return s->parser.take();
}

SmiLog live_capture(const std::vector<std::string>& command, const LiveOptions& options) {
  if (!(options.duration > 0.0)) throw Error("no rows: capture duration must be > 0");
  LiveSampler sampler(command, options);
  std::this_thread::sleep_for(std::chrono::duration<double>(options.duration));
  SmiLog log = sampler.stop();
  std::erase_if(log.records, [&](const SmiLogRecord& r) { return *r.arrival_s > options.duration; });
  if (log.records.empty()) throw Error("no rows: the command produced no records");
  return log;
}

PowerTrace live_sample(const std::vector<std::string>& command, double duration) {
  LiveOptions options;
  options.duration = duration;
  const auto traces = smi_traces(live_capture(command, options));
  for (auto field : {SmiField::PowerDraw, SmiField::PowerInstant, SmiField::PowerAverage})
    for (const auto& t : traces)
      if (t.gpu_index == 0 && t.field == field) return t.trace;
  return traces.front().trace;
}

}  // namespace smiprobe
