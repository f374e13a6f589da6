#include "smiprobe/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <spawn.h>
#include <sys/wait.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "smiprobe/characterize.hpp"
#include "smiprobe/energy.hpp"
#include "smiprobe/experiments.hpp"
#include "smiprobe/ingest.hpp"
#include "smiprobe/live.hpp"
#include "smiprobe/plot.hpp"
#include "smiprobe/trace_io.hpp"

extern char** environ;

namespace smiprobe {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------- config

struct SessionConfig {
  std::optional<std::string> preset;
  std::optional<SensorCharacteristics> sensor;
  LoadProfile load;
  double idle_power = 60.0;
  double transition_tau = 0.002;
  double noise_std = 2.0;
  double pmd_noise_std = 1.0;
  double quant_step = 0.01;
  double period_error_max = 0.01;
  double cycle_jitter = 0.005;

  std::optional<int> repetitions, shifts, trials;
  std::optional<double> shift_delay, discard_lead;

  std::uint64_t seed = 1;
  std::string out_dir = ".";

  double sim_duration = 9.0;

  int repeats = 32;
  double query_interval = 0.005;
  double query_jitter = 0.0;
  double step_time = 1.0;
  std::vector<double> steady_levels = {50.0, 100.0, 150.0, 200.0};
  int steady_repeats = 4;

  double rep_duration = 0.1;
  int phases = 1;
  bool apply_affine = true;
};

using Keys = std::set<std::string>;

void check_keys(const json& obj, const std::string& path, const Keys& allowed,
                std::vector<std::string>& unknown) {
  if (!obj.is_object()) throw Error("invalid config: '" + path + "' must be an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) unknown.push_back(path.empty() ? key : path + "." + key);
}

template <typename T>
void read_into(const json& obj, const char* key, T& target) {
  if (!obj.contains(key)) return;
  try {
    target = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(std::string("invalid config: bad value for '") + key + "'");
  }
}

template <typename T>
void read_into(const json& obj, const char* key, std::optional<T>& target) {
  if (!obj.contains(key)) return;
  T value{};
  read_into(obj, key, value);
  target = value;
}

json chars_to_json(const SensorCharacteristics& c) {
  return {{"update_period", c.update_period}, {"window", c.window},
          {"gain", c.gain},                   {"offset", c.offset},
          {"rise_time", c.rise_time},         {"transient_class", std::string(to_string(c.transient_class))},
          {"log_tau", c.log_tau}};
}

const Keys kCharsKeys = {"update_period", "window", "gain", "offset",
                         "rise_time",     "transient_class", "log_tau"};

SensorCharacteristics chars_from_json(const json& j, const std::string& path,
                                      std::vector<std::string>& unknown) {
  check_keys(j, path, kCharsKeys, unknown);
  SensorCharacteristics c;
  read_into(j, "update_period", c.update_period);
  read_into(j, "window", c.window);
  read_into(j, "gain", c.gain);
  read_into(j, "offset", c.offset);
  read_into(j, "rise_time", c.rise_time);
  read_into(j, "log_tau", c.log_tau);
  if (j.contains("transient_class")) {
    std::string name;
    read_into(j, "transient_class", name);
    c.transient_class = transient_class_from_string(name);
  }
  return c;
}

SessionConfig config_from_json(const json& j) {
  std::vector<std::string> unknown;
  check_keys(j, "",
             {"preset", "sensor", "load", "truth", "plan", "seed", "out_dir", "simulate",
              "characterize", "measure"},
             unknown);
  SessionConfig c;
  if (j.contains("preset")) {
    std::string p;
    read_into(j, "preset", p);
    c.preset = p;
  }
  if (j.contains("sensor")) c.sensor = chars_from_json(j["sensor"], "sensor", unknown);
  if (j.contains("load")) {
    const auto& l = j["load"];
    check_keys(l, "load", {"period", "duty", "p_high", "p_low"}, unknown);
    read_into(l, "period", c.load.period);
    read_into(l, "duty", c.load.duty);
    read_into(l, "p_high", c.load.p_high);
    read_into(l, "p_low", c.load.p_low);
  }
  if (j.contains("truth")) {
    const auto& t = j["truth"];
    check_keys(t, "truth",
               {"idle_power", "transition_tau", "noise_std", "pmd_noise_std", "quant_step",
                "period_error_max", "cycle_jitter"},
               unknown);
    read_into(t, "idle_power", c.idle_power);
    read_into(t, "transition_tau", c.transition_tau);
    read_into(t, "noise_std", c.noise_std);
    read_into(t, "pmd_noise_std", c.pmd_noise_std);
    read_into(t, "quant_step", c.quant_step);
    read_into(t, "period_error_max", c.period_error_max);
    read_into(t, "cycle_jitter", c.cycle_jitter);
  }
  if (j.contains("plan")) {
    const auto& p = j["plan"];
    check_keys(p, "plan", {"repetitions", "shifts", "trials", "shift_delay", "discard_lead"},
               unknown);
    read_into(p, "repetitions", c.repetitions);
    read_into(p, "shifts", c.shifts);
    read_into(p, "trials", c.trials);
    read_into(p, "shift_delay", c.shift_delay);
    read_into(p, "discard_lead", c.discard_lead);
  }
  read_into(j, "seed", c.seed);
  read_into(j, "out_dir", c.out_dir);
  if (j.contains("simulate")) {
    check_keys(j["simulate"], "simulate", {"duration"}, unknown);
    read_into(j["simulate"], "duration", c.sim_duration);
  }
  if (j.contains("characterize")) {
    const auto& ch = j["characterize"];
    check_keys(ch, "characterize",
               {"repeats", "query_interval", "query_jitter", "step_time", "steady_levels",
                "steady_repeats"},
               unknown);
    read_into(ch, "repeats", c.repeats);
    read_into(ch, "query_interval", c.query_interval);
    read_into(ch, "query_jitter", c.query_jitter);
    read_into(ch, "step_time", c.step_time);
    read_into(ch, "steady_levels", c.steady_levels);
    read_into(ch, "steady_repeats", c.steady_repeats);
  }
  if (j.contains("measure")) {
    const auto& m = j["measure"];
    check_keys(m, "measure", {"rep_duration", "phases", "apply_affine"}, unknown);
    read_into(m, "rep_duration", c.rep_duration);
    read_into(m, "phases", c.phases);
    read_into(m, "apply_affine", c.apply_affine);
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw Error("invalid config: unknown keys: " + list);
  }
  return c;
}

json config_to_json(const SessionConfig& c) {
  json j;
  if (c.preset) j["preset"] = *c.preset;
  if (c.sensor) j["sensor"] = chars_to_json(*c.sensor);
  j["load"] = {{"period", c.load.period}, {"duty", c.load.duty},
               {"p_high", c.load.p_high}, {"p_low", c.load.p_low}};
  j["truth"] = {{"idle_power", c.idle_power},
                {"transition_tau", c.transition_tau},
                {"noise_std", c.noise_std},
                {"pmd_noise_std", c.pmd_noise_std},
                {"quant_step", c.quant_step},
                {"period_error_max", c.period_error_max},
                {"cycle_jitter", c.cycle_jitter}};
  json plan = json::object();
  if (c.repetitions) plan["repetitions"] = *c.repetitions;
  if (c.shifts) plan["shifts"] = *c.shifts;
  if (c.trials) plan["trials"] = *c.trials;
  if (c.shift_delay) plan["shift_delay"] = *c.shift_delay;
  if (c.discard_lead) plan["discard_lead"] = *c.discard_lead;
  j["plan"] = plan;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["simulate"] = {{"duration", c.sim_duration}};
  j["characterize"] = {{"repeats", c.repeats},
                       {"query_interval", c.query_interval},
                       {"query_jitter", c.query_jitter},
                       {"step_time", c.step_time},
                       {"steady_levels", c.steady_levels},
                       {"steady_repeats", c.steady_repeats}};
  j["measure"] = {{"rep_duration", c.rep_duration},
                  {"phases", c.phases},
                  {"apply_affine", c.apply_affine}};
  return j;
}

SensorCharacteristics sensor_of(const SessionConfig& c) {
  if (c.preset && c.sensor)
    throw Error("invalid config: give either a preset or explicit sensor characteristics, not both");
  if (c.sensor) {
    c.sensor->validate();
    return *c.sensor;
  }
  return find_preset(c.preset.value_or("a100")).chars;
}

SimulationSetup setup_of(const SessionConfig& c, const SensorCharacteristics& chars) {
  SimulationSetup s = default_setup(chars);
  s.truth.load.duty = c.load.duty;
  s.truth.load.p_high = c.load.p_high;
  s.truth.load.p_low = c.load.p_low;
  s.truth.idle_power = c.idle_power;
  s.truth.transition_tau = c.transition_tau;
  s.truth.noise_std = c.noise_std;
  s.pmd.noise_std = c.pmd_noise_std;
  s.sensor.quant_step = c.quant_step;
  s.period_error_max = c.period_error_max;
  s.period_error_min = std::min(s.period_error_min, c.period_error_max);
  s.cycle_jitter = c.cycle_jitter;
  s.truth.load.validate();
  return s;
}

// ---------------------------------------------------------------- output

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  f << content;
  if (!f) throw Error("cannot write '" + path.string() + "'");
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string trace_text(const PowerTrace& trace) {
  std::ostringstream ss;
  write_trace(ss, trace);
  return ss.str();
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

fs::path prepare_out_dir(const SessionConfig& c) {
  fs::path dir(c.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory '" + c.out_dir + "': " + ec.message());
  return dir;
}

std::vector<std::string> split_command(const std::string& command) {
  std::istringstream ss(command);
  std::vector<std::string> out;
  for (std::string word; ss >> word;) out.push_back(word);
  if (out.empty()) throw Error("empty command");
  return out;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::optional<double> duration, load_period, duty;
};

void cmd_simulate(const SessionConfig& cfg, const SimulateArgs& args, std::ostream& out) {
  SessionConfig c = cfg;
  if (args.duration) c.sim_duration = *args.duration;
  if (args.load_period) c.load.period = *args.load_period;
  if (args.duty) c.load.duty = *args.duty;
  if (!(c.sim_duration > 0.0)) throw Error("invalid config: simulate.duration must be > 0");
  const auto chars = sensor_of(c);
  const auto setup = setup_of(c, chars);
  const auto session = simulate_session(setup, c.load.period, c.sim_duration, c.seed);

  const fs::path dir = prepare_out_dir(c);
  write_file(dir / "ground_truth.csv", trace_text(session.truth));
  write_file(dir / "smi.csv", trace_text(session.smi));
  write_file(dir / "pmd.csv", trace_text(session.pmd));
  std::string markers = "kind,start_s,end_s\n";
  for (const auto& s : session.segments) {
    if (s.start >= c.sim_duration) break;
    markers += std::string(s.level == c.load.p_high ? "high" : "low") + ',' +
               format_number(s.start) + ',' + format_number(std::min(s.end, c.sim_duration)) + '\n';
  }
  write_file(dir / "markers.csv", markers);
  json session_json = {{"command", "simulate"},
                       {"config", config_to_json(c)},
                       {"sensor", chars_to_json(chars)},
                       {"sensor_phase_s", session.phase},
                       {"files", {"ground_truth.csv", "smi.csv", "pmd.csv", "markers.csv"}}};
  write_file(dir / "session.json", session_json.dump(2) + "\n");
  out << "simulated " << format_number(c.sim_duration) << " s on "
      << c.preset.value_or(c.sensor ? "explicit sensor" : "a100") << ": "
      << session.smi.size() << " sensor readings, " << session.pmd.size()
      << " meter samples -> " << dir.string() << "\n";
}

// ---------------------------------------------------------------- characterize

struct CharacterizeArgs {
  std::string smi_file, reference_file;
  std::optional<double> load_period;
  std::optional<double> step_time;
  std::optional<int> repeats;
  std::optional<double> query_ms;
  std::optional<double> live_seconds;
  std::string live_command;
};

template <typename F>
auto run_experiment(const char* name, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw Error(std::string(name) + " experiment failed: " + e.what());
  }
}

json histogram_json(const std::map<int, int>& h) {
  json j = json::object();
  for (const auto& [ms, count] : h) j[std::to_string(ms)] = count;
  return j;
}

struct Characterization {
  json report;
  std::string text;
  std::map<std::string, std::string> files;
};

void add_update_period(Characterization& ch, const UpdatePeriodEstimate& est) {
  ch.report["update_period"] = {{"median_s", est.median_period},
                                {"runs", est.runs},
                                {"histogram_ms", histogram_json(est.histogram)}};
  ch.text += "update period: " + fixed(est.median_period * 1e3, 1) + " ms (median of " +
             std::to_string(est.runs) + " runs)\n";
  std::string csv = "run_ms,count\n";
  std::vector<Bar> bars;
  for (const auto& [ms, count] : est.histogram) {
    csv += std::to_string(ms) + ',' + std::to_string(count) + '\n';
    bars.push_back({std::to_string(ms), static_cast<double>(count), 0.0});
  }
  ch.files["update_period_histogram.csv"] = csv;
  ch.files["update_period_histogram.svg"] =
      bar_chart_svg(bars, {"Update period runs", "run length (ms)", "count"});
}

void add_transient(Characterization& ch, const TransientFit& fit) {
  json t = {{"class", std::string(to_string(fit.cls))},
            {"ambiguous", fit.ambiguous},
            {"rise_time_s", fit.rise_time},
            {"baseline_w", fit.baseline},
            {"plateau_w", fit.plateau},
            {"ramp_duration_s", fit.ramp_duration},
            {"exp_tau_s", fit.exp_tau}};
  if (fit.reference_rise_time) t["reference_rise_time_s"] = *fit.reference_rise_time;
  ch.report["transient"] = t;
  ch.text += "transient: " + std::string(to_string(fit.cls)) + (fit.ambiguous ? " (ambiguous)" : "") +
             ", rise time " + fixed(fit.rise_time * 1e3, 1) + " ms\n";
}

void add_window(Characterization& ch, const ProtocolEstimate& est, const PowerTrace* smi,
                const PowerTrace* reference, double base) {
  ch.report["window"] = {{"median_s", est.estimate.window},
                         {"std_s", est.estimate.stddev},
                         {"runs", est.runs.size()},
                         {"not_converged", est.estimate.not_converged},
                         {"base_period_s", base}};
  ch.text += "averaging window: " + fixed(est.estimate.window * 1e3, 1) + " ms (std " +
             fixed(est.estimate.stddev * 1e3, 2) + " ms over " + std::to_string(est.runs.size()) +
             " runs)\n";
  std::string runs = "fraction,repeat,window_s,loss,converged\n";
  std::map<double, PointGroup> groups;
  for (const auto& r : est.runs) {
    runs += format_number(r.fraction) + ',' + std::to_string(r.repeat) + ',' +
            format_number(r.window) + ',' + (std::isfinite(r.loss) ? format_number(r.loss) : "inf") +
            ',' + (r.converged ? "1" : "0") + '\n';
    auto& g = groups[r.fraction];
    g.label = fixed(r.fraction, 3);
    g.values.push_back(r.window * 1e3);
  }
  ch.files["window_runs.csv"] = runs;
  std::vector<PointGroup> list;
  for (auto& [f, g] : groups) list.push_back(g);
  ch.files["window_violin.svg"] =
      strip_chart_svg(list, {"Window estimates per load fraction", "load period / base period",
                             "window (ms)"});
  if (smi && reference) {
    const double hi = std::max(2.0 * base, 2.0 * est.estimate.window);
    const auto curve = loss_curve(*smi, *reference, 0.001, hi, hi / 400.0);
    std::string csv = "window_s,loss\n";
    Series s{"loss", {}, {}, false};
    for (const auto& p : curve) {
      csv += format_number(p.window) + ',' + (std::isfinite(p.loss) ? format_number(p.loss) : "inf") + '\n';
      if (!std::isfinite(p.loss)) continue;
      s.x.push_back(p.window * 1e3);
      s.y.push_back(p.loss);
    }
    ch.files["loss_curve.csv"] = csv;
    ch.files["loss_curve.svg"] = line_chart_svg({s}, {"Window loss", "window (ms)", "loss"});
  }
}

void add_steady_state(Characterization& ch, const LinearFit& fit, const std::vector<SteadyStatePoint>& pts) {
  ch.report["steady_state"] = {{"gain", fit.gradient},
                               {"offset_w", fit.intercept},
                               {"r_squared", fit.r_squared},
                               {"points", fit.points}};
  ch.text += "steady state: gain " + fixed(fit.gradient, 4) + ", offset " + fixed(fit.intercept, 3) +
             " W, R^2 " + fixed(fit.r_squared, 5) + "\n";
  std::string csv = "reference_w,sensor_w\n";
  for (const auto& p : pts) csv += format_number(p.reference_w) + ',' + format_number(p.sensor_w) + '\n';
  ch.files["steady_state.csv"] = csv;
}

// Base period for the window protocol: the update period, or the averaging
// span when the sensor reports a running average.
double protocol_base(const TransientFit& fit, double update_period) {
  if (fit.cls == TransientClass::LinearRunningAvg && fit.ramp_duration > update_period)
    return fit.ramp_duration;
  return update_period;
}

Characterization characterize_simulated(const SessionConfig& c, const CharacterizeArgs& args) {
  const auto chars = sensor_of(c);
  const auto setup = setup_of(c, chars);
  Characterization ch;

  QueryConfig query;
  query.interval = args.query_ms ? *args.query_ms / 1e3 : c.query_interval;
  query.jitter = c.query_jitter;
  const auto period = run_experiment("update-period", [&] {
    const double duration = std::max(10.0, 40.0 * chars.update_period);
    const auto polled = update_period_capture(setup, query, duration, mix_seed(c.seed, 100));
    return estimate_update_period(polled);
  });
  add_update_period(ch, period);

  const double step_time = args.step_time.value_or(c.step_time);
  const auto fit = run_experiment("transient", [&] {
    const auto cap = step_capture(setup, step_time, step_time + 3.0, mix_seed(c.seed, 200));
    TransientOptions opts;
    opts.update_period = period.median_period;
    opts.reference = &cap.reference;
    return classify_transient(cap.smi, step_time, opts);
  });
  add_transient(ch, fit);

  const double base = protocol_base(fit, period.median_period);
  ProtocolOptions protocol;
  protocol.repeats = args.repeats.value_or(c.repeats);
  const auto source = simulated_capture_source(setup, mix_seed(c.seed, 300));
  const auto window = run_experiment("window", [&] {
    return estimate_window_protocol(source, base, protocol);
  });
  const auto sample = source(base, 0, 0);
  add_window(ch, window, &sample.smi, &sample.reference, base);

  const auto steady = run_experiment("steady-state", [&] {
    auto pts = steady_state_capture(setup, c.steady_levels, c.steady_repeats, mix_seed(c.seed, 400));
    return std::make_pair(steady_state_regression(pts), pts);
  });
  add_steady_state(ch, steady.first, steady.second);

  SensorCharacteristics found;
  found.update_period = period.median_period;
  found.window = window.estimate.window;
  found.gain = steady.first.gradient;
  found.offset = steady.first.intercept;
  found.rise_time = fit.rise_time;
  found.transient_class = fit.cls;
  if (fit.cls == TransientClass::LogGrowth) found.log_tau = fit.exp_tau;
  ch.report["characteristics"] = chars_to_json(found);
  ch.report["simulated_sensor"] = chars_to_json(chars);
  return ch;
}

Characterization characterize_files(const SessionConfig& c, const CharacterizeArgs& args) {
  Characterization ch;
  PowerTrace smi;
  if (args.live_seconds) {
    const auto command = args.live_command.empty()
                             ? default_smi_command(static_cast<int>(std::lround(args.query_ms.value_or(5.0))))
                             : split_command(args.live_command);
    smi = run_experiment("live capture", [&] { return live_sample(command, *args.live_seconds); });
  } else {
    smi = load_trace(args.smi_file);
  }
  const auto period = run_experiment("update-period", [&] { return estimate_update_period(smi); });
  add_update_period(ch, period);
  SensorCharacteristics found;
  found.update_period = period.median_period;

  std::optional<PowerTrace> reference;
  if (!args.reference_file.empty()) reference = load_trace(args.reference_file);

  std::optional<TransientFit> fit;
  if (args.step_time) {
    fit = run_experiment("transient", [&] {
      TransientOptions opts;
      opts.update_period = period.median_period;
      if (reference) opts.reference = &*reference;
      return classify_transient(smi, *args.step_time, opts);
    });
    add_transient(ch, *fit);
    found.rise_time = fit->rise_time;
    found.transient_class = fit->cls;
  }

  if (reference) {
    WindowSearchOptions search;
    if (args.load_period) search.load_period = *args.load_period;
    const double base = fit ? protocol_base(*fit, period.median_period) : period.median_period;
    const auto est = run_experiment("window", [&] {
      return estimate_window(smi, *reference, base, search);
    });
    ProtocolEstimate single;
    single.estimate = est;
    single.runs.push_back({args.load_period ? *args.load_period / base : 0.0, 0, est.window,
                           est.loss_at_min, est.converged});
    add_window(ch, single, &smi, &*reference, base);
    found.window = est.window;

    // Each reading against the reference averaged over the recovered window.
    const auto steady = run_experiment("steady-state", [&] {
      const WindowLoss loss(smi, *reference);
      const EnergyIndex index(*reference);
      std::vector<SteadyStatePoint> pts;
      for (double t : loss.times())
        pts.push_back({index.trailing_mean(t, est.window), value_at(smi, t)});
      return std::make_pair(steady_state_regression(pts), pts);
    });
    add_steady_state(ch, steady.first, steady.second);
    found.gain = steady.first.gradient;
    found.offset = steady.first.intercept;
  }
  ch.report["characteristics"] = chars_to_json(found);
  (void)c;
  return ch;
}

void cmd_characterize(const SessionConfig& cfg, const CharacterizeArgs& args, std::ostream& out) {
  const bool from_input = !args.smi_file.empty() || args.live_seconds.has_value();
  if (!from_input && !args.reference_file.empty())
    throw Error("characterize: --reference needs --smi");
  if (args.repeats && *args.repeats < 1) throw Error("characterize: --repeats must be >= 1");
  Characterization ch = from_input ? characterize_files(cfg, args) : characterize_simulated(cfg, args);
  ch.report["command"] = "characterize";
  ch.report["mode"] = from_input ? (args.live_seconds ? "live" : "files") : "simulated";
  ch.report["config"] = config_to_json(cfg);

  const fs::path dir = prepare_out_dir(cfg);
  write_file(dir / "characterization.json", ch.report.dump(2) + "\n");
  write_file(dir / "characterization.txt", ch.text);
  for (const auto& [name, content] : ch.files) write_file(dir / name, content);
  out << ch.text;
}

// ---------------------------------------------------------------- measure

struct MeasureArgs {
  std::optional<double> rep_duration;
  std::optional<int> phases;
  std::string chars_file;
  std::string command;
  std::string smi_command;
  bool no_affine = false;
};

MeasurementPlan plan_of(const SessionConfig& c, const SensorCharacteristics& chars, double rep) {
  MeasurementPlan plan = plan_measurement(chars, rep);
  if (c.repetitions) plan.repetitions = *c.repetitions;
  if (c.shifts) plan.shifts = *c.shifts;
  if (c.trials) plan.trials = *c.trials;
  if (c.shift_delay) plan.shift_delay = *c.shift_delay;
  if (c.discard_lead) plan.discard_lead = *c.discard_lead;
  plan.validate();
  return plan;
}

json plan_to_json(const MeasurementPlan& p) {
  return {{"repetitions", p.repetitions},   {"shifts", p.shifts},
          {"shift_delay_s", p.shift_delay}, {"trials", p.trials},
          {"inter_trial_min_s", p.inter_trial_min}, {"inter_trial_max_s", p.inter_trial_max},
          {"discard_lead_s", p.discard_lead}, {"discard_after_delay_s", p.discard_after_delay},
          {"discard_tail_s", p.discard_tail}};
}

SensorCharacteristics chars_from_report(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error("malformed characterization '" + path.string() + "': " + e.what());
  }
  if (!j.contains("characteristics"))
    throw Error("malformed characterization '" + path.string() + "': no characteristics");
  std::vector<std::string> unknown;
  auto chars = chars_from_json(j["characteristics"], "characteristics", unknown);
  chars.validate();
  return chars;
}

void run_and_wait(const std::vector<std::string>& command) {
  std::vector<char*> argv;
  for (const auto& a : command) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, argv[0], nullptr, nullptr, argv.data(), environ);
  if (rc != 0) throw Error("failed to start '" + command[0] + "': " + std::strerror(rc));
  int status = 0;
  waitpid(pid, &status, 0);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    throw Error("workload '" + command[0] + "' failed");
}

void cmd_measure(const SessionConfig& cfg, const MeasureArgs& args, std::ostream& out) {
  SessionConfig c = cfg;
  if (args.rep_duration) c.rep_duration = *args.rep_duration;
  if (args.phases) c.phases = *args.phases;
  if (args.no_affine) c.apply_affine = false;
  if (!(c.rep_duration > 0.0)) throw Error("invalid config: measure.rep_duration must be > 0");
  if (c.phases < 1) throw Error("invalid config: measure.phases must be >= 1");

  const bool live = !args.command.empty();
  // The simulated sensor; corrections use --chars instead when given.
  const SensorCharacteristics sensor = sensor_of(c);
  const SensorCharacteristics chars =
      args.chars_file.empty() ? sensor : chars_from_report(args.chars_file);
  const MeasurementPlan plan = plan_of(c, chars, c.rep_duration);
  const CorrectionOptions correction{c.apply_affine};

  json report = {{"command", "measure"},
                 {"mode", live ? "live" : "simulated"},
                 {"config", config_to_json(c)},
                 {"characteristics", chars_to_json(chars)},
                 {"plan", plan_to_json(plan)}};
  std::string text;
  std::string trials_csv = "phase,trial,naive_j,corrected_j,naive_error_pct,corrected_error_pct\n";
  std::vector<double> naive_err, corr_err, naive_j, corr_j, ref_j;

  if (live) {
    const auto workload = split_command(args.command);
    const auto smi_cmd = args.smi_command.empty() ? default_smi_command(5) : split_command(args.smi_command);
    std::mt19937_64 rng(c.seed);
    std::uniform_real_distribution<double> gap(plan.inter_trial_min, plan.inter_trial_max);
    LiveOptions opts;
    LiveSampler sampler(smi_cmd, opts);
    RepetitionLog log;
    const auto shifts = schedule_shifts(plan.repetitions, plan.shifts, plan.shift_delay);
    auto sleep_for = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
    sleep_for(std::max(1.0, chars.effective_window() + chars.update_period));
    for (int trial = 0; trial < plan.trials; ++trial) {
      sleep_for(gap(rng));
      std::size_t next = 0;
      for (int rep = 1; rep <= plan.repetitions; ++rep) {
        const double t0 = sampler.now();
        run_and_wait(workload);
        log.add({t0, sampler.now()}, trial);
        if (next < shifts.size() && shifts[next].after_rep == rep) sleep_for(shifts[next++].delay);
      }
    }
    sleep_for(chars.effective_window() + 2.0 * chars.update_period);
    const auto traces = smi_traces(sampler.stop());
    const PowerTrace* smi = nullptr;
    for (const auto& t : traces)
      if (t.gpu_index == 0 && t.field == SmiField::PowerDraw) smi = &t.trace;
    if (!smi) smi = &traces.front().trace;
    const auto r = measure_energy(*smi, log, plan, chars, correction);
    for (std::size_t i = 0; i < r.per_trial_j.size(); ++i) {
      trials_csv += "0," + std::to_string(i) + ',' + format_number(r.per_trial_naive_j[i]) + ',' +
                    format_number(r.per_trial_j[i]) + ",,\n";
      naive_j.push_back(r.per_trial_naive_j[i]);
      corr_j.push_back(r.per_trial_j[i]);
    }
    write_file(prepare_out_dir(c) / "smi.csv", trace_text(*smi));
  } else {
    const auto setup = setup_of(c, sensor);
    for (int phase = 0; phase < c.phases; ++phase) {
      GroundTruthModel model = setup.truth;
      model.seed = mix_seed(c.seed, 500, static_cast<std::uint64_t>(phase));
      SensorConfig sc = setup.sensor;
      sc.seed = mix_seed(c.seed, 501, static_cast<std::uint64_t>(phase));
      PmdConfig pc = setup.pmd;
      pc.seed = mix_seed(c.seed, 502, static_cast<std::uint64_t>(phase));
      const auto ex = run_virtual_experiment(plan, c.rep_duration, model, sc, pc);
      auto r = measure_energy(ex.smi, ex.log, plan, chars, correction);
      r = compare_with_reference(r, ex.truth, ex.log);
      for (std::size_t i = 0; i < r.per_trial_j.size(); ++i) {
        trials_csv += std::to_string(phase) + ',' + std::to_string(i) + ',' +
                      format_number(r.per_trial_naive_j[i]) + ',' + format_number(r.per_trial_j[i]) +
                      ',' + format_number(r.per_trial_naive_error_pct[i]) + ',' +
                      format_number(r.per_trial_error_pct[i]) + '\n';
        naive_j.push_back(r.per_trial_naive_j[i]);
        corr_j.push_back(r.per_trial_j[i]);
        naive_err.push_back(r.per_trial_naive_error_pct[i]);
        corr_err.push_back(r.per_trial_error_pct[i]);
      }
      ref_j.push_back(*r.reference_energy_j);
    }
  }

  auto stats = [](const std::vector<double>& v) {
    return json{{"mean", mean_of(v)}, {"std", v.size() > 1 ? stddev_of(v) : 0.0}};
  };
  report["trials"] = naive_j.size();
  report["naive_energy_j"] = stats(naive_j);
  report["corrected_energy_j"] = stats(corr_j);
  text += "plan: " + std::to_string(plan.repetitions) + " repetitions x " + std::to_string(plan.trials) +
          " trials, " + std::to_string(plan.shifts) + " shifts of " + fixed(plan.shift_delay * 1e3, 1) +
          " ms, discard lead " + fixed(plan.discard_lead * 1e3, 1) + " ms\n";
  text += "                 naive        corrected\n";
  text += "energy/rep (J)   " + fixed(mean_of(naive_j), 4) + std::string(7, ' ') + fixed(mean_of(corr_j), 4) + "\n";
  if (!ref_j.empty()) {
    report["reference_energy_j"] = stats(ref_j);
    report["naive_error_pct"] = stats(naive_err);
    report["corrected_error_pct"] = stats(corr_err);
    text += "error mean (%)   " + fixed(mean_of(naive_err), 2) + std::string(9, ' ') +
            fixed(mean_of(corr_err), 2) + "\n";
    text += "error std (%)    " + fixed(naive_err.size() > 1 ? stddev_of(naive_err) : 0.0, 2) +
            std::string(9, ' ') + fixed(corr_err.size() > 1 ? stddev_of(corr_err) : 0.0, 2) + "\n";
  }

  const fs::path dir = prepare_out_dir(c);
  write_file(dir / "energy_report.json", report.dump(2) + "\n");
  write_file(dir / "energy_report.txt", text);
  write_file(dir / "energy_trials.csv", trials_csv);
  out << text;
}

// ---------------------------------------------------------------- report

void cmd_report(const SessionConfig& cfg, const std::vector<std::string>& inputs, std::ostream& out) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> listed;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file()) listed.push_back(e.path());
      std::sort(listed.begin(), listed.end());
      files.insert(files.end(), listed.begin(), listed.end());
    } else if (fs::exists(p)) {
      files.push_back(p);
    } else {
      throw Error("report: no such file or directory '" + in + "'");
    }
  }
  if (inputs.empty()) throw Error("report: no inputs given");

  std::string text;
  std::vector<std::pair<std::string, PowerTrace>> traces;
  std::optional<json> energy;
  for (const auto& f : files) {
    const auto ext = f.extension().string();
    if (ext == ".json") {
      json j;
      try {
        j = json::parse(read_file(f));
      } catch (const json::exception& e) {
        throw Error("report: malformed json '" + f.string() + "': " + e.what());
      }
      if (j.contains("corrected_energy_j")) {
        energy = j;
        text += "== energy report (" + f.filename().string() + ")\n";
        text += "                 naive        corrected\n";
        text += "energy/rep (J)   " + fixed(j["naive_energy_j"]["mean"].get<double>(), 4) +
                std::string(7, ' ') + fixed(j["corrected_energy_j"]["mean"].get<double>(), 4) + "\n";
        if (j.contains("corrected_error_pct")) {
          text += "error mean (%)   " + fixed(j["naive_error_pct"]["mean"].get<double>(), 2) +
                  std::string(9, ' ') + fixed(j["corrected_error_pct"]["mean"].get<double>(), 2) + "\n";
          text += "error std (%)    " + fixed(j["naive_error_pct"]["std"].get<double>(), 2) +
                  std::string(9, ' ') + fixed(j["corrected_error_pct"]["std"].get<double>(), 2) + "\n";
        }
      } else if (j.contains("characteristics")) {
        const auto& ch = j["characteristics"];
        text += "== characterization (" + f.filename().string() + ")\n";
        text += "update period    " + fixed(ch["update_period"].get<double>() * 1e3, 1) + " ms\n";
        text += "window           " + fixed(ch["window"].get<double>() * 1e3, 1) + " ms\n";
        text += "transient        " + ch["transient_class"].get<std::string>() + "\n";
        text += "rise time        " + fixed(ch["rise_time"].get<double>() * 1e3, 1) + " ms\n";
        text += "gain / offset    " + fixed(ch["gain"].get<double>(), 4) + " / " +
                fixed(ch["offset"].get<double>(), 3) + " W\n";
      }
    } else if (ext == ".csv") {
      std::ifstream in(f);
      std::string header;
      std::getline(in, header);
      if (header.rfind(std::string(kTraceHeader), 0) != 0) continue;
      traces.emplace_back(f.stem().string(), load_trace(f));
    }
  }
  if (!energy && traces.empty() && text.empty())
    throw Error("report: nothing to report in the given inputs");

  const fs::path dir = prepare_out_dir(cfg);
  if (!traces.empty()) {
    text += "== traces\n";
    std::vector<Series> series;
    std::string data = "series,t_s,power_w\n";
    for (const auto& [name, tr] : traces) {
      text += name + ": " + std::to_string(tr.size()) + " samples, " + std::string(to_string(tr.source())) +
              ", mean " + fixed(mean_power(tr, tr.span()), 2) + " W over " + fixed(tr.span().duration(), 3) +
              " s\n";
      Series s{name, {}, {}, uses_hold(tr.source())};
      // Dense traces are thinned to keep the plot file small.
      const std::size_t stride = std::max<std::size_t>(1, tr.size() / 4000);
      for (std::size_t i = 0; i < tr.size(); i += stride) {
        s.x.push_back(tr[i].t);
        s.y.push_back(tr[i].p);
        data += name + ',' + format_number(tr[i].t) + ',' + format_number(tr[i].p) + '\n';
      }
      series.push_back(std::move(s));
    }
    write_file(dir / "overlay.svg", line_chart_svg(series, {"Power", "time (s)", "power (W)"}));
    write_file(dir / "overlay.csv", data);
  }
  if (energy && energy->contains("corrected_error_pct")) {
    const auto& e = *energy;
    std::vector<Bar> bars = {
        {"naive", e["naive_error_pct"]["mean"].get<double>(), e["naive_error_pct"]["std"].get<double>()},
        {"corrected", e["corrected_error_pct"]["mean"].get<double>(),
         e["corrected_error_pct"]["std"].get<double>()}};
    write_file(dir / "energy_errors.svg", bar_chart_svg(bars, {"Energy error vs reference", "", "error (%)"}));
  }
  write_file(dir / "summary.txt", text);
  out << text;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"smiprobe: characterise on-board GPU power sensors and correct energy measurements",
               "smiprobe"};
  app.require_subcommand(1);
  // Global flags may follow the subcommand too.
  app.fallthrough();

  std::optional<std::uint64_t> seed;
  std::string out_dir, config_path, preset;
  app.add_option("--seed", seed, "Random seed (default 1)");
  app.add_option("--out-dir", out_dir, "Directory for output files (default .)");
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--preset", preset, "Sensor preset: " + preset_names());

  auto* sim = app.add_subcommand("simulate", "Simulate a square-wave capture: truth, sensor and meter traces");
  SimulateArgs sim_args;
  sim->add_option("--duration", sim_args.duration, "Capture length in seconds (default 9)");
  sim->add_option("--load-period", sim_args.load_period, "Square-wave period in seconds (default 0.1)");
  sim->add_option("--duty", sim_args.duty, "High fraction of each period (default 0.5)");

  auto* chr = app.add_subcommand("characterize", "Recover update period, transient, window and steady-state error");
  CharacterizeArgs chr_args;
  chr->add_option("--smi", chr_args.smi_file, "Polled sensor trace (trace CSV); default is a simulation");
  chr->add_option("--reference", chr_args.reference_file, "Reference meter trace of the same session");
  chr->add_option("--load-period", chr_args.load_period, "Period of the load in --smi, enables the alias check");
  chr->add_option("--step-time", chr_args.step_time, "Time of a power step in the capture, enables the transient fit");
  chr->add_option("--repeats", chr_args.repeats, "Window protocol repeats per load fraction (default 32)");
  chr->add_option("--query-ms", chr_args.query_ms, "Sensor query interval in ms (default 5)");
  chr->add_option("--live", chr_args.live_seconds, "Capture nvidia-smi live for this many seconds");
  chr->add_option("--live-command", chr_args.live_command, "Command to run instead of nvidia-smi for --live");

  auto* msr = app.add_subcommand("measure", "Measure workload energy with the good-practice protocol");
  MeasureArgs msr_args;
  msr->add_option("--rep-duration", msr_args.rep_duration, "Duration of one workload repetition in seconds");
  msr->add_option("--phases", msr_args.phases, "Independent simulated sessions (random sensor phases)");
  msr->add_option("--chars", msr_args.chars_file, "characterization.json to correct with");
  msr->add_option("--command", msr_args.command, "Workload command to run per repetition (live mode)");
  msr->add_option("--smi-command", msr_args.smi_command, "Sampler command for live mode (default nvidia-smi)");
  msr->add_flag("--no-affine", msr_args.no_affine, "Do not undo gain/offset");

  auto* rep = app.add_subcommand("report", "Summarise reports and traces, emit plots");
  std::vector<std::string> report_inputs;
  rep->add_option("inputs", report_inputs, "Report files, trace files or directories");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << kErrorPrefix << e.what() << "\n";
    return 2;
  }

  try {
    SessionConfig cfg;
    if (!config_path.empty()) {
      json j;
      try {
        j = json::parse(read_file(config_path));
      } catch (const json::exception& e) {
        throw Error("invalid config: " + std::string(e.what()));
      }
      cfg = config_from_json(j);
    }
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!preset.empty()) {
      find_preset(preset);
      cfg.preset = preset;
      cfg.sensor.reset();
    }
    if (cfg.preset) find_preset(*cfg.preset);

    if (sim->parsed()) cmd_simulate(cfg, sim_args, out);
    else if (chr->parsed()) cmd_characterize(cfg, chr_args, out);
    else if (msr->parsed()) cmd_measure(cfg, msr_args, out);
    else cmd_report(cfg, report_inputs, out);
  } catch (const std::exception& e) {
    err << kErrorPrefix << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace smiprobe
