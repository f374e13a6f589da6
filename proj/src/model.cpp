#include "smiprobe/model.hpp"

#include <cmath>
#include <iterator>
#include <string>

#include "smiprobe/error.hpp"

namespace smiprobe {

namespace {
constexpr std::string_view kClassNames[] = {"INSTANT", "SLOW_SOURCE",
                                            "LINEAR_RUNNING_AVG", "LOG_GROWTH"};
}

void LoadProfile::validate() const {
  if (!(period > 0.0)) throw Error("invalid load: period must be > 0");
  if (!(duty > 0.0 && duty <= 1.0)) throw Error("invalid load: duty must be in (0, 1]");
  if (!(p_low >= 0.0 && p_high >= p_low))
    throw Error("invalid load: need p_high >= p_low >= 0");
  if (cycles < 1) throw Error("invalid load: cycles must be >= 1");
  if (!std::isfinite(t_start)) throw Error("invalid load: t_start not finite");
}

std::string_view to_string(TransientClass c) {
  return kClassNames[static_cast<int>(c)];
}

TransientClass transient_class_from_string(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kClassNames); ++i)
    if (kClassNames[i] == name) return static_cast<TransientClass>(i);
  throw Error("unknown transient class '" + std::string(name) + "'");
}

void SensorCharacteristics::validate() const {
  if (!(update_period > 0.0)) throw Error("invalid sensor: update_period must be > 0");
  if (!(window > 0.0)) throw Error("invalid sensor: window must be > 0");
  if (!(gain > 0.0)) throw Error("invalid sensor: gain must be > 0");
  if (!std::isfinite(offset)) throw Error("invalid sensor: offset not finite");
  if (!(rise_time >= 0.0)) throw Error("invalid sensor: rise_time must be >= 0");
  if (!(log_tau > 0.0)) throw Error("invalid sensor: log_tau must be > 0");
  if (!(phase >= 0.0 && phase < update_period))
    throw Error("invalid sensor: phase must be in [0, update_period)");
}

}  // namespace smiprobe
