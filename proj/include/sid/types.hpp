#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace sid {

inline constexpr std::size_t kChannels = 6;
inline constexpr double kSampleRateHz = 50.0;

/// One motion-sensor reading: 3-axis linear acceleration then 3-axis angular velocity.
using SensorReading = std::array<double, kChannels>;

/// Time-contiguous readings, oldest first.
using Window = std::vector<SensorReading>;

}  // namespace sid
