#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>

namespace sid {

/// Wide accumulator wide enough to hold any sum of Q32.32 products the
/// datapath can produce.
using WideAccumulator = __int128;

/// Sticky saturation indicator. Arithmetic never wraps; it clamps and sets this.
struct SaturationFlag {
  bool raised = false;
  void raise() noexcept { raised = true; }
};

/// Q16.16 signed fixed point: value = raw / 2^16.
class FixedPoint32 {
 public:
  static constexpr int kFractionBits = 16;
  static constexpr std::int32_t kOneRaw = std::int32_t{1} << kFractionBits;
  static constexpr std::int32_t kMaxRaw = std::numeric_limits<std::int32_t>::max();
  static constexpr std::int32_t kMinRaw = std::numeric_limits<std::int32_t>::min();
  static constexpr double kScale = 65536.0;

  constexpr FixedPoint32() = default;

  static constexpr FixedPoint32 from_raw(std::int32_t raw) noexcept {
    FixedPoint32 f;
    f.raw_ = raw;
    return f;
  }
  static constexpr FixedPoint32 zero() noexcept { return from_raw(0); }
  static constexpr FixedPoint32 one() noexcept { return from_raw(kOneRaw); }
  static constexpr FixedPoint32 max() noexcept { return from_raw(kMaxRaw); }
  static constexpr FixedPoint32 min() noexcept { return from_raw(kMinRaw); }

  /// Round-to-nearest-even quantization; out-of-range values (and NaN) saturate.
  static FixedPoint32 from_real(double v, SaturationFlag* flag = nullptr) noexcept {
    if (std::isnan(v)) {
      if (flag) flag->raise();
      return zero();
    }
    const double rounded = std::nearbyint(v * kScale);
    if (rounded > static_cast<double>(kMaxRaw)) {
      if (flag) flag->raise();
      return max();
    }
    if (rounded < static_cast<double>(kMinRaw)) {
      if (flag) flag->raise();
      return min();
    }
    return from_raw(static_cast<std::int32_t>(rounded));
  }

  constexpr std::int32_t raw() const noexcept { return raw_; }
  constexpr double to_real() const noexcept { return static_cast<double>(raw_) / kScale; }

  friend constexpr bool operator==(FixedPoint32, FixedPoint32) = default;
  friend constexpr auto operator<=>(FixedPoint32, FixedPoint32) = default;

 private:
  std::int32_t raw_ = 0;
};

inline FixedPoint32 quantize(double v, SaturationFlag* flag = nullptr) noexcept {
  return FixedPoint32::from_real(v, flag);
}
constexpr double dequantize(FixedPoint32 f) noexcept { return f.to_real(); }

/// Clamp a wide integer to the raw range.
constexpr FixedPoint32 saturate(WideAccumulator raw, SaturationFlag* flag = nullptr) noexcept {
  if (raw > FixedPoint32::kMaxRaw) {
    if (flag) flag->raise();
    return FixedPoint32::max();
  }
  if (raw < FixedPoint32::kMinRaw) {
    if (flag) flag->raise();
    return FixedPoint32::min();
  }
  return FixedPoint32::from_raw(static_cast<std::int32_t>(raw));
}

/// Convert a Q32.32 accumulator to Q16.16, rounding to nearest with ties to even.
constexpr FixedPoint32 round_product(WideAccumulator q32, SaturationFlag* flag = nullptr) noexcept {
  constexpr WideAccumulator half = WideAccumulator{1} << (FixedPoint32::kFractionBits - 1);
  WideAccumulator q = q32 >> FixedPoint32::kFractionBits;  // arithmetic shift floors
  const WideAccumulator rem = q32 - (q << FixedPoint32::kFractionBits);
  if (rem > half || (rem == half && (q & 1) != 0)) ++q;
  return saturate(q, flag);
}

constexpr WideAccumulator wide_product(FixedPoint32 a, FixedPoint32 b) noexcept {
  return static_cast<WideAccumulator>(static_cast<std::int64_t>(a.raw()) * b.raw());
}

/// Lift a Q16.16 value into Q32.32 so it can be summed with products.
constexpr WideAccumulator widen(FixedPoint32 a) noexcept {
  return static_cast<WideAccumulator>(a.raw()) << FixedPoint32::kFractionBits;
}

constexpr FixedPoint32 add(FixedPoint32 a, FixedPoint32 b, SaturationFlag* flag = nullptr) noexcept {
  return saturate(static_cast<WideAccumulator>(a.raw()) + b.raw(), flag);
}

constexpr FixedPoint32 sub(FixedPoint32 a, FixedPoint32 b, SaturationFlag* flag = nullptr) noexcept {
  return saturate(static_cast<WideAccumulator>(a.raw()) - b.raw(), flag);
}

constexpr FixedPoint32 mul(FixedPoint32 a, FixedPoint32 b, SaturationFlag* flag = nullptr) noexcept {
  return round_product(wide_product(a, b), flag);
}

constexpr FixedPoint32 abs(FixedPoint32 a, SaturationFlag* flag = nullptr) noexcept {
  return a.raw() < 0 ? saturate(-static_cast<WideAccumulator>(a.raw()), flag) : a;
}

}  // namespace sid
