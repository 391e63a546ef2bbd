#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sid/error.hpp"
#include "sid/fixed_point.hpp"

namespace sid {

enum class LutFunction : std::uint8_t { Sigmoid, Tanh, Exp };

constexpr std::string_view to_string(LutFunction f) {
  switch (f) {
    case LutFunction::Sigmoid: return "sigmoid";
    case LutFunction::Tanh: return "tanh";
    case LutFunction::Exp: return "exp";
  }
  return "?";
}

inline double evaluate_exact(LutFunction f, double x) {
  switch (f) {
    case LutFunction::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case LutFunction::Tanh: return std::tanh(x);
    case LutFunction::Exp: return std::exp(x);
  }
  return 0.0;
}

/// Piecewise-linear approximation table: z = k[s] * x + b[s] on S uniform
/// segments of [lo, hi). Inputs below lo use the `below` line, inputs at or
/// above hi use the `above` line.
struct LutTable {
  LutFunction function = LutFunction::Sigmoid;
  FixedPoint32 lo;
  FixedPoint32 hi;
  std::vector<FixedPoint32> slope;
  std::vector<FixedPoint32> intercept;
  FixedPoint32 below_slope, below_intercept;
  FixedPoint32 above_slope, above_intercept;

  std::size_t segments() const { return slope.size(); }

  std::int64_t segment_width_raw() const {
    return (static_cast<std::int64_t>(hi.raw()) - lo.raw()) / static_cast<std::int64_t>(segments());
  }

  void validate() const {
    if (slope.empty() || slope.size() != intercept.size())
      fail(ErrorCode::ShapeMismatch, "lut " + std::string(to_string(function)) + ": slope/intercept size mismatch");
    const std::int64_t span = static_cast<std::int64_t>(hi.raw()) - lo.raw();
    if (span <= 0 || span % static_cast<std::int64_t>(segments()) != 0)
      fail(ErrorCode::InvalidArgument,
           "lut " + std::string(to_string(function)) + ": range must split into whole raw-unit segments");
  }

  FixedPoint32 evaluate(FixedPoint32 x, SaturationFlag* flag = nullptr) const {
    FixedPoint32 k, b;
    if (x < lo) {
      k = below_slope;
      b = below_intercept;
    } else if (x >= hi) {
      k = above_slope;
      b = above_intercept;
    } else {
      const auto s = static_cast<std::size_t>((static_cast<std::int64_t>(x.raw()) - lo.raw()) / segment_width_raw());
      k = slope[s];
      b = intercept[s];
    }
    return round_product(wide_product(k, x) + widen(b), flag);
  }

  friend bool operator==(const LutTable&, const LutTable&) = default;
};

/// Chord interpolation through the segment endpoints. Out-of-range behaviour:
/// sigmoid clamps to 0/1, tanh to -1/+1, exp is 0 below the range and
/// extends the last segment above it.
inline LutTable build_lut(LutFunction function, std::size_t segments, double lo, double hi) {
  if (segments < 2) fail(ErrorCode::InvalidArgument, "lut needs at least 2 segments");
  LutTable t;
  t.function = function;
  t.lo = quantize(lo);
  t.hi = quantize(hi);
  if (t.lo.to_real() != lo || t.hi.to_real() != hi)
    fail(ErrorCode::InvalidArgument, "lut range must be exactly representable in Q16.16");
  t.slope.resize(segments);
  t.intercept.resize(segments);
  const double h = (hi - lo) / static_cast<double>(segments);
  for (std::size_t s = 0; s < segments; ++s) {
    const double x0 = lo + h * static_cast<double>(s);
    const double x1 = x0 + h;
    const double y0 = evaluate_exact(function, x0);
    const double y1 = evaluate_exact(function, x1);
    // The intercept is fitted against the quantized slope so the line stays
    // anchored at x0 even far from the origin.
    t.slope[s] = quantize((y1 - y0) / h);
    t.intercept[s] = quantize(y0 - t.slope[s].to_real() * x0);
  }
  switch (function) {
    case LutFunction::Sigmoid:
      t.above_intercept = FixedPoint32::one();
      break;
    case LutFunction::Tanh:
      t.below_intercept = quantize(-1.0);
      t.above_intercept = FixedPoint32::one();
      break;
    case LutFunction::Exp:
      t.above_slope = t.slope.back();
      t.above_intercept = t.intercept.back();
      break;
  }
  t.validate();
  return t;
}

inline constexpr std::size_t kDefaultLutSegments = 256;

inline LutTable default_lut(LutFunction function) {
  if (function == LutFunction::Exp) return build_lut(function, kDefaultLutSegments, -16.0, 0.0);
  return build_lut(function, kDefaultLutSegments, -8.0, 8.0);
}

struct LutSet {
  LutTable sigmoid = default_lut(LutFunction::Sigmoid);
  LutTable tanh = default_lut(LutFunction::Tanh);
  LutTable exp = default_lut(LutFunction::Exp);

  const LutTable& get(LutFunction f) const {
    switch (f) {
      case LutFunction::Sigmoid: return sigmoid;
      case LutFunction::Tanh: return tanh;
      case LutFunction::Exp: return exp;
    }
    return sigmoid;
  }
  LutTable& get(LutFunction f) { return const_cast<LutTable&>(std::as_const(*this).get(f)); }

  friend bool operator==(const LutSet&, const LutSet&) = default;
};

/// Largest |lut(x) - f(x)| over every representable input in [lo, hi].
inline double max_lut_error(const LutTable& t) {
  double worst = 0.0;
  for (std::int64_t raw = t.lo.raw(); raw <= t.hi.raw(); ++raw) {
    const auto x = FixedPoint32::from_raw(static_cast<std::int32_t>(raw));
    worst = std::max(worst, std::abs(t.evaluate(x).to_real() - evaluate_exact(t.function, x.to_real())));
  }
  return worst;
}

}  // namespace sid
