#pragma once

// Double-precision reference detectors. These define the verdicts the
// compiled fixed-point programs are measured against.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sid/error.hpp"
#include "sid/types.hpp"

namespace sid {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

namespace detail {

inline void require(bool ok, std::string_view what) {
  if (!ok) fail(ErrorCode::DimensionMismatch, std::string(what));
}

inline std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
  require(m.cols == x.size(), "matrix has " + std::to_string(m.cols) + " columns, vector " + std::to_string(x.size()));
  std::vector<double> out(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) s += m(r, c) * x[c];
    out[r] = s;
  }
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

// ---- LSTM ----------------------------------------------------------------------

/// Per-gate order used throughout: candidate, forget, input, output.
enum class Gate : std::size_t { Cand = 0, Forget = 1, Input = 2, Output = 3 };
inline constexpr std::array<std::string_view, 4> kGateNames = {"c", "f", "i", "o"};

struct LstmParams {
  std::size_t hidden = 0;
  std::array<Matrix, 4> W;               // H x 6
  std::array<Matrix, 4> U;               // H x H
  std::array<std::vector<double>, 4> b;  // H
  Matrix V;                              // 6 x H output projection
  std::vector<double> v_bias;            // 6

  static LstmParams zeros(std::size_t hidden) {
    LstmParams p;
    p.hidden = hidden;
    for (std::size_t g = 0; g < 4; ++g) {
      p.W[g] = Matrix(hidden, kChannels);
      p.U[g] = Matrix(hidden, hidden);
      p.b[g].assign(hidden, 0.0);
    }
    p.V = Matrix(kChannels, hidden);
    p.v_bias.assign(kChannels, 0.0);
    return p;
  }

  void validate() const {
    if (hidden == 0) fail(ErrorCode::DimensionMismatch, "lstm hidden size is 0");
    for (std::size_t g = 0; g < 4; ++g) {
      const std::string n(kGateNames[g]);
      detail::require(W[g].rows == hidden && W[g].cols == kChannels, "lstm W_" + n + " must be H x 6");
      detail::require(U[g].rows == hidden && U[g].cols == hidden, "lstm U_" + n + " must be H x H");
      detail::require(b[g].size() == hidden, "lstm b_" + n + " must have H entries");
    }
    detail::require(V.rows == kChannels && V.cols == hidden, "lstm V must be 6 x H");
    detail::require(v_bias.size() == kChannels, "lstm output bias must have 6 entries");
  }

  friend bool operator==(const LstmParams&, const LstmParams&) = default;
};

struct LstmState {
  std::vector<double> h;
  std::vector<double> c;
};

inline LstmState lstm_step(const LstmParams& p, std::span<const double> h_prev, std::span<const double> c_prev,
                           std::span<const double> x) {
  detail::require(h_prev.size() == p.hidden && c_prev.size() == p.hidden, "lstm state size differs from H");
  detail::require(x.size() == kChannels, "lstm input must have 6 channels");
  std::array<std::vector<double>, 4> pre;
  for (std::size_t g = 0; g < 4; ++g) {
    pre[g] = detail::matvec(p.W[g], x);
    const auto uh = detail::matvec(p.U[g], h_prev);
    for (std::size_t k = 0; k < p.hidden; ++k) pre[g][k] += uh[k] + p.b[g][k];
  }
  LstmState next{std::vector<double>(p.hidden), std::vector<double>(p.hidden)};
  for (std::size_t k = 0; k < p.hidden; ++k) {
    const double cand = std::tanh(pre[0][k]);
    const double f = detail::sigmoid(pre[1][k]);
    const double i = detail::sigmoid(pre[2][k]);
    const double o = detail::sigmoid(pre[3][k]);
    next.c[k] = f * c_prev[k] + i * cand;
    next.h[k] = o * std::tanh(next.c[k]);
  }
  return next;
}

inline std::vector<double> lstm_predict(const LstmParams& p, std::span<const double> h) {
  auto y = detail::matvec(p.V, h);
  for (std::size_t k = 0; k < kChannels; ++k) y[k] += p.v_bias[k];
  return y;
}

/// Reduction of a 6-channel residual to one error scalar.
enum class ErrorNorm { L2, L2Squared };

constexpr std::string_view to_string(ErrorNorm n) { return n == ErrorNorm::L2 ? "l2" : "l2sq"; }

inline ErrorNorm error_norm_from_string(std::string_view s) {
  if (s == "l2") return ErrorNorm::L2;
  if (s == "l2sq") return ErrorNorm::L2Squared;
  fail(ErrorCode::InvalidArgument, "unknown error norm '" + std::string(s) + "'");
}

/// W-1 next-reading prediction errors, starting from a zero state.
inline std::vector<double> prediction_errors(const LstmParams& p, std::span<const SensorReading> window,
                                             ErrorNorm norm = ErrorNorm::L2) {
  p.validate();
  detail::require(window.size() >= 2, "prediction errors need a window of at least 2 readings");
  std::vector<double> h(p.hidden, 0.0), c(p.hidden, 0.0);
  std::vector<double> errors;
  errors.reserve(window.size() - 1);
  for (std::size_t t = 0; t + 1 < window.size(); ++t) {
    auto s = lstm_step(p, h, c, window[t]);
    h = std::move(s.h);
    c = std::move(s.c);
    const auto y = lstm_predict(p, h);
    double sq = 0.0;
    for (std::size_t k = 0; k < kChannels; ++k) {
      const double d = y[k] - window[t + 1][k];
      sq += d * d;
    }
    errors.push_back(norm == ErrorNorm::L2 ? std::sqrt(sq) : sq);
  }
  return errors;
}

// ---- KS test -------------------------------------------------------------------

inline constexpr std::array<double, 4> kSupportedAlphas = {0.15, 0.10, 0.05, 0.025};

inline double c_alpha(double alpha) {
  const bool known = std::any_of(kSupportedAlphas.begin(), kSupportedAlphas.end(),
                                 [&](double a) { return std::abs(a - alpha) < 1e-12; });
  if (!known) fail(ErrorCode::UnsupportedAlpha, "alpha " + std::to_string(alpha) + " is not one of 0.15, 0.10, 0.05, 0.025");
  return std::sqrt(-std::log(alpha / 2.0) / 2.0);
}

/// Two-sample KS statistic: sup |F_a - F_b| over the merged sample.
inline double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) fail(ErrorCode::EmptySample, "ks statistic needs two nonempty samples");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double n = static_cast<double>(sa.size()), m = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < sa.size() || j < sb.size()) {
    double v;
    if (j == sb.size() || (i < sa.size() && sa[i] <= sb[j])) {
      v = sa[i];
    } else {
      v = sb[j];
    }
    while (i < sa.size() && sa[i] <= v) ++i;
    while (j < sb.size() && sb[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  return d;
}

inline bool ks_reject(double d, std::size_t n, std::size_t m, double alpha) {
  if (n == 0 || m == 0) fail(ErrorCode::EmptySample, "ks test needs nonzero sample sizes");
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  return d > c_alpha(alpha) * std::sqrt((nn + mm) / (nn * mm));
}

/// Threshold on n*D equivalent to the rejection rule at level alpha.
inline double scaled_threshold(std::size_t n, std::size_t m, double alpha) {
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  return c_alpha(alpha) * std::sqrt((nn + mm) * nn / mm);
}

/// One reference prediction-error distribution as the hardware consumes it.
/// cumulative[j] counts reference samples <= boundaries[j].
struct PedReference {
  std::vector<double> boundaries;  // strictly ascending
  std::vector<double> cumulative;  // nondecreasing, last == m
  std::size_t n = 0;               // test sample size the threshold assumes
  std::size_t m = 0;               // reference sample size
  double threshold = 0.0;          // compared against n*D

  void validate() const {
    if (boundaries.empty() || boundaries.size() != cumulative.size())
      fail(ErrorCode::DimensionMismatch, "ped reference boundary/cumulative size mismatch");
    for (std::size_t j = 1; j < boundaries.size(); ++j) {
      if (!(boundaries[j] > boundaries[j - 1])) fail(ErrorCode::InvalidArgument, "ped boundaries not strictly ascending");
      if (cumulative[j] < cumulative[j - 1]) fail(ErrorCode::InvalidArgument, "ped cumulative histogram decreases");
    }
    if (cumulative.back() != static_cast<double>(m))
      fail(ErrorCode::InvalidArgument, "ped cumulative histogram must end at m");
    if (n == 0 || !(threshold > 0)) fail(ErrorCode::InvalidArgument, "ped reference needs n > 0 and threshold > 0");
  }

  friend bool operator==(const PedReference&, const PedReference&) = default;
};

/// Boundaries are the distinct sorted sample values.
inline PedReference make_ped_reference(std::span<const double> sample, std::size_t n, double alpha) {
  if (sample.empty()) fail(ErrorCode::EmptySample, "reference sample is empty");
  std::vector<double> s(sample.begin(), sample.end());
  std::sort(s.begin(), s.end());
  PedReference r;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (k + 1 < s.size() && s[k + 1] == s[k]) continue;
    r.boundaries.push_back(s[k]);
    r.cumulative.push_back(static_cast<double>(k + 1));
  }
  r.n = n;
  r.m = s.size();
  r.threshold = scaled_threshold(n, r.m, alpha);
  return r;
}

struct KsResult {
  double statistic = 0.0;  // n * D restricted to the boundaries
  bool reject = false;
};

/// The hardware's bin-restricted KS: count test errors <= each boundary,
/// subtract from the reference histogram, take max |.| and compare with T.
inline KsResult hardware_ks(std::span<const double> test_errors, const PedReference& ref) {
  detail::require(test_errors.size() == ref.n, "hardware ks expects " + std::to_string(ref.n) + " test errors, got " +
                                                   std::to_string(test_errors.size()));
  detail::require(ref.boundaries.size() == ref.cumulative.size(), "ped reference boundary/cumulative size mismatch");
  double stat = 0.0;
  for (std::size_t j = 0; j < ref.boundaries.size(); ++j) {
    double count = 0.0;
    for (double e : test_errors) count += ref.boundaries[j] >= e ? 1.0 : 0.0;
    stat = std::max(stat, std::abs(ref.cumulative[j] - count));
  }
  return {stat, stat > ref.threshold};
}

struct VoteResult {
  std::size_t rejections = 0;
  std::size_t references = 0;
  bool impostor = false;
};

/// Impostor iff strictly more than half of the reference KS tests reject.
inline VoteResult ped_vote(std::span<const double> test_errors, std::span<const PedReference> refs) {
  if (refs.empty()) fail(ErrorCode::EmptySample, "ped vote needs at least one reference");
  VoteResult v;
  v.references = refs.size();
  for (const auto& r : refs) v.rejections += hardware_ks(test_errors, r).reject ? 1 : 0;
  v.impostor = 2 * v.rejections > v.references;
  return v;
}

/// Impostor iff the mean error exceeds the threshold.
inline bool lstm_threshold_detect(std::span<const double> test_errors, double threshold) {
  if (test_errors.empty()) fail(ErrorCode::EmptySample, "no test errors");
  double s = 0.0;
  for (double e : test_errors) s += e;
  return s / static_cast<double>(test_errors.size()) > threshold;
}

// ---- MLP and SVM ---------------------------------------------------------------

enum class Activation { Sigmoid, Tanh };

constexpr std::string_view to_string(Activation a) { return a == Activation::Sigmoid ? "sigmoid" : "tanh"; }

inline Activation activation_from_string(std::string_view s) {
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "tanh") return Activation::Tanh;
  fail(ErrorCode::InvalidArgument, "unknown activation '" + std::string(s) + "'");
}

struct DenseLayer {
  Matrix weight;  // out x in
  std::vector<double> bias;
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Hidden layers use `activation`; the last layer is linear with 2 outputs,
/// score[1] being the impostor class.
struct MlpParams {
  std::vector<DenseLayer> layers;
  Activation activation = Activation::Sigmoid;

  std::size_t input_size() const { return layers.empty() ? 0 : layers.front().weight.cols; }

  void validate() const {
    detail::require(!layers.empty(), "mlp has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      detail::require(layers[l].bias.size() == layers[l].weight.rows, "mlp layer " + std::to_string(l) + " bias size");
      if (l > 0)
        detail::require(layers[l].weight.cols == layers[l - 1].weight.rows,
                        "mlp layer " + std::to_string(l) + " input differs from previous output");
    }
    detail::require(layers.back().weight.rows == 2, "mlp output layer must have 2 units");
  }

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Time-major flattening: element t*6 + channel.
inline std::vector<double> flatten(std::span<const SensorReading> window) {
  std::vector<double> v;
  v.reserve(window.size() * kChannels);
  for (const auto& r : window) v.insert(v.end(), r.begin(), r.end());
  return v;
}

inline std::vector<double> mlp_forward(const MlpParams& p, std::span<const double> input) {
  p.validate();
  detail::require(input.size() == p.input_size(), "mlp input has " + std::to_string(input.size()) + " values, expects " +
                                                       std::to_string(p.input_size()));
  std::vector<double> a(input.begin(), input.end());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto z = detail::matvec(p.layers[l].weight, a);
    for (std::size_t k = 0; k < z.size(); ++k) {
      z[k] += p.layers[l].bias[k];
      if (l + 1 < p.layers.size()) z[k] = p.activation == Activation::Sigmoid ? detail::sigmoid(z[k]) : std::tanh(z[k]);
    }
    a = std::move(z);
  }
  return a;
}

inline bool mlp_impostor(std::span<const double> scores) { return scores[1] > scores[0]; }

enum class SvmVariant { TwoClass, OneClass };

/// Decision function sum_i coef_i * exp(-gamma * |x - sv_i|^2) + bias, with
/// positive meaning impostor. A one-class model stores its duals negated and
/// rho as the bias so the same function and sign convention apply.
struct SvmParams {
  Matrix support_vectors;  // count x dim
  std::vector<double> coef;
  double bias = 0.0;
  double gamma = 0.0;
  SvmVariant variant = SvmVariant::TwoClass;

  void validate() const {
    detail::require(support_vectors.rows >= 1, "svm has no support vectors");
    detail::require(coef.size() == support_vectors.rows, "svm coefficient count differs from support-vector count");
  }

  friend bool operator==(const SvmParams&, const SvmParams&) = default;
};

inline double svm_decision(const SvmParams& p, std::span<const double> x) {
  p.validate();
  detail::require(x.size() == p.support_vectors.cols, "svm input has " + std::to_string(x.size()) + " values, expects " +
                                                           std::to_string(p.support_vectors.cols));
  double s = p.bias;
  for (std::size_t i = 0; i < p.support_vectors.rows; ++i) {
    double d2 = 0.0;
    const auto sv = p.support_vectors.row(i);
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double d = x[k] - sv[k];
      d2 += d * d;
    }
    s += p.coef[i] * std::exp(-p.gamma * d2);
  }
  return s;
}

inline double ocsvm_decision(const SvmParams& p, std::span<const double> x) {
  if (p.variant != SvmVariant::OneClass) fail(ErrorCode::InvalidArgument, "ocsvm decision on a two-class model");
  return svm_decision(p, x);
}

// ---- metrics -------------------------------------------------------------------

struct MetricCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  MetricCounts& operator+=(const MetricCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  std::size_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const MetricCounts&, const MetricCounts&) = default;
};

/// Positive = impostor. A field is empty when its denominator is zero.
struct Metrics {
  std::optional<double> tnr, tpr, accuracy, precision, f1;
};

inline Metrics compute_metrics(const MetricCounts& c) {
  auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  Metrics m;
  m.tnr = ratio(c.tn, c.tn + c.fp);
  m.tpr = ratio(c.tp, c.tp + c.fn);
  m.accuracy = ratio(c.tn + c.tp, c.total());
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  return m;
}

}  // namespace sid
