#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "sid/detection.hpp"

namespace sid {
namespace {

LstmParams random_lstm(std::size_t hidden, std::mt19937_64& rng, double scale = 0.5) {
  std::normal_distribution<double> d(0.0, scale);
  auto p = LstmParams::zeros(hidden);
  for (std::size_t g = 0; g < 4; ++g) {
    for (double& v : p.W[g].data) v = d(rng);
    for (double& v : p.U[g].data) v = d(rng);
    for (double& v : p.b[g]) v = d(rng);
  }
  for (double& v : p.V.data) v = d(rng);
  for (double& v : p.v_bias) v = d(rng);
  return p;
}

Window random_window(std::size_t w, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Window win(w);
  for (auto& r : win)
    for (double& v : r) v = d(rng);
  return win;
}

// Scalar LSTM oracle: one hidden unit at a time, gate pre-activations summed term by term.
void oracle_lstm_step(const LstmParams& p, const std::vector<double>& h, const std::vector<double>& c, const SensorReading& x,
                      std::vector<double>& h_out, std::vector<double>& c_out) {
  const std::size_t H = p.hidden;
  h_out.assign(H, 0.0);
  c_out.assign(H, 0.0);
  for (std::size_t k = 0; k < H; ++k) {
    double pre[4];
    for (std::size_t g = 0; g < 4; ++g) {
      double s = p.b[g][k];
      for (std::size_t j = 0; j < 6; ++j) s += p.W[g].data[k * 6 + j] * x[j];
      for (std::size_t j = 0; j < H; ++j) s += p.U[g].data[k * H + j] * h[j];
      pre[g] = s;
    }
    const double cand = std::tanh(pre[0]);
    const double f = 1.0 / (1.0 + std::exp(-pre[1]));
    const double i = 1.0 / (1.0 + std::exp(-pre[2]));
    const double o = 1.0 / (1.0 + std::exp(-pre[3]));
    c_out[k] = f * c[k] + i * cand;
    h_out[k] = o * std::tanh(c_out[k]);
  }
}

// Brute force over every value of the merged sample.
double oracle_ks(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pts(a);
  pts.insert(pts.end(), b.begin(), b.end());
  double d = 0.0;
  for (double v : pts) {
    std::size_t ca = 0, cb = 0;
    for (double x : a) ca += x <= v;
    for (double x : b) cb += x <= v;
    d = std::max(d, std::abs(static_cast<double>(ca) / static_cast<double>(a.size()) -
                             static_cast<double>(cb) / static_cast<double>(b.size())));
  }
  return d;
}

// Restricted-sup oracle: evaluation points limited to the distinct reference values.
double oracle_restricted(const std::vector<double>& test, const std::vector<double>& ref) {
  double d = 0.0;
  for (double v : ref) {
    std::size_t ct = 0, cr = 0;
    for (double x : test) ct += x <= v;
    for (double x : ref) cr += x <= v;
    d = std::max(d, std::abs(static_cast<double>(cr) - static_cast<double>(ct)));
  }
  return d;
}

// ---- LSTM ----------------------------------------------------------------------

TEST(Lstm, ZeroModelStaysAtZero) {
  const auto p = LstmParams::zeros(5);
  const std::vector<double> z(5, 0.0);
  const auto s = lstm_step(p, z, z, SensorReading{});
  for (double v : s.h) EXPECT_EQ(v, 0.0);
  for (double v : s.c) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, SaturatedGatesKeepTheCellState) {
  auto p = LstmParams::zeros(3);
  p.b[1].assign(3, 40.0);   // forget gate -> 1
  p.b[2].assign(3, -40.0);  // input gate -> 0
  const std::vector<double> h(3, 0.0), c = {0.3, -0.7, 1.5};
  const auto s = lstm_step(p, h, c, SensorReading{1, 2, 3, 4, 5, 6});
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(s.c[k], c[k], 1e-12);
}

TEST(Lstm, MatchesScalarOracle) {
  std::mt19937_64 rng(42);
  const auto p = random_lstm(4, rng);
  std::vector<double> h(4, 0.0), c(4, 0.0), ho, co;
  const auto win = random_window(20, rng);
  for (const auto& x : win) {
    const auto s = lstm_step(p, h, c, x);
    oracle_lstm_step(p, h, c, x, ho, co);
    for (std::size_t k = 0; k < 4; ++k) {
      ASSERT_NEAR(s.h[k], ho[k], 1e-12);
      ASSERT_NEAR(s.c[k], co[k], 1e-12);
      ASSERT_LT(std::abs(s.h[k]), 1.0);
    }
    h = s.h;
    c = s.c;
  }
}

TEST(Lstm, RejectsMismatchedShapes) {
  auto p = LstmParams::zeros(4);
  p.U[2] = Matrix(4, 3);
  EXPECT_THROW(p.validate(), Error);
  const auto q = LstmParams::zeros(4);
  const std::vector<double> bad(3, 0.0), ok(4, 0.0);
  try {
    lstm_step(q, bad, ok, SensorReading{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(PredictionErrors, ShapeAndOracle) {
  std::mt19937_64 rng(7);
  const auto p = random_lstm(6, rng);
  const auto win = random_window(64, rng);
  const auto errs = prediction_errors(p, win);
  ASSERT_EQ(errs.size(), 63u);
  const auto sq = prediction_errors(p, win, ErrorNorm::L2Squared);

  std::vector<double> h(6, 0.0), c(6, 0.0), ho, co;
  for (std::size_t t = 0; t + 1 < win.size(); ++t) {
    oracle_lstm_step(p, h, c, win[t], ho, co);
    h = ho;
    c = co;
    double s2 = 0.0;
    for (std::size_t k = 0; k < 6; ++k) {
      double y = p.v_bias[k];
      for (std::size_t j = 0; j < 6; ++j) y += p.V.data[k * 6 + j] * h[j];
      s2 += (y - win[t + 1][k]) * (y - win[t + 1][k]);
    }
    ASSERT_NEAR(errs[t], std::sqrt(s2), 1e-12);
    ASSERT_NEAR(sq[t], s2, 1e-12);
  }
  EXPECT_EQ(prediction_errors(p, std::span(win).first(2)).size(), 1u);
  EXPECT_THROW(prediction_errors(p, std::span(win).first(1)), Error);
}

TEST(PredictionErrors, ConstantModelOnConstantWindow) {
  auto p = LstmParams::zeros(2);
  const SensorReading level{0.1, -0.2, 0.3, 0.0, 0.5, -1.0};
  p.v_bias.assign(level.begin(), level.end());
  const Window win(16, level);
  for (double e : prediction_errors(p, win)) EXPECT_NEAR(e, 0.0, 1e-15);
}

// ---- KS ------------------------------------------------------------------------

TEST(Ks, KnownValues) {
  const std::vector<double> a = {1, 2, 3, 4, 5};
  EXPECT_EQ(ks_statistic(a, a), 0.0);
  EXPECT_EQ(ks_statistic(a, std::vector<double>{6, 7, 8, 9, 10}), 1.0);
  EXPECT_NEAR(ks_statistic(a, std::vector<double>{1, 2, 3, 4, 10}), 0.2, 1e-15);
  EXPECT_THROW(ks_statistic(a, std::vector<double>{}), Error);
}

TEST(Ks, MatchesBruteForceOracleExactly) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng() % 50, m = 1 + rng() % 50;
    std::vector<double> a(n), b(m);
    // Small integer support forces ties inside and across samples.
    const bool ties = trial % 2 == 0;
    std::normal_distribution<double> d(0.0, 1.0);
    for (double& v : a) v = ties ? static_cast<double>(rng() % 12) : d(rng);
    for (double& v : b) v = ties ? static_cast<double>(rng() % 12) : d(rng) + 0.3;
    const double ks = ks_statistic(a, b);
    ASSERT_EQ(ks, oracle_ks(a, b)) << trial;
    ASSERT_EQ(ks, ks_statistic(b, a));
    ASSERT_GE(ks, 0.0);
    ASSERT_LE(ks, 1.0);
    std::vector<double> ea(a), eb(b);
    for (double& v : ea) v = std::exp(v / 4);
    for (double& v : eb) v = std::exp(v / 4);
    ASSERT_EQ(ks, ks_statistic(ea, eb)) << "monotone invariance, trial " << trial;
  }
}

TEST(Ks, CriticalValues) {
  EXPECT_NEAR(c_alpha(0.05), 1.358, 0.001);
  EXPECT_DOUBLE_EQ(c_alpha(0.05), std::sqrt(-std::log(0.025) / 2));
  EXPECT_NEAR(c_alpha(0.10), 1.224, 0.001);
  EXPECT_NEAR(c_alpha(0.025), 1.480, 0.001);
  EXPECT_NEAR(c_alpha(0.15), 1.138, 0.001);
  try {
    c_alpha(0.2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnsupportedAlpha);
  }
}

TEST(Ks, RejectionRule) {
  EXPECT_FALSE(ks_reject(0.0, 5, 5, 0.05));
  EXPECT_TRUE(ks_reject(1.0, 5, 5, 0.05));
  EXPECT_FALSE(ks_reject(0.8, 5, 5, 0.05));  // threshold 1.358*sqrt(0.4) = 0.859
  EXPECT_NEAR(scaled_threshold(5, 5, 0.05), 5 * c_alpha(0.05) * std::sqrt(10.0 / 25.0), 1e-12);
}

TEST(PedReferenceTest, BuildsSortedDistinctBoundaries) {
  const std::vector<double> s = {0.4, 0.1, 0.3, 0.1, 0.2};
  const auto r = make_ped_reference(s, 5, 0.05);
  EXPECT_EQ(r.boundaries, (std::vector<double>{0.1, 0.2, 0.3, 0.4}));
  EXPECT_EQ(r.cumulative, (std::vector<double>{2, 3, 4, 5}));
  EXPECT_EQ(r.m, 5u);
  EXPECT_NO_THROW(r.validate());
  auto bad = r;
  bad.cumulative.back() = 4;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(HardwareKs, FiveStepExample) {
  const std::vector<double> ref = {0.1, 0.2, 0.3, 0.4, 0.5};
  const auto r = make_ped_reference(ref, 5, 0.05);
  const auto same = hardware_ks(ref, r);
  EXPECT_EQ(same.statistic, 0.0);
  EXPECT_FALSE(same.reject);
  const auto shifted = hardware_ks(std::vector<double>{0.15, 0.25, 0.35, 0.45, 0.55}, r);
  EXPECT_EQ(shifted.statistic, 1.0);
  EXPECT_FALSE(shifted.reject);
  const auto above = hardware_ks(std::vector<double>{1, 2, 3, 4, 5}, r);
  EXPECT_EQ(above.statistic, 5.0);
  EXPECT_TRUE(above.reject);
  EXPECT_THROW(hardware_ks(std::vector<double>{1, 2}, r), Error);
}

TEST(HardwareKs, MatchesRestrictedSupOracle) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> ref(64), test(64);
    const bool ties = trial % 3 == 0;
    for (double& v : ref) v = ties ? static_cast<double>(rng() % 20) : std::abs(d(rng));
    for (double& v : test) v = ties ? static_cast<double>(rng() % 24) : std::abs(d(rng) * 1.2);
    const auto r = make_ped_reference(ref, 64, 0.05);
    const auto hw = hardware_ks(test, r);
    ASSERT_EQ(hw.statistic, oracle_restricted(test, ref)) << trial;
    ASSERT_LE(hw.statistic / 64.0, ks_statistic(test, ref) + 1e-15);
    if (ties) {
      // Every test value shared with the reference support gives equality.
      std::vector<double> t2;
      for (std::size_t k = 0; k < 64; ++k) t2.push_back(r.boundaries[rng() % r.boundaries.size()]);
      ASSERT_DOUBLE_EQ(hardware_ks(t2, r).statistic / 64.0, ks_statistic(t2, ref));
    }
  }
}

TEST(PedVote, MajorityRule) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d(1.0, 0.2);
  std::vector<std::vector<double>> samples(20, std::vector<double>(63));
  std::vector<PedReference> refs;
  for (auto& s : samples) {
    for (double& v : s) v = std::abs(d(rng));
    refs.push_back(make_ped_reference(s, 63, 0.05));
  }
  EXPECT_FALSE(ped_vote(samples[0], refs).impostor);
  const std::vector<double> far(63, 100.0);
  const auto v = ped_vote(far, refs);
  EXPECT_TRUE(v.impostor);
  EXPECT_EQ(v.rejections, 20u);

  // Half the references see the test sample as their own, the other half as far away.
  std::vector<PedReference> half;
  for (int k = 0; k < 10; ++k) half.push_back(make_ped_reference(samples[0], 63, 0.05));
  for (int k = 0; k < 10; ++k) half.push_back(make_ped_reference(std::vector<double>(63, 0.001 * (k + 1)), 63, 0.05));
  const auto h = ped_vote(samples[0], half);
  EXPECT_EQ(h.rejections, 10u);
  EXPECT_FALSE(h.impostor);
  half.push_back(half.back());
  EXPECT_TRUE(ped_vote(samples[0], half).impostor);

  auto shuffled = refs;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  for (const auto& s : samples) EXPECT_EQ(ped_vote(s, refs).rejections, ped_vote(s, shuffled).rejections);
}

TEST(LstmThreshold, StrictMeanComparison) {
  EXPECT_FALSE(lstm_threshold_detect(std::vector<double>(5, 0.0), 0.1));
  EXPECT_FALSE(lstm_threshold_detect(std::vector<double>{0.25, 0.75}, 0.5));
  EXPECT_TRUE(lstm_threshold_detect(std::vector<double>{0.2, 0.2}, 0.1));
  EXPECT_THROW(lstm_threshold_detect(std::vector<double>{}, 0.1), Error);
}

// ---- MLP / SVM -----------------------------------------------------------------

TEST(Mlp, ZeroWeightsGiveOutputBias) {
  MlpParams p;
  p.layers = {{Matrix(3, 12), {0.1, 0.2, 0.3}}, {Matrix(2, 3), {0.7, -0.4}}};
  const auto s = mlp_forward(p, std::vector<double>(12, 1.0));
  EXPECT_EQ(s, (std::vector<double>{0.7, -0.4}));
  EXPECT_FALSE(mlp_impostor(s));
  EXPECT_THROW(mlp_forward(p, std::vector<double>(11, 1.0)), Error);
}

TEST(Mlp, MatchesScalarOracle) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0.0, 0.3);
  for (auto act : {Activation::Sigmoid, Activation::Tanh}) {
    MlpParams p;
    p.activation = act;
    const std::size_t sizes[] = {24, 10, 5, 2};
    for (int l = 0; l < 3; ++l) {
      DenseLayer layer{Matrix(sizes[l + 1], sizes[l]), std::vector<double>(sizes[l + 1])};
      for (double& v : layer.weight.data) v = d(rng);
      for (double& v : layer.bias) v = d(rng);
      p.layers.push_back(layer);
    }
    std::vector<double> x(24);
    for (double& v : x) v = d(rng) * 3;
    std::vector<double> a = x;
    for (int l = 0; l < 3; ++l) {
      std::vector<double> z(sizes[l + 1]);
      for (std::size_t r = 0; r < sizes[l + 1]; ++r) {
        double s = p.layers[l].bias[r];
        for (std::size_t c = 0; c < sizes[l]; ++c) s += p.layers[l].weight.data[r * sizes[l] + c] * a[c];
        z[r] = l == 2 ? s : (act == Activation::Sigmoid ? 1 / (1 + std::exp(-s)) : std::tanh(s));
      }
      a = z;
    }
    const auto s = mlp_forward(p, x);
    EXPECT_NEAR(s[0], a[0], 1e-12);
    EXPECT_NEAR(s[1], a[1], 1e-12);
  }
}

TEST(Svm, KernelIdentity) {
  SvmParams p;
  p.support_vectors = Matrix(1, 6);
  p.support_vectors.data = {1, 2, 3, 4, 5, 6};
  p.coef = {1.0};
  p.gamma = 3.7;
  EXPECT_EQ(svm_decision(p, p.support_vectors.data), 1.0);
  EXPECT_THROW(ocsvm_decision(p, p.support_vectors.data), Error);
  p.variant = SvmVariant::OneClass;
  EXPECT_EQ(ocsvm_decision(p, p.support_vectors.data), 1.0);
  p.coef.push_back(2.0);
  EXPECT_THROW(svm_decision(p, p.support_vectors.data), Error);
}

TEST(Svm, MatchesKernelSumOracle) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d(0.0, 1.0);
  SvmParams p;
  p.support_vectors = Matrix(30, 12);
  for (double& v : p.support_vectors.data) v = d(rng);
  p.coef.resize(30);
  for (double& v : p.coef) v = d(rng);
  p.bias = -0.3;
  p.gamma = 0.05;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(12);
    for (double& v : x) v = d(rng);
    double s = p.bias;
    for (std::size_t i = 0; i < 30; ++i) {
      double d2 = 0;
      for (std::size_t k = 0; k < 12; ++k) d2 += std::pow(x[k] - p.support_vectors.data[i * 12 + k], 2);
      s += p.coef[i] * std::exp(-p.gamma * d2);
    }
    ASSERT_NEAR(svm_decision(p, x), s, 1e-12);
  }
}

// ---- metrics -------------------------------------------------------------------

TEST(Metrics, PerfectClassifier) {
  const auto m = compute_metrics({50, 50, 0, 0});
  EXPECT_EQ(*m.tnr, 1.0);
  EXPECT_EQ(*m.tpr, 1.0);
  EXPECT_EQ(*m.accuracy, 1.0);
  EXPECT_EQ(*m.precision, 1.0);
  EXPECT_EQ(*m.f1, 1.0);
}

TEST(Metrics, TableScaleExample) {
  const auto m = compute_metrics({.tp = 9757, .tn = 9926, .fp = 74, .fn = 243});
  // Published figures carry two decimals; accuracy is exactly 98.415 here.
  const double half_unit = 5e-3 + 1e-9;
  EXPECT_NEAR(*m.tnr * 100, 99.26, half_unit);
  EXPECT_NEAR(*m.tpr * 100, 97.57, half_unit);
  EXPECT_NEAR(*m.accuracy * 100, 98.42, half_unit);
}

TEST(Metrics, DegenerateCounts) {
  const auto m = compute_metrics({.tp = 0, .tn = 3, .fp = 0, .fn = 4});
  EXPECT_EQ(*m.tpr, 0.0);
  EXPECT_EQ(*m.f1, 0.0);
  EXPECT_FALSE(m.precision.has_value());
  EXPECT_FALSE(compute_metrics({}).accuracy.has_value());
}

TEST(Metrics, IdentitiesOnRandomCounts) {
  std::mt19937_64 rng(8);
  for (int k = 0; k < 1000; ++k) {
    const MetricCounts c{1 + rng() % 500, 1 + rng() % 500, 1 + rng() % 500, 1 + rng() % 500};
    const auto m = compute_metrics(c);
    ASSERT_NEAR(*m.accuracy, static_cast<double>(c.tn + c.tp) / static_cast<double>(c.total()), 1e-15);
    ASSERT_NEAR(*m.f1, 2 * *m.precision * *m.tpr / (*m.precision + *m.tpr), 1e-12);
  }
}

}  // namespace
}  // namespace sid
