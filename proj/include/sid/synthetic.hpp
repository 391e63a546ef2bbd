#pragma once

// Deterministic synthetic users and models. Used for fixtures, tests and
// benchmarks when no trained bundles are available.
//
// Every random draw goes through Rng (mt19937_64 plus explicit transforms), so
// results do not depend on a standard library's distribution implementations.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sid/bundle.hpp"
#include "sid/data.hpp"
#include "sid/detection.hpp"
#include "sid/types.hpp"

namespace sid::synth {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (spare_) {
      const double s = *spare_;
      spare_.reset();
      return s;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// Gait-like periodic motion with user-specific cadence, harmonics and noise.
struct UserProfile {
  std::uint32_t id = 0;
  double cadence_hz = 1.8;
  double jitter = 0.02;
  double noise = 0.05;
  std::array<double, kChannels> offset{};
  std::array<std::array<double, 3>, kChannels> amplitude{};
  std::array<std::array<double, 3>, kChannels> phase{};
};

inline UserProfile make_user(std::uint32_t id, std::uint64_t seed) {
  Rng rng(seed * 0x9E3779B97F4A7C15ull + id);
  UserProfile u;
  u.id = id;
  u.cadence_hz = 1.5 + 0.7 * rng.uniform();
  u.jitter = 0.01 + 0.03 * rng.uniform();
  u.noise = 0.03 + 0.06 * rng.uniform();
  for (std::size_t c = 0; c < kChannels; ++c) {
    u.offset[c] = (c == 0 ? 1.0 : 0.0) + rng.normal(0.0, 0.25);
    for (std::size_t h = 0; h < 3; ++h) {
      u.amplitude[c][h] = std::abs(rng.normal(0.35 / static_cast<double>(h + 1), 0.12));
      u.phase[c][h] = 2.0 * std::numbers::pi * rng.uniform();
    }
  }
  return u;
}

inline Window user_stream(const UserProfile& u, std::size_t length, Rng& rng) {
  Window w(length);
  double phi = 2.0 * std::numbers::pi * rng.uniform();
  const double step = 2.0 * std::numbers::pi * u.cadence_hz / kSampleRateHz;
  for (auto& r : w) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      double v = u.offset[c];
      for (std::size_t h = 0; h < 3; ++h) v += u.amplitude[c][h] * std::sin(static_cast<double>(h + 1) * phi + u.phase[c][h]);
      r[c] = v + rng.normal(0.0, u.noise);
    }
    phi += step * (1.0 + rng.normal(0.0, u.jitter));
  }
  return w;
}

inline std::vector<Window> windows_of(const Window& stream, std::size_t w, std::size_t stride) {
  std::vector<Window> out;
  for (std::size_t s = 0; s + w <= stream.size(); s += stride) out.emplace_back(stream.begin() + s, stream.begin() + s + w);
  return out;
}

inline Normalization normalization_of(const Window& stream) {
  Normalization n;
  for (std::size_t c = 0; c < kChannels; ++c) {
    double s = 0.0, s2 = 0.0;
    for (const auto& r : stream) s += r[c];
    const double mean = s / static_cast<double>(stream.size());
    for (const auto& r : stream) s2 += (r[c] - mean) * (r[c] - mean);
    n.mean[c] = mean;
    n.stddev[c] = std::max(std::sqrt(s2 / static_cast<double>(stream.size())), 1e-6);
  }
  return n;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, double sd, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.normal(0.0, sd);
  return m;
}

inline std::vector<double> random_vector(std::size_t n, double mean, double sd, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(mean, sd);
  return v;
}

/// Ridge regression Y ~ [X, 1] * beta; returns beta of shape (features+1) x outputs.
inline Eigen::MatrixXd ridge_fit(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double lambda) {
  Eigen::MatrixXd A(X.rows(), X.cols() + 1);
  A << X, Eigen::VectorXd::Ones(X.rows());
  Eigen::MatrixXd G = A.transpose() * A;
  G.diagonal().array() += lambda;
  return G.ldlt().solve(A.transpose() * Y);
}

/// Random recurrent weights with a bounded recurrent gain; an echo-state style reservoir.
inline LstmParams random_lstm(std::size_t hidden, Rng& rng) {
  auto p = LstmParams::zeros(hidden);
  for (std::size_t g = 0; g < 4; ++g) {
    p.W[g] = random_matrix(hidden, kChannels, 0.6 / std::sqrt(6.0), rng);
    p.U[g] = random_matrix(hidden, hidden, 0.8 / std::sqrt(static_cast<double>(hidden)), rng);
    p.b[g] = random_vector(hidden, g == static_cast<std::size_t>(Gate::Forget) ? 1.0 : 0.0, 0.1, rng);
  }
  p.V = random_matrix(kChannels, hidden, 0.1, rng);
  p.v_bias.assign(kChannels, 0.0);
  return p;
}

/// Fits the output projection to predict the next normalized reading.
inline void fit_lstm_readout(LstmParams& p, const std::vector<Window>& windows, double lambda = 1e-2) {
  std::size_t rows = 0;
  for (const auto& w : windows) rows += w.size() - 1;
  Eigen::MatrixXd X(rows, p.hidden), Y(rows, kChannels);
  std::size_t r = 0;
  for (const auto& w : windows) {
    std::vector<double> h(p.hidden, 0.0), c(p.hidden, 0.0);
    for (std::size_t t = 0; t + 1 < w.size(); ++t, ++r) {
      auto s = lstm_step(p, h, c, w[t]);
      h = std::move(s.h);
      c = std::move(s.c);
      for (std::size_t k = 0; k < p.hidden; ++k) X(r, k) = h[k];
      for (std::size_t k = 0; k < kChannels; ++k) Y(r, k) = w[t + 1][k];
    }
  }
  const Eigen::MatrixXd beta = ridge_fit(X, Y, lambda);
  for (std::size_t o = 0; o < kChannels; ++o) {
    for (std::size_t k = 0; k < p.hidden; ++k) p.V(o, k) = beta(k, o);
    p.v_bias[o] = beta(p.hidden, o);
  }
}

struct SynthConfig {
  ModelKind kind = ModelKind::PedLstmVote;
  std::uint32_t user = 1;
  std::uint64_t seed = 1;
  std::size_t window = 64;
  std::size_t hidden = 16;                        // lstm kinds
  std::vector<std::size_t> mlp_hidden = {32, 16};  // mlp
  Activation activation = Activation::Sigmoid;
  std::size_t support_vectors = 40;               // svm kinds
  std::size_t references = 20;
  double alpha = 0.05;
  ErrorNorm error_norm = ErrorNorm::L2;           // ped; lstm_th always uses l2sq
  bool fit = true;                                // false skips readout fitting (benchmarks)
  std::size_t train_readings = 2400;
  std::size_t other_users = 4;
};

/// Streams for the owner (train / validation / test) and a few other users.
struct SynthPopulation {
  UserProfile owner;
  Window train, validation, test;
  std::vector<UserProfile> others;
  std::vector<Window> other_streams;
};

inline std::uint32_t other_user_id(std::uint32_t owner, std::size_t k) {
  return owner + 1 + static_cast<std::uint32_t>(k);
}

inline SynthPopulation make_population(const SynthConfig& cfg) {
  Rng rng(cfg.seed * 7919 + cfg.user);
  SynthPopulation p;
  p.owner = make_user(cfg.user, cfg.seed);
  p.train = user_stream(p.owner, cfg.train_readings, rng);
  p.validation = user_stream(p.owner, cfg.train_readings / 4 + cfg.window, rng);
  p.test = user_stream(p.owner, cfg.train_readings / 4 + cfg.window, rng);
  for (std::size_t k = 0; k < cfg.other_users; ++k) {
    p.others.push_back(make_user(other_user_id(cfg.user, k), cfg.seed));
    p.other_streams.push_back(user_stream(p.others.back(), cfg.train_readings / 2, rng));
  }
  return p;
}

namespace detail {

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::vector<Window> normalized(const std::vector<Window>& ws, const Normalization& n) {
  std::vector<Window> out;
  out.reserve(ws.size());
  for (const auto& w : ws) out.push_back(n.apply(w));
  return out;
}

inline Eigen::MatrixXd hidden_features(const MlpParams& p, const std::vector<Window>& ws) {
  const std::size_t last = p.layers.size() - 1;
  Eigen::MatrixXd X(static_cast<Eigen::Index>(ws.size()), static_cast<Eigen::Index>(p.layers[last].weight.cols));
  for (std::size_t r = 0; r < ws.size(); ++r) {
    std::vector<double> a = flatten(ws[r]);
    for (std::size_t l = 0; l < last; ++l) {
      auto z = sid::detail::matvec(p.layers[l].weight, a);
      for (std::size_t k = 0; k < z.size(); ++k) {
        z[k] += p.layers[l].bias[k];
        z[k] = p.activation == Activation::Sigmoid ? sid::detail::sigmoid(z[k]) : std::tanh(z[k]);
      }
      a = std::move(z);
    }
    for (std::size_t k = 0; k < a.size(); ++k) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = a[k];
  }
  return X;
}

}  // namespace detail

/// Raw (unnormalized) windows a quick fit draws on. `others` holds other
/// users' training windows and is only used by the two-class kinds.
struct FitData {
  Normalization normalization;
  std::vector<Window> train, validation, others;
};

/// Closed-form stand-in for offline training: reservoir LSTMs with ridge
/// readouts, random-feature MLPs with a ridge output layer, and kernel
/// machines on sampled training windows. Only `cfg.kind`, model sizes, alpha,
/// error norm, and seed are read from `cfg`.
inline ModelBundle fit_bundle(const FitData& data, const SynthConfig& cfg) {
  if (data.train.empty() || data.validation.empty())
    fail(ErrorCode::InsufficientData, "user " + std::to_string(cfg.user) + " has no training or validation windows");
  const bool two_class = cfg.kind == ModelKind::Mlp || cfg.kind == ModelKind::Svm;
  if (two_class && data.others.empty())
    fail(ErrorCode::InsufficientData, "two-class fit for user " + std::to_string(cfg.user) + " has no other-user windows");
  Rng rng(cfg.seed * 104729 + cfg.user * 31 + static_cast<std::uint64_t>(cfg.kind));
  ModelBundle b;
  b.kind = cfg.kind;
  b.user_id = cfg.user;
  b.window = cfg.window;
  b.alpha = cfg.alpha;
  b.normalization = data.normalization;
  b.provenance = {"sid-quickfit/1", cfg.seed};
  const auto train = detail::normalized(data.train, b.normalization);
  const auto val = detail::normalized(data.validation, b.normalization);
  const auto others = detail::normalized(data.others, b.normalization);

  switch (cfg.kind) {
    case ModelKind::LstmTh:
    case ModelKind::PedLstmVote: {
      b.error_norm = cfg.kind == ModelKind::LstmTh ? ErrorNorm::L2Squared : cfg.error_norm;
      b.lstm = random_lstm(cfg.hidden, rng);
      if (cfg.fit) fit_lstm_readout(*b.lstm, train);
      std::vector<std::vector<double>> val_errors;
      for (const auto& w : val) val_errors.push_back(prediction_errors(*b.lstm, w, b.error_norm));
      if (cfg.kind == ModelKind::LstmTh) {
        std::vector<double> means;
        for (const auto& e : val_errors) means.push_back(std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size()));
        b.lstm_threshold = detail::percentile(means, 0.95);
      } else {
        std::vector<std::size_t> pick(val_errors.size());
        std::iota(pick.begin(), pick.end(), 0);
        rng.shuffle(pick);
        for (std::size_t k = 0; k < cfg.references; ++k)
          b.references.push_back(make_ped_reference(val_errors[pick[k % pick.size()]], cfg.window - 1, cfg.alpha));
      }
      break;
    }
    case ModelKind::Mlp: {
      MlpParams p;
      p.activation = cfg.activation;
      std::size_t in = cfg.window * kChannels;
      for (std::size_t h : cfg.mlp_hidden) {
        p.layers.push_back({random_matrix(h, in, 1.0 / std::sqrt(static_cast<double>(in)), rng), random_vector(h, 0.0, 0.1, rng)});
        in = h;
      }
      p.layers.push_back({Matrix(2, in), std::vector<double>(2, 0.0)});
      std::vector<Window> all = train;
      all.insert(all.end(), others.begin(), others.end());
      const Eigen::MatrixXd X = detail::hidden_features(p, all);
      Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(X.rows(), 2);
      for (Eigen::Index r = 0; r < X.rows(); ++r) Y(r, static_cast<std::size_t>(r) < train.size() ? 0 : 1) = 1.0;
      const Eigen::MatrixXd beta = synth::ridge_fit(X, Y, 1e-1);
      for (std::size_t o = 0; o < 2; ++o) {
        for (std::size_t k = 0; k < in; ++k) p.layers.back().weight(o, k) = beta(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(o));
        p.layers.back().bias[o] = beta(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(o));
      }
      b.mlp = std::move(p);
      break;
    }
    case ModelKind::Svm:
    case ModelKind::Ocsvm: {
      const bool one_class = cfg.kind == ModelKind::Ocsvm;
      SvmParams p;
      p.variant = one_class ? SvmVariant::OneClass : SvmVariant::TwoClass;
      p.gamma = 1.0 / (static_cast<double>(kChannels) * static_cast<double>(cfg.window));
      const std::size_t own = one_class ? cfg.support_vectors : cfg.support_vectors / 2;
      const std::size_t oth = cfg.support_vectors - own;
      std::vector<std::size_t> ti(train.size()), oi(others.size());
      std::iota(ti.begin(), ti.end(), 0);
      std::iota(oi.begin(), oi.end(), 0);
      rng.shuffle(ti);
      rng.shuffle(oi);
      p.support_vectors = Matrix(cfg.support_vectors, cfg.window * kChannels);
      for (std::size_t k = 0; k < cfg.support_vectors; ++k) {
        const Window& w = k < own ? train[ti[k % ti.size()]] : others[oi[(k - own) % oi.size()]];
        const auto f = flatten(w);
        std::copy(f.begin(), f.end(), p.support_vectors.data.begin() + static_cast<std::ptrdiff_t>(k * f.size()));
        p.coef.push_back(k < own ? -1.0 / static_cast<double>(own) : 1.0 / static_cast<double>(oth));
      }
      p.bias = 0.0;
      std::vector<double> own_scores, other_scores;
      // Score held-out windows when there are any left, else all of them.
      for (std::size_t k = ti.size() > own ? own : 0; k < ti.size(); ++k)
        own_scores.push_back(svm_decision(p, flatten(train[ti[k]])));
      for (std::size_t k = oi.size() > oth ? oth : 0; k < oi.size(); ++k)
        other_scores.push_back(svm_decision(p, flatten(others[oi[k]])));
      if (one_class) {
        // rho: 90% of the owner's held-out training windows score as normal.
        p.bias = -detail::percentile(own_scores, 0.9);
      } else {
        p.bias = -0.5 * (detail::percentile(own_scores, 0.5) + detail::percentile(other_scores, 0.5));
      }
      b.svm = std::move(p);
      break;
    }
  }
  b.validate();
  return b;
}

inline ModelBundle synth_bundle(const SynthConfig& cfg) {
  const SynthPopulation pop = make_population(cfg);
  FitData d;
  d.normalization = normalization_of(pop.train);
  d.train = windows_of(pop.train, cfg.window, 32);
  d.validation = windows_of(pop.validation, cfg.window, cfg.window);
  for (const auto& s : pop.other_streams)
    for (auto& w : windows_of(s, cfg.window, 32)) d.others.push_back(std::move(w));
  ModelBundle b = fit_bundle(d, cfg);
  b.provenance.trainer_version = "sid-synth/1";
  return b;
}

/// Test windows of the owner (negatives) followed by other users' windows (positives).
struct LabeledWindows {
  std::vector<Window> windows;  // raw readings, not normalized
  std::vector<bool> impostor;
};

inline LabeledWindows test_windows(const SynthConfig& cfg, std::size_t count) {
  const SynthPopulation pop = make_population(cfg);
  Rng rng(cfg.seed * 15485863 + cfg.user);
  LabeledWindows out;
  const auto own = windows_of(pop.test, cfg.window, 8);
  for (std::size_t k = 0; k < count; ++k) {
    const bool imp = k % 2 == 1;
    if (!imp) {
      out.windows.push_back(own[rng.below(own.size())]);
    } else {
      const auto& prof = make_user(other_user_id(cfg.user, cfg.other_users + rng.below(6)), cfg.seed);
      out.windows.push_back(user_stream(prof, cfg.window, rng));
    }
    out.impostor.push_back(imp);
  }
  return out;
}

/// Writes a HAPT-layout directory: per user two experiments, each with two
/// WALK intervals of `walk_rows` readings framed by standing, unlabeled and
/// sitting rows.
inline void write_synthetic_hapt(const std::filesystem::path& dir, std::uint32_t users, std::uint64_t seed,
                                 std::size_t walk_rows = 600) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  Rng rng(seed * 2654435761u + 17);
  std::string labels;
  char buf[160];
  for (std::uint32_t u = 1; u <= users; ++u) {
    const UserProfile prof = make_user(u, seed);
    for (std::uint32_t k = 0; k < 2; ++k) {
      const std::uint32_t exp = 2 * (u - 1) + k + 1;
      Window rows;
      auto still = [&](std::size_t n, double tilt) {
        for (std::size_t t = 0; t < n; ++t) {
          SensorReading r{};
          for (std::size_t c = 0; c < kChannels; ++c) r[c] = prof.offset[c] * tilt + 0.01 * rng.normal();
          rows.push_back(r);
        }
      };
      auto segment = [&](int activity, std::size_t n, auto&& body) {
        const std::size_t start = rows.size() + 1;
        body(n);
        if (activity > 0) {
          std::snprintf(buf, sizeof buf, "%u %u %d %zu %zu\n", exp, u, activity, start, rows.size());
          labels += buf;
        }
      };
      auto walk = [&](std::size_t n) {
        for (const auto& r : user_stream(prof, n, rng)) rows.push_back(r);
      };
      segment(5, 120, [&](std::size_t n) { still(n, 1.0); });
      segment(1, walk_rows, walk);
      segment(0, 40, [&](std::size_t n) { still(n, 0.5); });
      segment(1, walk_rows, walk);
      segment(4, 100, [&](std::size_t n) { still(n, 0.2); });
      std::string acc, gyro;
      for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.9f %.9f %.9f\n", r[0], r[1], r[2]);
        acc += buf;
        std::snprintf(buf, sizeof buf, "%.9f %.9f %.9f\n", r[3], r[4], r[5]);
        gyro += buf;
      }
      sid::detail::write_text_file((dir / hapt_file_name("acc", exp, u)).string(), acc);
      sid::detail::write_text_file((dir / hapt_file_name("gyro", exp, u)).string(), gyro);
    }
  }
  sid::detail::write_text_file((dir / "labels.txt").string(), labels);
}

/// Quick-fit input for one registered user of a split.
inline FitData fit_data(const HaptDataset& ds, const UserSplit& split, std::uint32_t user, bool two_class) {
  FitData d;
  d.normalization = training_normalization(ds, split, user);
  for (auto& s : training_set(ds, split, user, two_class)) (s.impostor ? d.others : d.train).push_back(std::move(s.readings));
  d.validation = partition_windows(ds, split, user, Partition::Validation);
  return d;
}

}  // namespace sid::synth
