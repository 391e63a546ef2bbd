#pragma once

// Pair evaluation, fidelity measurement and cycle benchmarks.
//
// Decision margins are signed, positive meaning impostor, in model units:
//   mlp            score[1] - score[0]
//   svm, ocsvm     decision function value
//   lstm_th        mean error - threshold
//   ped_lstm_vote  rejections - R/2
// A verdict is impostor iff its margin is > 0.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sid/bundle.hpp"
#include "sid/codegen.hpp"
#include "sid/data.hpp"
#include "sid/detection.hpp"
#include "sid/machine.hpp"

namespace sid {

enum class EvalMode { Reference, Simulated };

constexpr std::string_view to_string(EvalMode m) { return m == EvalMode::Reference ? "reference" : "simulated"; }

inline EvalMode eval_mode_from_string(std::string_view s) {
  if (s == "reference") return EvalMode::Reference;
  if (s == "simulated") return EvalMode::Simulated;
  fail(ErrorCode::InvalidArgument, "unknown mode '" + std::string(s) + "' (expected reference or simulated)");
}

struct Decision {
  bool impostor = false;
  double margin = 0.0;
};

/// Double-precision reference pipeline on a raw window.
inline Decision reference_decision(const ModelBundle& b, std::span<const SensorReading> raw) {
  if (raw.size() != b.window)
    fail(ErrorCode::DimensionMismatch, "window has " + std::to_string(raw.size()) + " readings, model expects " +
                                           std::to_string(b.window));
  const Window w = b.normalization.apply(raw);
  switch (b.kind) {
    case ModelKind::Mlp: {
      const auto s = mlp_forward(*b.mlp, flatten(w));
      return {mlp_impostor(s), s[1] - s[0]};
    }
    case ModelKind::Svm:
    case ModelKind::Ocsvm: {
      const double d = svm_decision(*b.svm, flatten(w));
      return {d > 0, d};
    }
    case ModelKind::LstmTh: {
      const auto e = prediction_errors(*b.lstm, w, b.error_norm);
      double mean = 0.0;
      for (double v : e) mean += v;
      mean /= static_cast<double>(e.size());
      return {lstm_threshold_detect(e, b.lstm_threshold), mean - b.lstm_threshold};
    }
    case ModelKind::PedLstmVote: {
      const auto e = prediction_errors(*b.lstm, w, b.error_norm);
      const auto v = ped_vote(e, b.references);
      return {v.impostor, static_cast<double>(v.rejections) - static_cast<double>(v.references) / 2.0};
    }
  }
  return {};
}

/// A compiled model on its own machine. Not thread-safe; one per worker.
class SimulatedDetector {
 public:
  SimulatedDetector(const CompiledProgram& program, const MachineConfig& config) : program_(&program), machine_(config) {
    load_compiled(machine_, program);
  }

  Decision decide(std::span<const SensorReading> raw) {
    last_ = run_window(machine_, *program_, raw);
    return {last_.impostor, hardware_margin(machine_, *program_)};
  }

  const WindowRun& last_run() const { return last_; }
  const Machine& machine() const { return machine_; }

 private:
  const CompiledProgram* program_;
  Machine machine_;
  WindowRun last_;
};

// ---- parallel helper -----------------------------------------------------------

inline unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Runs body(index, worker) for index in [0, n) on up to `threads` workers.
/// The first exception is rethrown after all workers stop.
template <class Body>
void parallel_for(std::size_t n, unsigned threads, Body&& body) {
  threads = static_cast<unsigned>(std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1)));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&](unsigned worker) {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || stop) return;
      try {
        body(i, worker);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        stop = true;
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work, t);
  work(0);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---- fidelity ------------------------------------------------------------------

/// Simulated against reference verdicts. The band is the largest margin
/// deviation seen on agreeing windows; a disagreement is explained when the
/// reference margin lies inside it.
struct FidelityReport {
  std::size_t windows = 0;
  std::size_t agree = 0;
  std::size_t unexplained = 0;  // disagreements with |reference margin| > band
  double band = 0.0;
  double max_disagreement_margin = 0.0;
  std::uint64_t max_latency_cycles = 0;
  bool overflow = false;

  double agreement() const { return windows == 0 ? 1.0 : static_cast<double>(agree) / static_cast<double>(windows); }
  bool passes(double min_agreement = 0.99) const { return agreement() >= min_agreement && unexplained == 0; }
};

inline FidelityReport measure_fidelity(const ModelBundle& bundle, const CompiledProgram& program,
                                       std::span<const Window> windows, const MachineConfig& config,
                                       unsigned threads = default_threads()) {
  struct Row {
    Decision ref, hw;
    std::uint64_t latency = 0;
    bool overflow = false;
  };
  std::vector<Row> rows(windows.size());
  std::vector<std::optional<SimulatedDetector>> detectors(threads);
  parallel_for(windows.size(), threads, [&](std::size_t i, unsigned worker) {
    if (!detectors[worker]) detectors[worker].emplace(program, config);
    rows[i].ref = reference_decision(bundle, windows[i]);
    rows[i].hw = detectors[worker]->decide(windows[i]);
    rows[i].latency = detectors[worker]->last_run().max_invocation_cycles;
    rows[i].overflow = detectors[worker]->last_run().overflow;
  });
  FidelityReport f;
  f.windows = rows.size();
  for (const auto& r : rows) {
    f.max_latency_cycles = std::max(f.max_latency_cycles, r.latency);
    f.overflow = f.overflow || r.overflow;
    if (r.ref.impostor == r.hw.impostor) {
      ++f.agree;
      f.band = std::max(f.band, std::abs(r.hw.margin - r.ref.margin));
    }
  }
  for (const auto& r : rows) {
    if (r.ref.impostor == r.hw.impostor) continue;
    f.max_disagreement_margin = std::max(f.max_disagreement_margin, std::abs(r.ref.margin));
    if (std::abs(r.ref.margin) > f.band) ++f.unexplained;
  }
  return f;
}

// ---- pair evaluation -----------------------------------------------------------

struct PairResult {
  EvalPair pair;
  MetricCounts counts;
  std::size_t agree = 0;  // simulated mode: verdicts equal to the reference
};

namespace detail {

inline std::string percent(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * *v;
  return os.str();
}

inline std::string ratio_text(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::setprecision(6) << *v;
  return os.str();
}

/// Mean of the present values of one metric field.
inline std::optional<double> mean_of(const std::vector<Metrics>& ms, std::optional<double> Metrics::*field) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& m : ms)
    if (m.*field) s += *(m.*field), ++n;
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

inline void add_outcome(MetricCounts& c, bool impostor_truth, bool impostor_verdict) {
  if (impostor_truth) (impostor_verdict ? c.tp : c.fn)++;
  else (impostor_verdict ? c.fp : c.tn)++;
}

}  // namespace detail

struct EvaluationReport {
  EvalMode mode = EvalMode::Reference;
  std::optional<ModelKind> kind;
  std::uint32_t tracks = 4;
  double clock_hz = 115e6;
  std::size_t window = 0;
  std::uint64_t seed = 0;
  bool streaming = true;
  std::vector<PairResult> pairs;

  MetricCounts total;
  Metrics aggregate;   // Eq-style metrics on the summed counts
  Metrics per_target;  // each target's pairs pooled, then averaged over targets
  std::optional<double> balanced_accuracy;  // (mean self-pair TNR + mean other-pair TPR) / 2

  // Simulated mode.
  std::size_t windows = 0;
  std::size_t agree = 0;
  std::uint64_t max_latency_cycles = 0;
  std::uint64_t max_image_bytes = 0;
  std::size_t max_instructions = 0;

  double agreement() const { return windows == 0 ? 1.0 : static_cast<double>(agree) / static_cast<double>(windows); }

  void finalize() {
    total = {};
    std::map<std::uint32_t, MetricCounts> by_target;
    std::vector<double> tnr, tpr;
    for (const auto& p : pairs) {
      total += p.counts;
      by_target[p.pair.target] += p.counts;
      const Metrics m = compute_metrics(p.counts);
      if (!p.pair.impostor() && m.tnr) tnr.push_back(*m.tnr);
      if (p.pair.impostor() && m.tpr) tpr.push_back(*m.tpr);
    }
    aggregate = compute_metrics(total);
    std::vector<Metrics> targets;
    for (const auto& [t, c] : by_target) targets.push_back(compute_metrics(c));
    per_target.tnr = detail::mean_of(targets, &Metrics::tnr);
    per_target.tpr = detail::mean_of(targets, &Metrics::tpr);
    per_target.accuracy = detail::mean_of(targets, &Metrics::accuracy);
    per_target.precision = detail::mean_of(targets, &Metrics::precision);
    per_target.f1 = detail::mean_of(targets, &Metrics::f1);
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
    balanced_accuracy.reset();
    if (!tnr.empty() && !tpr.empty()) balanced_accuracy = (mean(tnr) + mean(tpr)) / 2.0;
  }

  std::string table() const {
    std::ostringstream os;
    os << "mode " << to_string(mode) << ", model " << (kind ? std::string(to_string(*kind)) : "-") << ", W=" << window
       << ", pairs " << pairs.size() << ", windows " << total.total() << "\n";
    os << std::left << std::setw(12) << "metrics" << std::right << std::setw(9) << "TNR%" << std::setw(9) << "TPR%"
       << std::setw(9) << "Acc%" << std::setw(9) << "P%" << std::setw(9) << "F1%" << "\n";
    auto row = [&](const char* name, const Metrics& m) {
      os << std::left << std::setw(12) << name << std::right << std::setw(9) << detail::percent(m.tnr) << std::setw(9)
         << detail::percent(m.tpr) << std::setw(9) << detail::percent(m.accuracy) << std::setw(9)
         << detail::percent(m.precision) << std::setw(9) << detail::percent(m.f1) << "\n";
    };
    row("per-target", per_target);
    row("aggregate", aggregate);
    os << "balanced accuracy " << detail::percent(balanced_accuracy) << "%\n";
    if (mode == EvalMode::Simulated) {
      os << "agreement with reference " << std::fixed << std::setprecision(2) << 100.0 * agreement() << "% of "
         << windows << " windows; worst invocation " << max_latency_cycles << " cycles = " << std::setprecision(4)
         << 1e3 * static_cast<double>(max_latency_cycles) / clock_hz << " ms at " << tracks << " tracks\n";
    }
    return os.str();
  }

  std::string key_values() const {
    std::ostringstream os;
    os << "mode=" << to_string(mode) << "\n";
    os << "kind=" << (kind ? std::string(to_string(*kind)) : "none") << "\n";
    os << "window=" << window << "\nseed=" << seed << "\ntracks=" << tracks << "\nclock_hz=" << clock_hz << "\n";
    os << "pairs=" << pairs.size() << "\n";
    os << "tp=" << total.tp << "\ntn=" << total.tn << "\nfp=" << total.fp << "\nfn=" << total.fn << "\n";
    auto metrics = [&](const char* prefix, const Metrics& m) {
      os << prefix << "tnr=" << detail::ratio_text(m.tnr) << "\n" << prefix << "tpr=" << detail::ratio_text(m.tpr) << "\n"
         << prefix << "accuracy=" << detail::ratio_text(m.accuracy) << "\n" << prefix << "precision="
         << detail::ratio_text(m.precision) << "\n" << prefix << "f1=" << detail::ratio_text(m.f1) << "\n";
    };
    metrics("avg_", per_target);
    metrics("agg_", aggregate);
    os << "balanced_accuracy=" << detail::ratio_text(balanced_accuracy) << "\n";
    if (mode == EvalMode::Simulated) {
      os << "windows=" << windows << "\nagreement=" << agreement() << "\n";
      os << "max_latency_cycles=" << max_latency_cycles << "\n";
      os << "max_latency_s=" << static_cast<double>(max_latency_cycles) / clock_hz << "\n";
      os << "max_image_bytes=" << max_image_bytes << "\nmax_instructions=" << max_instructions << "\n";
    }
    for (const auto& p : pairs)
      os << "pair target=" << p.pair.target << " candidate=" << p.pair.candidate << " tp=" << p.counts.tp << " tn="
         << p.counts.tn << " fp=" << p.counts.fp << " fn=" << p.counts.fn << "\n";
    return os.str();
  }
};

/// Runs every pair: the target's model on the candidate's test windows.
inline EvaluationReport evaluate(const std::map<std::uint32_t, ModelBundle>& bundles, const HaptDataset& ds,
                                 const UserSplit& split, std::span<const EvalPair> pairs, EvalMode mode,
                                 const MachineConfig& config, unsigned threads = default_threads(), CompileOptions opt = {}) {
  EvaluationReport rep;
  rep.mode = mode;
  rep.tracks = config.n_tracks;
  rep.clock_hz = config.clock_hz;
  rep.window = split.config.window;
  rep.seed = split.seed;
  rep.streaming = opt.streaming;
  std::map<std::uint32_t, CompiledProgram> programs;
  for (const auto& p : pairs) {
    const auto it = bundles.find(p.target);
    if (it == bundles.end()) fail(ErrorCode::MissingBundle, "no bundle for registered user " + std::to_string(p.target));
    if (it->second.window != split.config.window)
      fail(ErrorCode::DimensionMismatch, "bundle for user " + std::to_string(p.target) + " has W=" +
                                             std::to_string(it->second.window) + ", split uses W=" + std::to_string(split.config.window));
    if (!rep.kind) rep.kind = it->second.kind;
    if (mode == EvalMode::Simulated && !programs.count(p.target)) {
      auto prog = compile(it->second, config, opt);
      rep.max_image_bytes = std::max(rep.max_image_bytes, prog.image_bytes());
      rep.max_instructions = std::max(rep.max_instructions, prog.instructions.size());
      programs.emplace(p.target, std::move(prog));
    }
  }
  std::map<std::uint32_t, std::vector<Window>> test;
  for (const auto& p : pairs)
    if (!test.count(p.candidate)) test[p.candidate] = partition_windows(ds, split, p.candidate, Partition::Test);

  rep.pairs.resize(pairs.size());
  std::vector<std::uint64_t> latency(pairs.size(), 0);
  parallel_for(pairs.size(), threads, [&](std::size_t i, unsigned) {
    const EvalPair pair = pairs[i];
    PairResult& out = rep.pairs[i];
    out.pair = pair;
    const ModelBundle& b = bundles.at(pair.target);
    try {
      std::optional<SimulatedDetector> sim;
      if (mode == EvalMode::Simulated) sim.emplace(programs.at(pair.target), config);
      for (const auto& w : test.at(pair.candidate)) {
        const Decision ref = reference_decision(b, w);
        bool verdict = ref.impostor;
        if (sim) {
          verdict = sim->decide(w).impostor;
          out.agree += verdict == ref.impostor;
          latency[i] = std::max(latency[i], sim->last_run().max_invocation_cycles);
        }
        detail::add_outcome(out.counts, pair.impostor(), verdict);
      }
    } catch (const Error& e) {
      Error wrapped(e.code(), "pair target=" + std::to_string(pair.target) + " candidate=" + std::to_string(pair.candidate) +
                                  ": " + e.what());
      throw wrapped;
    }
  });
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    rep.windows += rep.pairs[i].counts.total();
    rep.agree += rep.pairs[i].agree;
    rep.max_latency_cycles = std::max(rep.max_latency_cycles, latency[i]);
  }
  if (mode == EvalMode::Reference) rep.windows = 0;
  rep.finalize();
  return rep;
}

// ---- benchmarks ----------------------------------------------------------------

struct BenchRow {
  std::uint32_t tracks = 0;
  std::uint64_t latency_cycles = 0;  // worst single invocation
  std::uint64_t window_cycles = 0;   // all invocations of one window
  double latency_seconds = 0.0;
  double window_seconds = 0.0;
};

struct BenchReport {
  ModelKind kind = ModelKind::Mlp;
  std::size_t window = 0;
  bool streaming = false;
  std::size_t instructions = 0;
  std::uint64_t image_bytes = 0, constant_bytes = 0, lut_bytes = 0;
  double clock_hz = 115e6;
  double period_seconds = 1.0 / kSampleRateHz;
  std::vector<BenchRow> rows;

  bool within_period() const {
    return std::all_of(rows.begin(), rows.end(), [&](const BenchRow& r) { return r.latency_seconds < period_seconds; });
  }

  std::string table() const {
    std::ostringstream os;
    os << to_string(kind) << " W=" << window << (streaming ? " streaming" : " whole-window") << ", " << instructions
       << " instructions, image " << image_bytes << " bytes (constants " << constant_bytes << ", LUTs " << lut_bytes << ")\n";
    os << std::setw(7) << "tracks" << std::setw(16) << "latency_cyc" << std::setw(14) << "latency_ms" << std::setw(16)
       << "window_cyc" << std::setw(14) << "window_ms" << "\n";
    for (const auto& r : rows)
      os << std::setw(7) << r.tracks << std::setw(16) << r.latency_cycles << std::setw(14) << std::fixed
         << std::setprecision(4) << 1e3 * r.latency_seconds << std::setw(16) << r.window_cycles << std::setw(14)
         << 1e3 * r.window_seconds << "\n";
    os << "latency below the " << 1e3 * period_seconds << " ms sensor period: " << (within_period() ? "yes" : "NO") << "\n";
    return os.str();
  }

  std::string key_values() const {
    std::ostringstream os;
    os << "kind=" << to_string(kind) << "\nwindow=" << window << "\nstreaming=" << streaming << "\ninstructions="
       << instructions << "\nimage_bytes=" << image_bytes << "\nconstant_bytes=" << constant_bytes
       << "\nlut_bytes=" << lut_bytes << "\n";
    for (const auto& r : rows)
      os << "bench tracks=" << r.tracks << " latency_cycles=" << r.latency_cycles << " latency_s=" << r.latency_seconds
         << " window_cycles=" << r.window_cycles << " window_s=" << r.window_seconds << "\n";
    os << "within_period=" << within_period() << "\n";
    return os.str();
  }
};

/// Cycle counts do not depend on data, so one window at the training mean suffices.
inline BenchReport bench(const ModelBundle& bundle, std::span<const std::uint32_t> tracks, MachineConfig base = {},
                         CompileOptions opt = {}) {
  const CompiledProgram p = compile(bundle, base, opt);
  BenchReport rep;
  rep.kind = bundle.kind;
  rep.window = bundle.window;
  rep.streaming = p.streaming;
  rep.instructions = p.instructions.size();
  rep.image_bytes = p.image_bytes();
  rep.constant_bytes = p.constant_bytes;
  rep.lut_bytes = p.lut_bytes;
  rep.clock_hz = base.clock_hz;
  SensorReading mean{};
  for (std::size_t c = 0; c < kChannels; ++c) mean[c] = bundle.normalization.mean[c];
  const Window w(bundle.window, mean);
  for (std::uint32_t t : tracks) {
    MachineConfig mc = base;
    mc.n_tracks = t;
    Machine m(mc);
    load_compiled(m, p);
    const WindowRun r = run_window(m, p, w);
    rep.rows.push_back({t, r.max_invocation_cycles, r.cycles, static_cast<double>(r.max_invocation_cycles) / mc.clock_hz,
                        static_cast<double>(r.cycles) / mc.clock_hz});
  }
  return rep;
}

struct VectorBench {
  std::size_t length = 0;
  std::uint64_t cycles_1 = 0, cycles_4 = 0;
  double ratio() const { return static_cast<double>(cycles_1) / static_cast<double>(cycles_4); }
};

/// One Vadd of `length` elements on 1 and on 4 tracks.
inline VectorBench vector_microbench(std::size_t length = 1000) {
  VectorBench v;
  v.length = length;
  const auto L = static_cast<std::uint32_t>(length);
  const std::vector<MacroInstruction> prog = {{OperationMode::Vadd, L, 0, 0, 4 * L, 8 * L}, MacroInstruction{}};
  for (std::uint32_t t : {1u, 4u}) {
    MachineConfig mc;
    mc.n_tracks = t;
    Machine m(mc);
    m.load_program(prog);
    (t == 1 ? v.cycles_1 : v.cycles_4) = m.run().cycles;
  }
  return v;
}

}  // namespace sid
