#pragma once

// Compiles a ModelBundle into a straight-line SID program plus its initial
// datapath RAM image.
//
// Memory map: [0: sensor buffer][model constants][workspace]. Operands are
// recorded against symbols and resolved once the layout is final, so emitters
// never deal with raw addresses.
//
// LSTM models compile in one of two forms:
//   whole-window  one entry point; the sensor buffer holds the full window.
//   streaming     entry "prime" consumes the first reading, entry "step" every
//                 later one; the error history lives in a shift register and
//                 the verdict is refreshed by every step. After W-1 steps it
//                 equals the whole-window verdict bit for bit.
//
// Errors are squared L2 norms in hardware (no square root mode). For
// PED-LSTM-Vote with L2 bundles the reference boundaries are squared instead;
// the KS statistic is unchanged by that monotone map. Boundaries are stored
// one ulp above quantize(b) so the strict VSsgt test b' > e counts e <= b.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sid/bundle.hpp"
#include "sid/detection.hpp"
#include "sid/error.hpp"
#include "sid/fixed_point.hpp"
#include "sid/isa.hpp"
#include "sid/lut.hpp"
#include "sid/machine.hpp"

namespace sid {

enum class Section { Sensor, Constant, Workspace };

constexpr std::string_view to_string(Section s) {
  switch (s) {
    case Section::Sensor: return "sensor";
    case Section::Constant: return "const";
    case Section::Workspace: return "work";
  }
  return "?";
}

struct Symbol {
  std::string name;
  Section section = Section::Workspace;
  std::uint32_t address = 0;
  std::uint32_t words = 0;
};

struct CompiledProgram {
  ModelKind kind = ModelKind::Mlp;
  std::size_t window = 0;
  bool streaming = false;
  std::vector<MacroInstruction> instructions;
  std::vector<std::uint8_t> image;  // initial datapath RAM [0, workspace_end)
  std::vector<Symbol> symbols;
  std::map<std::string, std::uint32_t> entry_points;
  std::uint32_t sensor_base = 0;
  std::uint32_t sensor_bytes = 0;
  std::uint32_t verdict_address = 0;
  std::uint32_t workspace_end = 0;  // high-water mark
  std::uint64_t constant_bytes = 0;
  std::uint64_t lut_bytes = 0;
  LutSet luts;

  /// Model footprint: constants in datapath RAM plus the LUT tables used.
  std::uint64_t image_bytes() const { return constant_bytes + lut_bytes; }

  const Symbol& symbol(std::string_view name) const {
    for (const auto& s : symbols)
      if (s.name == name) return s;
    fail(ErrorCode::InvalidArgument, "no symbol '" + std::string(name) + "'");
  }

  std::uint32_t entry(std::string_view name) const {
    const auto it = entry_points.find(std::string(name));
    if (it == entry_points.end()) fail(ErrorCode::InvalidArgument, "no entry point '" + std::string(name) + "'");
    return it->second;
  }

  /// Instructions executed by one invocation starting at `entry`, up to Halt.
  std::size_t invocation_length(std::uint32_t entry) const {
    std::size_t n = 0;
    while (entry + n < instructions.size() && instructions[entry + n].mode != OperationMode::Halt) ++n;
    return n;
  }

  ProgramImage to_image() const { return {instructions, image}; }

  /// Sidecar text: one "name 0xADDRESS words section" line per symbol.
  std::string symbol_map() const {
    std::ostringstream os;
    for (const auto& s : symbols) {
      char addr[16];
      std::snprintf(addr, sizeof addr, "0x%08X", s.address);
      os << s.name << ' ' << addr << ' ' << s.words << ' ' << to_string(s.section) << '\n';
    }
    for (const auto& [name, pc] : entry_points) os << "@entry." << name << ' ' << pc << '\n';
    return os.str();
  }
};

class ProgramBuilder {
 public:
  struct Ref {
    std::uint32_t symbol = 0;
    std::uint32_t offset = 0;  // words
    Ref operator+(std::uint32_t words) const { return {symbol, offset + words}; }
  };

  Ref sensor(std::string name, std::uint32_t words) {
    if (has_sensor_) fail(ErrorCode::InvalidArgument, "sensor buffer declared twice");
    has_sensor_ = true;
    return add(std::move(name), Section::Sensor, words, {});
  }

  Ref constant(std::string name, std::vector<FixedPoint32> values) {
    const auto n = static_cast<std::uint32_t>(values.size());
    return add(std::move(name), Section::Constant, n, std::move(values));
  }

  Ref constant_fill(std::string name, std::uint32_t words, FixedPoint32 v) {
    return constant(std::move(name), std::vector<FixedPoint32>(words, v));
  }

  Ref workspace(std::string name, std::uint32_t words, std::vector<FixedPoint32> init = {}) {
    return add(std::move(name), Section::Workspace, words, std::move(init));
  }

  void entry(const std::string& name) { entries_[name] = static_cast<std::uint32_t>(code_.size()); }

  void emit(OperationMode mode, std::uint32_t length, std::uint32_t width, Ref x, Ref y, Ref z) {
    if (length == 0 || length > kMaxLength) fail(ErrorCode::CapacityExceeded, std::string(mnemonic(mode)) + " length " + std::to_string(length) + " outside 1.." + std::to_string(kMaxLength));
    std::uint32_t ext_x = length, ext_y = length, ext_z = length;
    switch (operand_shape(mode)) {
      case OperandShape::Unary: ext_y = 0; break;
      case OperandShape::VectorScalar: ext_y = 1; break;
      case OperandShape::Reduction: ext_y = 0; ext_z = 1; break;
      case OperandShape::MatrixVector: ext_x = length * width; ext_z = width; break;
      default: break;
    }
    check(x, ext_x, mode);
    if (ext_y) check(y, ext_y, mode);
    check(z, ext_z, mode);
    code_.push_back(Pending(mode, length, width, x, ext_y ? y : Ref{}, z));
  }

  void binary(OperationMode m, std::uint32_t n, Ref x, Ref y, Ref z) { emit(m, n, 0, x, y, z); }
  void unary(OperationMode m, std::uint32_t n, Ref x, Ref z) { emit(m, n, 0, x, Ref{}, z); }
  void reduce(OperationMode m, std::uint32_t n, Ref x, Ref z) { emit(m, n, 0, x, Ref{}, z); }

  /// z = M v with M rows x cols, split into MVmul row chunks of <= max_rows.
  void mvmul(std::uint32_t rows, std::uint32_t cols, Ref m, Ref v, Ref z, std::uint32_t max_rows) {
    for (std::uint32_t r0 = 0; r0 < rows; r0 += max_rows) {
      const std::uint32_t r = std::min(max_rows, rows - r0);
      emit(OperationMode::MVmul, cols, r, m + r0 * cols, v, z + r0);
    }
  }

  void halt() { code_.push_back(Pending(OperationMode::Halt, 0, 0, {}, {}, {}, true)); }

  std::size_t instruction_count() const { return code_.size(); }

  /// Resolves the layout. Symbols are placed in section order, then declaration order.
  CompiledProgram finish(const MachineConfig& config) const {
    CompiledProgram p;
    std::vector<std::uint32_t> addr(symbols_.size());
    std::uint32_t cursor = 0;
    for (Section sec : {Section::Sensor, Section::Constant, Section::Workspace}) {
      for (std::size_t k = 0; k < symbols_.size(); ++k) {
        if (symbols_[k].section != sec) continue;
        addr[k] = cursor;
        const std::uint64_t next = static_cast<std::uint64_t>(cursor) + 4ull * symbols_[k].words;
        if (next > config.datapath_ram_bytes)
          fail(ErrorCode::CapacityExceeded, "symbol '" + symbols_[k].name + "' ends at byte " + std::to_string(next) +
                                                ", beyond the " + std::to_string(config.datapath_ram_bytes) +
                                                "-byte datapath RAM");
        cursor = static_cast<std::uint32_t>(next);
        if (sec == Section::Constant) p.constant_bytes += 4ull * symbols_[k].words;
        if (sec == Section::Sensor) p.sensor_bytes = 4 * symbols_[k].words;
        p.symbols.push_back({symbols_[k].name, sec, addr[k], symbols_[k].words});
      }
    }
    p.workspace_end = cursor;
    if (code_.size() > config.instruction_capacity())
      fail(ErrorCode::CapacityExceeded, std::to_string(code_.size()) + " instructions exceed the " +
                                            std::to_string(config.instruction_capacity()) + "-instruction RAM (" +
                                            std::to_string(config.instruction_ram_bytes) + " bytes)");
    auto resolve = [&](const Ref& r) { return addr[r.symbol] + 4 * r.offset; };
    for (const auto& c : code_) {
      if (c.halt) {
        p.instructions.push_back(MacroInstruction{});
        continue;
      }
      p.instructions.push_back({c.mode, c.length, c.width, resolve(c.x), c.uses_y ? resolve(c.y) : 0, resolve(c.z)});
    }
    p.image.assign(cursor, 0);
    for (std::size_t k = 0; k < symbols_.size(); ++k) {
      for (std::size_t i = 0; i < symbols_[k].init.size(); ++i) {
        const auto u = static_cast<std::uint32_t>(symbols_[k].init[i].raw());
        const std::size_t a = addr[k] + 4 * i;
        for (int b = 0; b < 4; ++b) p.image[a + b] = static_cast<std::uint8_t>(u >> (8 * b));
      }
    }
    p.entry_points = entries_;
    return p;
  }

 private:
  struct SymbolDef {
    std::string name;
    Section section;
    std::uint32_t words;
    std::vector<FixedPoint32> init;
  };
  struct Pending {
    OperationMode mode;
    std::uint32_t length, width;
    Ref x, y, z;
    bool halt = false;
    bool uses_y = true;
    Pending(OperationMode m, std::uint32_t l, std::uint32_t w, Ref x_, Ref y_, Ref z_, bool h = false)
        : mode(m), length(l), width(w), x(x_), y(y_), z(z_), halt(h), uses_y(operand_shape(m) != OperandShape::Unary && operand_shape(m) != OperandShape::Reduction) {}
  };

  Ref add(std::string name, Section s, std::uint32_t words, std::vector<FixedPoint32> init) {
    if (words == 0) fail(ErrorCode::InvalidArgument, "symbol '" + name + "' has no words");
    for (const auto& d : symbols_)
      if (d.name == name) fail(ErrorCode::InvalidArgument, "symbol '" + name + "' defined twice");
    if (init.size() > words) fail(ErrorCode::InvalidArgument, "symbol '" + name + "' initializer too long");
    symbols_.push_back({std::move(name), s, words, std::move(init)});
    return {static_cast<std::uint32_t>(symbols_.size() - 1), 0};
  }

  void check(const Ref& r, std::uint32_t extent, OperationMode mode) const {
    const auto& s = symbols_.at(r.symbol);
    if (static_cast<std::uint64_t>(r.offset) + extent > s.words)
      fail(ErrorCode::InvalidArgument, std::string(mnemonic(mode)) + " operand " + s.name + "+" + std::to_string(r.offset) +
                                           " spans " + std::to_string(extent) + " words of " + std::to_string(s.words));
  }

  std::vector<SymbolDef> symbols_;
  std::vector<Pending> code_;
  std::map<std::string, std::uint32_t> entries_;
  bool has_sensor_ = false;
};

struct CompileOptions {
  /// LSTM kinds: streaming per-reading program (true) or whole-window program.
  bool streaming = true;
};

namespace detail {

inline std::vector<FixedPoint32> quantized(std::span<const double> v) {
  std::vector<FixedPoint32> out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = quantize(v[k]);
  return out;
}

inline std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

inline std::uint64_t lut_table_bytes(const LutTable& t) { return 4ull * (2 * t.segments() + 6); }

inline std::array<std::vector<FixedPoint32>, 2> normalization_constants(const Normalization& n, std::size_t repeat) {
  std::array<std::vector<FixedPoint32>, 2> out;
  for (std::size_t r = 0; r < repeat; ++r) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      out[0].push_back(quantize(n.mean[c]));
      out[1].push_back(quantize(1.0 / n.stddev[c]));
    }
  }
  return out;
}

inline CompiledProgram finish_program(const ProgramBuilder& b, const MachineConfig& config, const ModelBundle& bundle,
                                      std::initializer_list<LutFunction> luts_used, bool streaming) {
  CompiledProgram p = b.finish(config);
  p.kind = bundle.kind;
  p.window = bundle.window;
  p.streaming = streaming;
  p.luts = bundle.luts;
  for (auto f : luts_used) p.lut_bytes += lut_table_bytes(bundle.luts.get(f));
  p.verdict_address = p.symbol("verdict").address;
  p.sensor_base = p.symbol("sensor").address;
  return p;
}

/// Shared LSTM state and per-timestep emitter.
class LstmEmitter {
 public:
  LstmEmitter(ProgramBuilder& b, const ModelBundle& bundle, const MachineConfig& config, ProgramBuilder::Ref sensor)
      : b_(b), H_(u32(bundle.lstm->hidden)), chunk_(config.scratchpad_words()), sensor_(sensor) {
    const auto& p = *bundle.lstm;
    const auto norm = normalization_constants(bundle.normalization, 1);
    mean_ = b.constant("norm.mean", norm[0]);
    inv_std_ = b.constant("norm.inv_std", norm[1]);
    // Stacked gate matrix [W | U | b], rows [cand; forget; input; output].
    const std::uint32_t cols = H_ + 7;
    std::vector<FixedPoint32> gates(4ull * H_ * cols);
    for (std::size_t g = 0; g < 4; ++g) {
      for (std::size_t r = 0; r < H_; ++r) {
        FixedPoint32* row = gates.data() + (g * H_ + r) * cols;
        for (std::size_t c = 0; c < kChannels; ++c) row[c] = quantize(p.W[g](r, c));
        for (std::size_t c = 0; c < H_; ++c) row[kChannels + c] = quantize(p.U[g](r, c));
        row[cols - 1] = quantize(p.b[g][r]);
      }
    }
    gates_ = b.constant("lstm.gates", std::move(gates));
    std::vector<FixedPoint32> proj(kChannels * (H_ + 1));
    for (std::size_t r = 0; r < kChannels; ++r) {
      for (std::size_t c = 0; c < H_; ++c) proj[r * (H_ + 1) + c] = quantize(p.V(r, c));
      proj[r * (H_ + 1) + H_] = quantize(p.v_bias[r]);
    }
    proj_ = b.constant("lstm.proj", std::move(proj));

    std::vector<FixedPoint32> xh1_init(cols);
    xh1_init.back() = FixedPoint32::one();
    xh1_ = b.workspace("lstm.xh1", cols, std::move(xh1_init));
    c_ = b.workspace("lstm.c", H_);
    pre_ = b.workspace("lstm.gate_act", 4 * H_);
    tmp_ = b.workspace("lstm.tmp", H_);
    pred_ = b.workspace("lstm.pred", kChannels);
    diff_ = b.workspace("lstm.diff", kChannels);
  }

  /// xh1[0:6] = (reading - mean) * inv_std
  void normalize(std::uint32_t reading) {
    b_.binary(OperationMode::Vsub, kChannels, sensor_ + reading * kChannels, mean_, xh1_);
    b_.binary(OperationMode::Vmul, kChannels, xh1_, inv_std_, xh1_);
  }

  void reset_state() {
    b_.binary(OperationMode::Vsub, H_, c_, c_, c_);
    b_.binary(OperationMode::Vsub, H_, xh1_ + kChannels, xh1_ + kChannels, xh1_ + kChannels);
  }

  /// dst = |pred - x|^2 against the freshly normalized reading.
  void error(ProgramBuilder::Ref dst) {
    b_.binary(OperationMode::Vsub, kChannels, pred_, xh1_, diff_);
    b_.reduce(OperationMode::Vsqnorm, kChannels, diff_, dst);
  }

  /// One cell update on xh1 = [x; h; 1], then the next-reading prediction.
  void timestep() {
    const std::uint32_t H = H_;
    b_.mvmul(4 * H, H + 7, gates_, xh1_, pre_, chunk_);
    b_.unary(OperationMode::Vtanh, H, pre_, pre_);
    b_.unary(OperationMode::Vsig, 3 * H, pre_ + H, pre_ + H);
    b_.binary(OperationMode::Vmul, H, pre_ + H, c_, c_);
    b_.binary(OperationMode::Vmul, H, pre_ + 2 * H, pre_, tmp_);
    b_.binary(OperationMode::Vadd, H, c_, tmp_, c_);
    b_.unary(OperationMode::Vtanh, H, c_, tmp_);
    b_.binary(OperationMode::Vmul, H, pre_ + 3 * H, tmp_, xh1_ + kChannels);
    b_.mvmul(kChannels, H + 1, proj_, xh1_ + kChannels, pred_, chunk_);
  }

 private:
  ProgramBuilder& b_;
  std::uint32_t H_;
  std::uint32_t chunk_;
  ProgramBuilder::Ref sensor_, mean_, inv_std_, gates_, proj_, xh1_, c_, pre_, tmp_, pred_, diff_;
};

using DecisionEmitter = std::function<void(ProgramBuilder&, ProgramBuilder::Ref errors, ProgramBuilder::Ref zeros)>;

inline CompiledProgram compile_lstm(const ModelBundle& bundle, const MachineConfig& config, const CompileOptions& opt,
                                    const DecisionEmitter& decide) {
  const std::uint32_t W = u32(bundle.window);
  const std::uint32_t n = W - 1;
  ProgramBuilder b;
  const auto sensor = b.sensor("sensor", (opt.streaming ? 1 : W) * u32(kChannels));
  LstmEmitter lstm(b, bundle, config, sensor);
  const auto zeros = b.constant_fill("zeros", n, FixedPoint32::zero());
  const auto errors = b.workspace("errors", n);

  if (opt.streaming) {
    b.entry("prime");
    lstm.normalize(0);
    lstm.reset_state();
    lstm.timestep();
    b.halt();
    // "advance" consumes a reading without deciding; "step" also decides, so
    // a verdict is available after every reading at the cost of one step.
    for (const bool decides : {false, true}) {
      b.entry(decides ? "step" : "advance");
      lstm.normalize(0);
      if (n > 1) b.binary(OperationMode::Vadd, n - 1, errors + 1, zeros, errors);
      lstm.error(errors + (n - 1));
      lstm.timestep();
      if (decides) decide(b, errors, zeros);
      b.halt();
    }
  } else {
    b.entry("main");
    for (std::uint32_t t = 0; t < W; ++t) {
      lstm.normalize(t);
      if (t > 0) lstm.error(errors + (t - 1));
      if (t + 1 < W) {
        if (t == 0) lstm.reset_state();
        lstm.timestep();
      }
    }
    decide(b, errors, zeros);
    b.halt();
  }
  return finish_program(b, config, bundle, {LutFunction::Sigmoid, LutFunction::Tanh}, opt.streaming);
}



/// Integer-valued statistics make `stat > t` equivalent to `stat > floor(t)`,
/// which is exact in Q16.16.
inline FixedPoint32 integer_threshold(double t) { return quantize(std::floor(t)); }

/// quantize(b) one ulp up, so that b' > e holds exactly when e <= quantize(b).
inline FixedPoint32 boundary_word(double b) {
  const FixedPoint32 q = quantize(b);
  return q == FixedPoint32::max() ? q : FixedPoint32::from_raw(q.raw() + 1);
}

}  // namespace detail

inline CompiledProgram compile_mlp(const ModelBundle& bundle, const MachineConfig& config) {
  if (bundle.kind != ModelKind::Mlp) fail(ErrorCode::InvalidArgument, "compile_mlp needs an mlp bundle");
  bundle.validate();
  const auto& p = *bundle.mlp;
  const std::uint32_t D = detail::u32(bundle.window * kChannels);
  ProgramBuilder b;
  const auto sensor = b.sensor("sensor", D);
  const auto norm = detail::normalization_constants(bundle.normalization, bundle.window);
  const auto mean = b.constant("norm.mean", norm[0]);
  const auto inv_std = b.constant("norm.inv_std", norm[1]);
  std::vector<ProgramBuilder::Ref> weights, biases, acts;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string n = "mlp.layer" + std::to_string(l);
    weights.push_back(b.constant(n + ".weight", detail::quantized(p.layers[l].weight.data)));
    biases.push_back(b.constant(n + ".bias", detail::quantized(p.layers[l].bias)));
  }
  const auto input = b.workspace("input", D);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const bool last = l + 1 == p.layers.size();
    acts.push_back(b.workspace(last ? "score" : "act" + std::to_string(l), detail::u32(p.layers[l].weight.rows)));
  }
  const auto verdict = b.workspace("verdict", 1);

  b.entry("main");
  b.binary(OperationMode::Vsub, D, sensor, mean, input);
  b.binary(OperationMode::Vmul, D, input, inv_std, input);
  const auto act = p.activation == Activation::Sigmoid ? OperationMode::Vsig : OperationMode::Vtanh;
  auto in = input;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto rows = detail::u32(p.layers[l].weight.rows), cols = detail::u32(p.layers[l].weight.cols);
    b.mvmul(rows, cols, weights[l], in, acts[l], config.scratchpad_words());
    b.binary(OperationMode::Vadd, rows, acts[l], biases[l], acts[l]);
    if (l + 1 < p.layers.size()) b.unary(act, rows, acts[l], acts[l]);
    in = acts[l];
  }
  b.emit(OperationMode::Vsgt, 1, 0, acts.back() + 1, acts.back(), verdict);
  b.halt();
  const LutFunction f = p.activation == Activation::Sigmoid ? LutFunction::Sigmoid : LutFunction::Tanh;
  return detail::finish_program(b, config, bundle, {f}, false);
}

/// SVM and one-class SVM share one program: RBF kernels through Vexp, a
/// one-row MVmul against the coefficients, then score > -bias.
inline CompiledProgram compile_svm(const ModelBundle& bundle, const MachineConfig& config) {
  if (bundle.kind != ModelKind::Svm && bundle.kind != ModelKind::Ocsvm)
    fail(ErrorCode::InvalidArgument, "compile_svm needs an svm or ocsvm bundle");
  bundle.validate();
  const auto& p = *bundle.svm;
  if (!(p.gamma >= 0))
    fail(ErrorCode::ExpRangeError, "svm gamma " + std::to_string(p.gamma) + " is negative; exp arguments would be positive");
  const std::uint32_t D = detail::u32(bundle.window * kChannels);
  const std::uint32_t S = detail::u32(p.support_vectors.rows);
  ProgramBuilder b;
  const auto sensor = b.sensor("sensor", D);
  const auto norm = detail::normalization_constants(bundle.normalization, bundle.window);
  const auto mean = b.constant("norm.mean", norm[0]);
  const auto inv_std = b.constant("norm.inv_std", norm[1]);
  const auto sv = b.constant("svm.support_vectors", detail::quantized(p.support_vectors.data));
  const auto neg_gamma = b.constant_fill("svm.neg_gamma", S, quantize(-p.gamma));
  const auto coef = b.constant("svm.coef", detail::quantized(p.coef));
  const auto neg_bias = b.constant("svm.neg_bias", {quantize(-p.bias)});
  const auto input = b.workspace("input", D);
  const auto diff = b.workspace("diff", D);
  const auto d2 = b.workspace("sq_dist", S);
  const auto kern = b.workspace("kernel", S);
  const auto score = b.workspace("score", 1);
  const auto verdict = b.workspace("verdict", 1);

  b.entry("main");
  b.binary(OperationMode::Vsub, D, sensor, mean, input);
  b.binary(OperationMode::Vmul, D, input, inv_std, input);
  for (std::uint32_t i = 0; i < S; ++i) {
    b.binary(OperationMode::Vsub, D, input, sv + i * D, diff);
    b.reduce(OperationMode::Vsqnorm, D, diff, d2 + i);
  }
  b.binary(OperationMode::Vmul, S, d2, neg_gamma, kern);
  b.unary(OperationMode::Vexp, S, kern, kern);
  b.emit(OperationMode::MVmul, S, 1, coef, kern, score);
  b.emit(OperationMode::Vsgt, 1, 0, score, neg_bias, verdict);
  b.halt();
  return detail::finish_program(b, config, bundle, {LutFunction::Exp}, false);
}

/// Mean-error threshold: sum of the W-1 squared errors > quantize((W-1) * thr).
inline CompiledProgram compile_lstm_th(const ModelBundle& bundle, const MachineConfig& config, CompileOptions opt = {}) {
  if (bundle.kind != ModelKind::LstmTh) fail(ErrorCode::InvalidArgument, "compile_lstm_th needs an lstm_th bundle");
  bundle.validate();
  if (bundle.error_norm != ErrorNorm::L2Squared)
    fail(ErrorCode::UnsupportedErrorNorm, "lstm_th on hardware needs squared errors (error_norm \"l2sq\"); the mean of "
                                          "square-rooted errors has no square-root-free form");
  const std::uint32_t n = detail::u32(bundle.window - 1);
  const double thr = bundle.lstm_threshold;
  return detail::compile_lstm(bundle, config, opt, [n, thr](ProgramBuilder& b, ProgramBuilder::Ref errors, ProgramBuilder::Ref) {
    const auto ones = b.constant_fill("th.ones", n, FixedPoint32::one());
    const auto limit = b.constant("th.limit", {quantize(thr * n)});
    const auto sum = b.workspace("th.sum", 1);
    const auto verdict = b.workspace("verdict", 1);
    b.emit(OperationMode::MVmul, n, 1, ones, errors, sum);
    b.emit(OperationMode::VSsgt, 1, 0, sum, limit, verdict);
  });
}

/// Per reference: n VSsgt rows counting errors below each boundary, n Vadds
/// accumulating the counts, Vsub against the reference histogram, Vmaxabs and
/// the reject test. Rejections are then summed and compared with R/2.
inline CompiledProgram compile_ped_lstm_vote(const ModelBundle& bundle, const MachineConfig& config, CompileOptions opt = {}) {
  if (bundle.kind != ModelKind::PedLstmVote) fail(ErrorCode::InvalidArgument, "compile_ped_lstm_vote needs a ped_lstm_vote bundle");
  bundle.validate();
  const std::uint32_t n = detail::u32(bundle.window - 1);
  for (const auto& r : bundle.references)
    if (r.n != n)
      fail(ErrorCode::DimensionMismatch, "reference assumes n=" + std::to_string(r.n) + " but the window yields " + std::to_string(n));
  const bool squared = bundle.error_norm == ErrorNorm::L2;  // hardware errors are squared
  const auto& refs = bundle.references;
  return detail::compile_lstm(bundle, config, opt, [&](ProgramBuilder& b, ProgramBuilder::Ref errors, ProgramBuilder::Ref zeros) {
    const auto R = detail::u32(refs.size());
    std::size_t max_bins = 0;
    std::vector<std::array<ProgramBuilder::Ref, 3>> consts;
    for (std::uint32_t k = 0; k < R; ++k) {
      const auto& r = refs[k];
      std::vector<FixedPoint32> bounds, cum;
      for (double x : r.boundaries) bounds.push_back(detail::boundary_word(squared ? x * x : x));
      for (double c : r.cumulative) cum.push_back(quantize(c));
      const std::string p = "ped." + std::to_string(k);
      consts.push_back({b.constant(p + ".boundaries", std::move(bounds)), b.constant(p + ".cumulative", std::move(cum)),
                        b.constant(p + ".threshold", {detail::integer_threshold(r.threshold)})});
      max_bins = std::max(max_bins, r.boundaries.size());
    }
    if (max_bins > n)
      fail(ErrorCode::DimensionMismatch, "a reference has " + std::to_string(max_bins) + " bins, more than the " +
                                             std::to_string(n) + "-word zero vector");
    const auto half = b.constant("ped.half_votes", {detail::integer_threshold(R / 2.0)});
    const auto le = b.workspace("ped.le", n * detail::u32(max_bins));
    const auto cum = b.workspace("ped.count", detail::u32(max_bins));
    const auto diff = b.workspace("ped.diff", detail::u32(max_bins));
    const auto stat = b.workspace("ped.stat", R);
    const auto reject = b.workspace("ped.reject", R);
    const auto votes = b.workspace("ped.votes", 1);
    const auto verdict = b.workspace("verdict", 1);
    for (std::uint32_t k = 0; k < R; ++k) {
      const auto bins = detail::u32(refs[k].boundaries.size());
      const auto [bounds, refcum, threshold] = consts[k];
      for (std::uint32_t i = 0; i < n; ++i) b.emit(OperationMode::VSsgt, bins, 0, bounds, errors + i, le + i * bins);
      b.binary(OperationMode::Vadd, bins, zeros, le, cum);
      for (std::uint32_t i = 1; i < n; ++i) b.binary(OperationMode::Vadd, bins, cum, le + i * bins, cum);
      b.binary(OperationMode::Vsub, bins, refcum, cum, diff);
      b.reduce(OperationMode::Vmaxabs, bins, diff, stat + k);
      b.emit(OperationMode::VSsgt, 1, 0, stat + k, threshold, reject + k);
    }
    b.binary(OperationMode::Vadd, 1, zeros, reject, votes);
    for (std::uint32_t k = 1; k < R; ++k) b.binary(OperationMode::Vadd, 1, votes, reject + k, votes);
    b.emit(OperationMode::VSsgt, 1, 0, votes, half, verdict);
  });
}

inline CompiledProgram compile(const ModelBundle& bundle, const MachineConfig& config, CompileOptions opt = {}) {
  switch (bundle.kind) {
    case ModelKind::Mlp: return compile_mlp(bundle, config);
    case ModelKind::Svm:
    case ModelKind::Ocsvm: return compile_svm(bundle, config);
    case ModelKind::LstmTh: return compile_lstm_th(bundle, config, opt);
    case ModelKind::PedLstmVote: return compile_ped_lstm_vote(bundle, config, opt);
  }
  fail(ErrorCode::UnknownModelKind, "unknown model kind");
}

// ---- running compiled programs -------------------------------------------------

inline void load_compiled(Machine& m, const CompiledProgram& p) {
  m.set_luts(p.luts);
  m.load_program(p.to_image());
  m.reserve_sensor_buffer(p.sensor_base, p.sensor_bytes);
}

struct WindowRun {
  bool impostor = false;
  std::uint64_t cycles = 0;             // all invocations
  std::uint64_t max_invocation_cycles = 0;
  std::uint64_t invocations = 0;
  bool overflow = false;
};

/// Feeds one window to a loaded program: one invocation for whole-window
/// programs; for streaming ones prime, W-2 advances and a final deciding step.
inline WindowRun run_window(Machine& m, const CompiledProgram& p, std::span<const SensorReading> window) {
  if (window.size() != p.window)
    fail(ErrorCode::DimensionMismatch, "window has " + std::to_string(window.size()) + " readings, program expects " +
                                           std::to_string(p.window));
  WindowRun out;
  auto invoke = [&](std::span<const SensorReading> readings, std::uint32_t entry) {
    m.inject_sensor_window(readings, entry);
    const RunResult r = m.run();
    out.cycles += r.cycles;
    out.max_invocation_cycles = std::max(out.max_invocation_cycles, r.cycles);
    out.overflow = r.overflow;
    ++out.invocations;
  };
  if (p.streaming) {
    invoke(window.subspan(0, 1), p.entry("prime"));
    const std::uint32_t advance = p.entry("advance"), step = p.entry("step");
    for (std::size_t t = 1; t < window.size(); ++t) invoke(window.subspan(t, 1), t + 1 < window.size() ? advance : step);
  } else {
    invoke(window, p.entry("main"));
  }
  out.impostor = m.read_word(p.verdict_address).raw() != 0;
  return out;
}

/// Signed decision margin read back from the machine, positive meaning
/// impostor, in the same units as the reference margin of the model kind.
inline double hardware_margin(const Machine& m, const CompiledProgram& p) {
  auto word = [&](std::string_view name, std::uint32_t k = 0) {
    return m.read_word(p.symbol(name).address + 4 * k).to_real();
  };
  switch (p.kind) {
    case ModelKind::Mlp: return word("score", 1) - word("score", 0);
    case ModelKind::Svm:
    case ModelKind::Ocsvm: return word("score") - word("svm.neg_bias");
    case ModelKind::LstmTh: return (word("th.sum") - word("th.limit")) / static_cast<double>(p.window - 1);
    case ModelKind::PedLstmVote: return word("ped.votes") - p.symbol("ped.reject").words / 2.0;
  }
  return 0.0;
}

}  // namespace sid
