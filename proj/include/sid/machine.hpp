#pragma once

// Functional and timing model of the SID datapath.
//
// A macro-instruction is executed as the control FSM would: vector modes
// advance reg_length by N(track) elements per cycle; MVmul walks tiles of
// `width` rows by N(track) columns, one row per cycle, keeping the row partial
// sums in the scratchpad until the last column tile. Every instruction also pays
// a fixed five-cycle fill for the six-stage pipeline, and instructions do not
// overlap, so cycle counts are an upper bound.
//
// Partial sums are kept at full product precision (Q32.32) and rounded once
// when a result is written back. That makes every result independent of the
// track count: the same program yields bit-identical RAM for any N(track).

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sid/detail/bytes.hpp"
#include "sid/error.hpp"
#include "sid/fixed_point.hpp"
#include "sid/isa.hpp"
#include "sid/lut.hpp"
#include "sid/types.hpp"

namespace sid {

inline constexpr std::uint64_t kPipelineFillCycles = 5;

struct MachineConfig {
  std::uint32_t n_tracks = 4;
  std::uint32_t datapath_ram_bytes = 1'835'008;  // 1.75 MB
  std::uint32_t instruction_ram_bytes = 131'072;  // 128 KB
  std::uint32_t scratchpad_bytes = 256;
  double clock_hz = 115'000'000.0;
  /// Debug mode: scratchpad entries are invalidated at every instruction
  /// start and a read of an invalid entry raises ScratchpadReadBeforeWrite.
  bool poison_scratchpad = false;

  std::uint32_t scratchpad_words() const { return scratchpad_bytes / 4; }
  std::uint32_t instruction_capacity() const { return instruction_ram_bytes / kInstructionBytes; }

  void validate() const {
    if (n_tracks < 1) fail(ErrorCode::InvalidArgument, "n_tracks must be >= 1");
    for (auto [name, v] : {std::pair{"datapath_ram_bytes", datapath_ram_bytes},
                           std::pair{"instruction_ram_bytes", instruction_ram_bytes},
                           std::pair{"scratchpad_bytes", scratchpad_bytes}}) {
      if (v == 0 || v % 4 != 0) fail(ErrorCode::InvalidArgument, std::string(name) + " must be a positive multiple of 4");
    }
    if (!(clock_hz > 0)) fail(ErrorCode::InvalidArgument, "clock_hz must be positive");
  }
};

struct FsmRegisters {
  std::uint32_t reg_length = 0;
  std::uint32_t reg_width = 0;
  std::uint32_t reg_width_copy = 0;
};

struct MachineState {
  std::vector<std::uint8_t> datapath_ram;
  std::vector<std::uint8_t> instruction_ram;
  std::uint32_t instruction_count = 0;
  std::vector<WideAccumulator> scratchpad;
  std::vector<bool> scratchpad_valid;
  std::uint32_t pc = 0;  // instruction index
  FsmRegisters fsm;
  std::uint64_t cycles = 0;
  std::uint64_t retired = 0;
  bool halted = false;
  SaturationFlag overflow;
  std::uint32_t sensor_buffer_base = 0;
  std::uint32_t sensor_buffer_bytes = 0;
};

struct RunResult {
  std::uint64_t cycles = 0;
  std::uint64_t instructions = 0;
  bool overflow = false;  // sticky machine flag at the end of the run
  double clock_hz = 115'000'000.0;

  double wall_time_seconds() const { return static_cast<double>(cycles) / clock_hz; }

  std::string to_report() const {
    std::ostringstream os;
    os.precision(9);
    os << "cycles=" << cycles << "\n"
       << "instructions=" << instructions << "\n"
       << "wall_time_s=" << wall_time_seconds() << "\n"
       << "overflow=" << (overflow ? 1 : 0) << "\n";
    return os.str();
  }
};

/// Iterations the FSM needs for one instruction, excluding pipeline fill.
inline std::uint64_t iteration_count(const MacroInstruction& inst, std::uint32_t n_tracks) {
  if (inst.mode == OperationMode::Halt) return 0;
  const std::uint64_t column_steps = (inst.length + n_tracks - 1) / n_tracks;
  if (inst.mode == OperationMode::MVmul) return column_steps * inst.width;
  return column_steps;
}

inline std::uint64_t instruction_cycles(const MacroInstruction& inst, std::uint32_t n_tracks) {
  if (inst.mode == OperationMode::Halt) return 0;
  return iteration_count(inst, n_tracks) + kPipelineFillCycles;
}

class Machine {
 public:
  explicit Machine(MachineConfig config = {}) : config_(config) {
    config_.validate();
    state_.datapath_ram.assign(config_.datapath_ram_bytes, 0);
    state_.instruction_ram.assign(config_.instruction_ram_bytes, 0);
    state_.scratchpad.assign(config_.scratchpad_words(), 0);
    state_.scratchpad_valid.assign(config_.scratchpad_words(), false);
  }

  const MachineConfig& config() const { return config_; }
  const MachineState& state() const { return state_; }

  void set_luts(LutSet luts) {
    luts.sigmoid.validate();
    luts.tanh.validate();
    luts.exp.validate();
    luts_ = std::move(luts);
  }
  const LutSet& luts() const { return luts_; }

  void load_program(std::span<const MacroInstruction> program) {
    if (program.size() > config_.instruction_capacity())
      fail(ErrorCode::CapacityExceeded, std::to_string(program.size()) + " instructions exceed the " +
                                            std::to_string(config_.instruction_ram_bytes) + "-byte instruction RAM");
    std::vector<std::uint8_t> bytes;
    bytes.reserve(program.size() * kInstructionBytes);
    for (const auto& inst : program) put_word(bytes, encode(inst));
    std::fill(state_.instruction_ram.begin(), state_.instruction_ram.end(), 0);
    std::copy(bytes.begin(), bytes.end(), state_.instruction_ram.begin());
    state_.instruction_count = static_cast<std::uint32_t>(program.size());
    set_pc(0);
  }

  /// Loads the instruction stream and places the data segment at address 0.
  void load_program(const ProgramImage& image) {
    load_program(std::span<const MacroInstruction>(image.instructions));
    write_bytes(0, image.data);
  }

  void write_bytes(std::uint32_t addr, std::span<const std::uint8_t> bytes) {
    check_range(addr, bytes.size(), "write");
    std::copy(bytes.begin(), bytes.end(), state_.datapath_ram.begin() + addr);
  }

  void write_words(std::uint32_t addr, std::span<const FixedPoint32> words) {
    check_range(addr, words.size() * 4, "write");
    for (std::size_t i = 0; i < words.size(); ++i) store(addr + 4 * static_cast<std::uint32_t>(i), words[i]);
  }

  std::vector<FixedPoint32> read_words(std::uint32_t addr, std::size_t count) const {
    check_range(addr, count * 4, "read");
    std::vector<FixedPoint32> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = load(addr + 4 * static_cast<std::uint32_t>(i));
    return out;
  }

  FixedPoint32 read_word(std::uint32_t addr) const { return read_words(addr, 1).front(); }

  void reserve_sensor_buffer(std::uint32_t base, std::uint32_t bytes) {
    check_range(base, bytes, "sensor buffer");
    state_.sensor_buffer_base = base;
    state_.sensor_buffer_bytes = bytes;
  }

  /// Quantizes the readings into the sensor buffer and restarts the program
  /// at `entry_pc`, as a fresh hardware sensor input would.
  void inject_sensor_window(std::span<const SensorReading> window, std::uint32_t entry_pc = 0) {
    const std::uint64_t bytes = static_cast<std::uint64_t>(window.size()) * kChannels * 4;
    if (bytes > state_.sensor_buffer_bytes)
      fail(ErrorCode::BufferOverflow, std::to_string(window.size()) + " readings (" + std::to_string(bytes) +
                                          " bytes) exceed the " + std::to_string(state_.sensor_buffer_bytes) +
                                          "-byte sensor buffer");
    std::uint32_t addr = state_.sensor_buffer_base;
    for (const auto& reading : window) {
      for (double v : reading) {
        store(addr, quantize(v, &state_.overflow));
        addr += 4;
      }
    }
    set_pc(entry_pc);
  }

  void set_pc(std::uint32_t pc) {
    state_.pc = pc;
    state_.halted = false;
  }

  MacroInstruction fetch() const {
    if (state_.pc >= state_.instruction_count)
      fail(ErrorCode::PcOutOfRange, "pc " + std::to_string(state_.pc) + " beyond the " +
                                        std::to_string(state_.instruction_count) + " loaded instructions");
    return decode(get_word(state_.instruction_ram.data() + static_cast<std::size_t>(state_.pc) * kInstructionBytes));
  }

  /// Retires one macro-instruction. Returns false (and retires nothing) at Halt.
  bool step() {
    const MacroInstruction inst = fetch();
    if (inst.mode == OperationMode::Halt) {
      state_.halted = true;
      return false;
    }
    validate(inst);
    if (config_.poison_scratchpad) std::fill(state_.scratchpad_valid.begin(), state_.scratchpad_valid.end(), false);
    std::uint64_t iterations = 0;
    switch (operand_shape(inst.mode)) {
      case OperandShape::Binary:
      case OperandShape::Unary:
      case OperandShape::VectorScalar: iterations = execute_elementwise(inst); break;
      case OperandShape::Reduction: iterations = execute_reduction(inst); break;
      case OperandShape::MatrixVector: iterations = execute_mvmul(inst); break;
      case OperandShape::None: break;
    }
    state_.fsm = {};
    state_.cycles += iterations + kPipelineFillCycles;
    ++state_.retired;
    ++state_.pc;
    return true;
  }

  RunResult run(std::uint64_t max_cycles = std::numeric_limits<std::uint64_t>::max()) {
    const std::uint64_t start_cycles = state_.cycles;
    const std::uint64_t start_retired = state_.retired;
    for (;;) {
      const std::uint32_t pc = state_.pc;
      try {
        const MacroInstruction next = fetch();
        const std::uint64_t used = state_.cycles - start_cycles;
        if (used + instruction_cycles(next, config_.n_tracks) > max_cycles)
          fail(ErrorCode::CycleBudgetExceeded, "cycle budget of " + std::to_string(max_cycles) + " exhausted");
        if (!step()) break;
      } catch (const Error& e) {
        Error wrapped(e.code(), "pc " + std::to_string(pc) + " (instruction #" +
                                    std::to_string(state_.retired - start_retired) + "): " + e.what());
        wrapped.pc = pc;
        wrapped.instruction_index = state_.retired - start_retired;
        throw wrapped;
      }
    }
    RunResult r;
    r.cycles = state_.cycles - start_cycles;
    r.instructions = state_.retired - start_retired;
    r.overflow = state_.overflow.raised;
    r.clock_hz = config_.clock_hz;
    return r;
  }

 private:
  void check_range(std::uint64_t addr, std::uint64_t bytes, const char* what) const {
    if (addr + bytes > state_.datapath_ram.size())
      fail(ErrorCode::MemoryOutOfBounds, std::string(what) + " of " + std::to_string(bytes) + " bytes at " +
                                             detail_hex(addr) + " beyond datapath RAM");
  }

  static std::string detail_hex(std::uint64_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
  }

  FixedPoint32 load(std::uint32_t addr) const {
    return FixedPoint32::from_raw(detail::get_i32(state_.datapath_ram.data() + addr));
  }

  void store(std::uint32_t addr, FixedPoint32 v) {
    const auto u = static_cast<std::uint32_t>(v.raw());
    std::uint8_t* p = state_.datapath_ram.data() + addr;
    p[0] = static_cast<std::uint8_t>(u);
    p[1] = static_cast<std::uint8_t>(u >> 8);
    p[2] = static_cast<std::uint8_t>(u >> 16);
    p[3] = static_cast<std::uint8_t>(u >> 24);
  }

  WideAccumulator& scratch_read(std::uint32_t entry) {
    if (config_.poison_scratchpad && !state_.scratchpad_valid[entry])
      fail(ErrorCode::ScratchpadReadBeforeWrite, "scratchpad entry " + std::to_string(entry) + " read before write");
    return state_.scratchpad[entry];
  }

  void scratch_write(std::uint32_t entry, WideAccumulator v) {
    state_.scratchpad[entry] = v;
    state_.scratchpad_valid[entry] = true;
  }

  FixedPoint32 elementwise(OperationMode mode, FixedPoint32 x, FixedPoint32 y) {
    SaturationFlag* flag = &state_.overflow;
    switch (mode) {
      case OperationMode::Vadd: return add(x, y, flag);
      case OperationMode::Vsub: return sub(x, y, flag);
      case OperationMode::Vmul: return mul(x, y, flag);
      case OperationMode::Vsgt:
      case OperationMode::VSsgt: return x > y ? FixedPoint32::one() : FixedPoint32::zero();
      case OperationMode::Vsig: return luts_.sigmoid.evaluate(x, flag);
      case OperationMode::Vtanh: return luts_.tanh.evaluate(x, flag);
      case OperationMode::Vexp: return luts_.exp.evaluate(x, flag);
      default: fail(ErrorCode::UnknownMode, "mode is not element-wise");
    }
  }

  // Operands are latched in full before the first write-back, so a result
  // never depends on how the FSM splits the vector across tracks.
  std::uint64_t execute_elementwise(const MacroInstruction& inst) {
    const std::uint32_t n = config_.n_tracks;
    const OperandShape shape = operand_shape(inst.mode);
    const std::uint64_t bytes = static_cast<std::uint64_t>(inst.length) * 4;
    check_range(inst.addr_x, bytes, "x operand");
    if (shape == OperandShape::Binary) check_range(inst.addr_y, bytes, "y operand");
    check_range(inst.addr_z, bytes, "z operand");
    FixedPoint32 scalar;
    if (shape == OperandShape::VectorScalar) {
      check_range(inst.addr_y, 4, "scalar operand");
      scalar = load(inst.addr_y);
    }
    lanes_x_.resize(inst.length);
    lanes_y_.resize(inst.length);
    for (std::uint32_t k = 0; k < inst.length; ++k) {
      lanes_x_[k] = load(inst.addr_x + 4 * k);
      lanes_y_[k] = shape == OperandShape::Binary ? load(inst.addr_y + 4 * k) : scalar;
    }

    auto& fsm = state_.fsm;
    fsm.reg_length = inst.length;
    std::uint32_t index = 0;
    std::uint64_t iterations = 0;
    for (;;) {
      const std::uint32_t lanes = std::min(n, fsm.reg_length);
      for (std::uint32_t l = 0; l < lanes; ++l)
        store(inst.addr_z + 4 * (index + l), elementwise(inst.mode, lanes_x_[index + l], lanes_y_[index + l]));
      ++iterations;
      index += lanes;
      if (fsm.reg_length <= n) break;
      fsm.reg_length -= n;
    }
    return iterations;
  }

  std::uint64_t execute_reduction(const MacroInstruction& inst) {
    const std::uint32_t n = config_.n_tracks;
    check_range(inst.addr_x, static_cast<std::uint64_t>(inst.length) * 4, "x operand");
    check_range(inst.addr_z, 4, "z operand");
    const bool maxabs = inst.mode == OperationMode::Vmaxabs;

    auto& fsm = state_.fsm;
    fsm.reg_length = inst.length;
    std::uint32_t index = 0;
    std::uint64_t iterations = 0;
    for (;;) {
      const std::uint32_t lanes = std::min(n, fsm.reg_length);
      WideAccumulator partial = 0;
      for (std::uint32_t l = 0; l < lanes; ++l) {
        const FixedPoint32 x = load(inst.addr_x + 4 * (index + l));
        if (maxabs) {
          partial = std::max<WideAccumulator>(partial, x.raw() < 0 ? -static_cast<WideAccumulator>(x.raw()) : x.raw());
        } else {
          partial += wide_product(x, x);
        }
      }
      if (iterations == 0) {
        scratch_write(0, partial);
      } else {
        WideAccumulator& acc = scratch_read(0);
        scratch_write(0, maxabs ? std::max(acc, partial) : acc + partial);
      }
      ++iterations;
      index += lanes;
      if (fsm.reg_length <= n) break;
      fsm.reg_length -= n;
    }
    const WideAccumulator result = scratch_read(0);
    store(inst.addr_z, maxabs ? saturate(result, &state_.overflow) : round_product(result, &state_.overflow));
    return iterations;
  }

  std::uint64_t execute_mvmul(const MacroInstruction& inst) {
    const std::uint32_t n = config_.n_tracks;
    if (inst.width > config_.scratchpad_words())
      fail(ErrorCode::ScratchpadOverflow, "mvmul width " + std::to_string(inst.width) + " needs " +
                                              std::to_string(inst.width * 4) + " scratchpad bytes, have " +
                                              std::to_string(config_.scratchpad_bytes));
    const std::uint64_t cols = inst.length;
    const std::uint64_t rows = inst.width;
    check_range(inst.addr_x, rows * cols * 4, "matrix operand");
    check_range(inst.addr_y, cols * 4, "vector operand");
    check_range(inst.addr_z, rows * 4, "z operand");

    auto& fsm = state_.fsm;
    fsm.reg_length = inst.length;
    fsm.reg_width = fsm.reg_width_copy = inst.width;
    std::uint32_t col = 0;
    bool first_tile = true;
    std::uint64_t iterations = 0;
    for (;;) {
      const std::uint32_t lanes = std::min(n, fsm.reg_length);
      lanes_y_.resize(std::max<std::size_t>(lanes_y_.size(), lanes));
      for (std::uint32_t l = 0; l < lanes; ++l) lanes_y_[l] = load(inst.addr_y + 4 * (col + l));
      for (std::uint32_t r = 0; r < inst.width; ++r) {
        const std::uint32_t row_base = inst.addr_x + static_cast<std::uint32_t>(4 * (r * cols + col));
        WideAccumulator partial = 0;
        for (std::uint32_t l = 0; l < lanes; ++l) partial += wide_product(load(row_base + 4 * l), lanes_y_[l]);
        if (first_tile) {
          scratch_write(r, partial);
        } else {
          scratch_write(r, scratch_read(r) + partial);
        }
        ++iterations;
        --fsm.reg_width;
      }
      fsm.reg_width = fsm.reg_width_copy;
      col += lanes;
      first_tile = false;
      if (fsm.reg_length <= n) break;
      fsm.reg_length -= n;
    }
    for (std::uint32_t r = 0; r < inst.width; ++r)
      store(inst.addr_z + 4 * r, round_product(scratch_read(r), &state_.overflow));
    return iterations;
  }

  MachineConfig config_;
  MachineState state_;
  LutSet luts_;
  std::vector<FixedPoint32> lanes_x_;
  std::vector<FixedPoint32> lanes_y_;
};

}  // namespace sid
