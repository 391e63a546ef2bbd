#pragma once

// Macro-instruction set: 128-bit words, one per whole vector/matrix operation.
//
//   [127:124] mode   [123:110] length   [109:96] width
//   [95:64] addr_x   [63:32] addr_y     [31:0] addr_z

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sid/detail/bytes.hpp"
#include "sid/error.hpp"

namespace sid {

enum class OperationMode : std::uint8_t {
  Halt = 0,
  Vadd = 1,
  Vsub = 2,
  Vmul = 3,
  Vsgt = 4,
  Vsig = 5,
  Vtanh = 6,
  Vexp = 7,
  MVmul = 8,
  VSsgt = 9,
  Vmaxabs = 10,
  Vsqnorm = 11,
};

inline constexpr std::uint32_t kModeCount = 12;
inline constexpr std::uint32_t kMaxLength = (1u << 14) - 1;
inline constexpr std::uint32_t kMaxWidth = (1u << 14) - 1;
inline constexpr std::uint32_t kInstructionBytes = 16;

constexpr std::string_view mnemonic(OperationMode mode) {
  switch (mode) {
    case OperationMode::Halt: return "halt";
    case OperationMode::Vadd: return "vadd";
    case OperationMode::Vsub: return "vsub";
    case OperationMode::Vmul: return "vmul";
    case OperationMode::Vsgt: return "vsgt";
    case OperationMode::Vsig: return "vsig";
    case OperationMode::Vtanh: return "vtanh";
    case OperationMode::Vexp: return "vexp";
    case OperationMode::MVmul: return "mvmul";
    case OperationMode::VSsgt: return "vssgt";
    case OperationMode::Vmaxabs: return "vmaxabs";
    case OperationMode::Vsqnorm: return "vsqnorm";
  }
  return "?";
}

inline std::optional<OperationMode> mode_from_mnemonic(std::string_view name) {
  for (std::uint32_t m = 0; m < kModeCount; ++m) {
    const auto mode = static_cast<OperationMode>(m);
    if (mnemonic(mode) == name) return mode;
  }
  return std::nullopt;
}

/// Operand shape of each mode; drives validation, assembly and timing.
enum class OperandShape {
  None,         // halt
  Binary,       // z[i] = x[i] op y[i]
  Unary,        // z[i] = f(x[i])
  VectorScalar, // z[i] = x[i] > *y
  Reduction,    // *z = reduce(x)
  MatrixVector, // z = M(x) * y
};

constexpr OperandShape operand_shape(OperationMode mode) {
  switch (mode) {
    case OperationMode::Halt: return OperandShape::None;
    case OperationMode::Vadd:
    case OperationMode::Vsub:
    case OperationMode::Vmul:
    case OperationMode::Vsgt: return OperandShape::Binary;
    case OperationMode::Vsig:
    case OperationMode::Vtanh:
    case OperationMode::Vexp: return OperandShape::Unary;
    case OperationMode::VSsgt: return OperandShape::VectorScalar;
    case OperationMode::Vmaxabs:
    case OperationMode::Vsqnorm: return OperandShape::Reduction;
    case OperationMode::MVmul: return OperandShape::MatrixVector;
  }
  return OperandShape::None;
}

struct Word128 {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;
  friend bool operator==(const Word128&, const Word128&) = default;
};

struct MacroInstruction {
  OperationMode mode = OperationMode::Halt;
  std::uint32_t length = 0;
  std::uint32_t width = 0;
  std::uint32_t addr_x = 0;
  std::uint32_t addr_y = 0;
  std::uint32_t addr_z = 0;

  friend bool operator==(const MacroInstruction&, const MacroInstruction&) = default;
};

inline Word128 encode(const MacroInstruction& inst) {
  const auto mode = static_cast<std::uint32_t>(inst.mode);
  if (mode > 0xF) fail(ErrorCode::FieldOverflow, "mode " + std::to_string(mode) + " exceeds 4 bits");
  if (inst.length > kMaxLength)
    fail(ErrorCode::FieldOverflow, "length " + std::to_string(inst.length) + " exceeds 14 bits");
  if (inst.width > kMaxWidth)
    fail(ErrorCode::FieldOverflow, "width " + std::to_string(inst.width) + " exceeds 14 bits");
  Word128 w;
  w.hi = (static_cast<std::uint64_t>(mode) << 60) | (static_cast<std::uint64_t>(inst.length) << 46) |
         (static_cast<std::uint64_t>(inst.width) << 32) | inst.addr_x;
  w.lo = (static_cast<std::uint64_t>(inst.addr_y) << 32) | inst.addr_z;
  return w;
}

inline MacroInstruction decode(const Word128& w) {
  const auto mode = static_cast<std::uint32_t>(w.hi >> 60);
  if (mode >= kModeCount) fail(ErrorCode::UnknownMode, "unassigned mode nibble " + std::to_string(mode));
  MacroInstruction inst;
  inst.mode = static_cast<OperationMode>(mode);
  inst.length = static_cast<std::uint32_t>((w.hi >> 46) & kMaxLength);
  inst.width = static_cast<std::uint32_t>((w.hi >> 32) & kMaxWidth);
  inst.addr_x = static_cast<std::uint32_t>(w.hi);
  inst.addr_y = static_cast<std::uint32_t>(w.lo >> 32);
  inst.addr_z = static_cast<std::uint32_t>(w.lo);
  return inst;
}

/// Checks the issue-time invariants: nonzero length, MVmul width, alignment.
inline void validate(const MacroInstruction& inst) {
  if (inst.mode == OperationMode::Halt) return;
  if (inst.length == 0) fail(ErrorCode::InvalidArgument, std::string(mnemonic(inst.mode)) + " with length 0");
  if (inst.mode == OperationMode::MVmul && inst.width == 0)
    fail(ErrorCode::InvalidArgument, "mvmul with width 0");
  if ((inst.addr_x | inst.addr_y | inst.addr_z) & 3u)
    fail(ErrorCode::AlignmentError, std::string(mnemonic(inst.mode)) + " operand address not 4-byte aligned");
}

inline void put_word(std::vector<std::uint8_t>& out, const Word128& w) {
  detail::put_u64(out, w.lo);
  detail::put_u64(out, w.hi);
}

inline Word128 get_word(const std::uint8_t* p) { return Word128{detail::get_u64(p + 8), detail::get_u64(p)}; }

// Binary program file: 16-byte header ("SIDP", version, instruction count,
// data-segment length in bytes), the instruction words, then the data segment
// which loads at datapath address 0.

inline constexpr std::array<std::uint8_t, 4> kProgramMagic = {'S', 'I', 'D', 'P'};
inline constexpr std::uint32_t kProgramVersion = 1;

struct ProgramImage {
  std::vector<MacroInstruction> instructions;
  std::vector<std::uint8_t> data;

  friend bool operator==(const ProgramImage&, const ProgramImage&) = default;
};

inline std::vector<std::uint8_t> to_bytes(const ProgramImage& program) {
  std::vector<std::uint8_t> out(kProgramMagic.begin(), kProgramMagic.end());
  detail::put_u32(out, kProgramVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(program.instructions.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(program.data.size()));
  for (const auto& inst : program.instructions) put_word(out, encode(inst));
  out.insert(out.end(), program.data.begin(), program.data.end());
  return out;
}

inline ProgramImage program_from_bytes(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader in(bytes, "program");
  const std::uint8_t* magic = in.take(4);
  if (!std::equal(kProgramMagic.begin(), kProgramMagic.end(), magic))
    fail(ErrorCode::CorruptFile, "program: bad magic");
  const std::uint32_t version = in.u32();
  if (version != kProgramVersion)
    fail(ErrorCode::UnsupportedVersion, "program: version " + std::to_string(version));
  const std::uint32_t count = in.u32();
  const std::uint32_t data_len = in.u32();
  ProgramImage program;
  program.instructions.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) program.instructions.push_back(decode(get_word(in.take(16))));
  const std::uint8_t* data = in.take(data_len);
  program.data.assign(data, data + data_len);
  if (in.remaining() != 0) fail(ErrorCode::CorruptFile, "program: trailing bytes after data segment");
  return program;
}

}  // namespace sid
