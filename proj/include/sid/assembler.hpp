#pragma once

// Textual assembly for SID programs.
//
//   ; comment
//   .data                      data segment, loads at datapath address 0
//   bounds:  .fixed 0.5, 1.25  reals, quantized to Q16.16
//   raw:     .word 0x10000, -1 raw 32-bit words
//   buf:     .space 8          zero-filled words
//            .org 0x100        advance the data location (aligned, forward only)
//            .equ out, 0x2000  name an address outside the data segment
//   .text
//   vadd 64, a, b, c           binary:   length, x, y, z
//   vsig 64, a, c              unary:    length, x, z
//   vssgt 5, bounds, e+4, c    scalar:   length, x, scalar address, z
//   vmaxabs 5, d, out          reduce:   length, x, z
//   mvmul 8, 4, m, v, out      matrix:   length, width, matrix, vector, z
//   .inst 3, 10, 0, 0, 4, 8    raw fields: mode, length, width, x, y, z
//   halt
//
// Operands are sums/differences of labels and integer literals.

#include <cctype>
#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sid/fixed_point.hpp"
#include "sid/isa.hpp"

namespace sid {

struct AssembledProgram {
  ProgramImage image;
  std::map<std::string, std::uint32_t> labels;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_operands(std::string_view s) {
  std::vector<std::string_view> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == ',') {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

inline bool is_identifier(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_' || s[0] == '.')) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.')) return false;
  return true;
}

class AssemblerPass {
 public:
  [[noreturn]] void error(ErrorCode code, std::size_t line, const std::string& msg) const {
    fail(code, "line " + std::to_string(line) + ": " + msg);
  }

  std::optional<std::int64_t> parse_integer(std::string_view tok) const {
    bool negative = false;
    if (!tok.empty() && (tok[0] == '-' || tok[0] == '+')) {
      negative = tok[0] == '-';
      tok.remove_prefix(1);
    }
    int base = 10;
    if (tok.size() > 2 && tok[0] == '0' && (tok[1] == 'x' || tok[1] == 'X')) {
      base = 16;
      tok.remove_prefix(2);
    }
    if (tok.empty()) return std::nullopt;
    std::uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value, base);
    if (ec != std::errc{} || ptr != tok.data() + tok.size() || value > 0xFFFFFFFFull) return std::nullopt;
    return negative ? -static_cast<std::int64_t>(value) : static_cast<std::int64_t>(value);
  }

  std::int64_t evaluate(std::string_view expr, std::size_t line) const {
    expr = trim(expr);
    if (expr.empty()) error(ErrorCode::ParseError, line, "empty operand");
    std::int64_t total = 0;
    std::size_t i = 0;
    int sign = 1;
    bool expect_term = true;
    while (i < expr.size()) {
      const char c = expr[i];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++i;
        continue;
      }
      if (!expect_term && (c == '+' || c == '-')) {
        sign = c == '-' ? -1 : 1;
        expect_term = true;
        ++i;
        continue;
      }
      if (!expect_term) error(ErrorCode::ParseError, line, "malformed operand '" + std::string(expr) + "'");
      std::size_t j = i;
      if (expr[j] == '-' || expr[j] == '+') ++j;
      while (j < expr.size() && !std::isspace(static_cast<unsigned char>(expr[j])) && expr[j] != '+' &&
             expr[j] != '-')
        ++j;
      const std::string_view term = expr.substr(i, j - i);
      if (auto v = parse_integer(term)) {
        total += sign * *v;
      } else if (is_identifier(term)) {
        auto it = labels.find(std::string(term));
        if (it == labels.end()) error(ErrorCode::UndefinedLabel, line, "undefined label '" + std::string(term) + "'");
        total += sign * static_cast<std::int64_t>(it->second);
      } else {
        error(ErrorCode::ParseError, line, "bad operand term '" + std::string(term) + "'");
      }
      expect_term = false;
      i = j;
    }
    if (expect_term) error(ErrorCode::ParseError, line, "dangling operator in '" + std::string(expr) + "'");
    return total;
  }

  std::uint32_t field(std::string_view expr, std::size_t line, std::uint64_t max_value) const {
    const std::int64_t v = evaluate(expr, line);
    if (v < 0 || static_cast<std::uint64_t>(v) > max_value)
      error(ErrorCode::FieldOverflow, line, "operand '" + std::string(expr) + "' out of range");
    return static_cast<std::uint32_t>(v);
  }

  std::uint32_t address(std::string_view expr, std::size_t line) const {
    const std::uint32_t a = field(expr, line, 0xFFFFFFFFull);
    if (a & 3u) error(ErrorCode::AlignmentError, line, "address '" + std::string(expr) + "' not 4-byte aligned");
    return a;
  }

  std::map<std::string, std::uint32_t> labels;
};

}  // namespace detail

inline AssembledProgram assemble(std::string_view source) {
  struct TextLine {
    std::size_t number;
    std::string op;
    std::string operands;
  };
  detail::AssemblerPass pass;
  AssembledProgram result;
  std::vector<std::int32_t> data;
  std::vector<TextLine> text;
  bool in_data = false;

  auto define = [&](const std::string& name, std::uint32_t value, std::size_t line) {
    if (!detail::is_identifier(name) || name[0] == '.') pass.error(ErrorCode::ParseError, line, "bad label '" + name + "'");
    if (!pass.labels.emplace(name, value).second) pass.error(ErrorCode::ParseError, line, "duplicate label '" + name + "'");
  };

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= source.size()) {
    std::size_t end = source.find('\n', pos);
    if (end == std::string_view::npos) end = source.size();
    std::string_view line = source.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto c = line.find(';'); c != std::string_view::npos) line = line.substr(0, c);
    line = detail::trim(line);
    if (line.empty()) continue;

    if (auto colon = line.find(':'); colon != std::string_view::npos) {
      const std::string label(detail::trim(line.substr(0, colon)));
      if (!in_data) pass.error(ErrorCode::ParseError, line_no, "labels are only allowed in the .data section");
      define(label, static_cast<std::uint32_t>(data.size() * 4), line_no);
      line = detail::trim(line.substr(colon + 1));
      if (line.empty()) continue;
    }

    std::size_t sp = 0;
    while (sp < line.size() && !std::isspace(static_cast<unsigned char>(line[sp]))) ++sp;
    std::string op(line.substr(0, sp));
    for (auto& ch : op) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    const std::string_view rest = detail::trim(line.substr(sp));

    if (op == ".data") {
      in_data = true;
    } else if (op == ".text") {
      in_data = false;
    } else if (op == ".equ") {
      auto ops = detail::split_operands(rest);
      if (ops.size() != 2) pass.error(ErrorCode::ParseError, line_no, ".equ expects name, value");
      define(std::string(ops[0]), pass.field(ops[1], line_no, 0xFFFFFFFFull), line_no);
    } else if (op == ".word" || op == ".fixed" || op == ".space" || op == ".org") {
      if (!in_data) pass.error(ErrorCode::ParseError, line_no, op + " outside .data");
      auto ops = detail::split_operands(rest);
      if (ops.empty()) pass.error(ErrorCode::ParseError, line_no, op + " needs operands");
      if (op == ".word") {
        for (auto tok : ops) {
          auto v = pass.parse_integer(tok);
          if (!v || *v < std::numeric_limits<std::int32_t>::min())
            pass.error(ErrorCode::ParseError, line_no, "bad .word value '" + std::string(tok) + "'");
          data.push_back(static_cast<std::int32_t>(static_cast<std::uint32_t>(*v)));
        }
      } else if (op == ".fixed") {
        for (auto tok : ops) {
          std::istringstream is{std::string(tok)};
          double v = 0;
          if (!(is >> v) || !is.eof()) pass.error(ErrorCode::ParseError, line_no, "bad .fixed value '" + std::string(tok) + "'");
          data.push_back(quantize(v).raw());
        }
      } else if (op == ".space") {
        if (ops.size() != 1) pass.error(ErrorCode::ParseError, line_no, ".space expects a word count");
        auto n = pass.parse_integer(ops[0]);
        if (!n || *n < 0) pass.error(ErrorCode::ParseError, line_no, "bad .space count");
        data.resize(data.size() + static_cast<std::size_t>(*n), 0);
      } else {
        if (ops.size() != 1) pass.error(ErrorCode::ParseError, line_no, ".org expects an address");
        auto a = pass.parse_integer(ops[0]);
        if (!a || *a < 0) pass.error(ErrorCode::ParseError, line_no, "bad .org address");
        if (*a % 4) pass.error(ErrorCode::AlignmentError, line_no, ".org address not 4-byte aligned");
        const auto words = static_cast<std::size_t>(*a / 4);
        if (words < data.size()) pass.error(ErrorCode::ParseError, line_no, ".org moves backwards");
        data.resize(words, 0);
      }
    } else {
      if (in_data) pass.error(ErrorCode::ParseError, line_no, "instruction '" + op + "' inside .data");
      text.push_back({line_no, op, std::string(rest)});
    }
  }

  for (const auto& t : text) {
    const auto ops = detail::split_operands(t.operands);
    auto expect = [&](std::size_t n) {
      if (ops.size() != n)
        pass.error(ErrorCode::ParseError, t.number,
                   t.op + " expects " + std::to_string(n) + " operands, got " + std::to_string(ops.size()));
    };
    MacroInstruction inst;
    if (t.op == ".inst") {
      expect(6);
      inst.mode = static_cast<OperationMode>(pass.field(ops[0], t.number, 0xF));
      if (static_cast<std::uint32_t>(inst.mode) >= kModeCount)
        pass.error(ErrorCode::UnknownMode, t.number, "unassigned mode " + std::string(ops[0]));
      inst.length = pass.field(ops[1], t.number, kMaxLength);
      inst.width = pass.field(ops[2], t.number, kMaxWidth);
      inst.addr_x = pass.address(ops[3], t.number);
      inst.addr_y = pass.address(ops[4], t.number);
      inst.addr_z = pass.address(ops[5], t.number);
    } else {
      auto mode = mode_from_mnemonic(t.op);
      if (!mode) pass.error(ErrorCode::ParseError, t.number, "unknown mnemonic '" + t.op + "'");
      inst.mode = *mode;
      switch (operand_shape(*mode)) {
        case OperandShape::None:
          expect(0);
          break;
        case OperandShape::Binary:
        case OperandShape::VectorScalar:
          expect(4);
          inst.length = pass.field(ops[0], t.number, kMaxLength);
          inst.addr_x = pass.address(ops[1], t.number);
          inst.addr_y = pass.address(ops[2], t.number);
          inst.addr_z = pass.address(ops[3], t.number);
          break;
        case OperandShape::Unary:
        case OperandShape::Reduction:
          expect(3);
          inst.length = pass.field(ops[0], t.number, kMaxLength);
          inst.addr_x = pass.address(ops[1], t.number);
          inst.addr_z = pass.address(ops[2], t.number);
          break;
        case OperandShape::MatrixVector:
          expect(5);
          inst.length = pass.field(ops[0], t.number, kMaxLength);
          inst.width = pass.field(ops[1], t.number, kMaxWidth);
          inst.addr_x = pass.address(ops[2], t.number);
          inst.addr_y = pass.address(ops[3], t.number);
          inst.addr_z = pass.address(ops[4], t.number);
          break;
      }
      if (inst.mode != OperationMode::Halt && inst.length == 0)
        pass.error(ErrorCode::ParseError, t.number, t.op + " with length 0");
      if (inst.mode == OperationMode::MVmul && inst.width == 0)
        pass.error(ErrorCode::ParseError, t.number, "mvmul with width 0");
    }
    result.image.instructions.push_back(inst);
  }

  result.image.data.reserve(data.size() * 4);
  for (auto w : data) detail::put_i32(result.image.data, w);
  result.labels = std::move(pass.labels);
  return result;
}

namespace detail {

inline std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

/// True when the compact mnemonic form loses no field of the instruction.
inline bool has_canonical_form(const MacroInstruction& i) {
  switch (operand_shape(i.mode)) {
    case OperandShape::None: return i.length == 0 && i.width == 0 && i.addr_x == 0 && i.addr_y == 0 && i.addr_z == 0;
    case OperandShape::Binary:
    case OperandShape::VectorScalar: return i.width == 0 && i.length > 0;
    case OperandShape::Unary:
    case OperandShape::Reduction: return i.width == 0 && i.addr_y == 0 && i.length > 0;
    case OperandShape::MatrixVector: return i.length > 0 && i.width > 0;
  }
  return false;
}

}  // namespace detail

inline std::string disassemble(const MacroInstruction& i) {
  using detail::hex32;
  std::string out;
  if (!detail::has_canonical_form(i) || ((i.addr_x | i.addr_y | i.addr_z) & 3u)) {
    return ".inst " + std::to_string(static_cast<unsigned>(i.mode)) + ", " + std::to_string(i.length) + ", " +
           std::to_string(i.width) + ", " + std::to_string(i.addr_x) + ", " + std::to_string(i.addr_y) + ", " +
           std::to_string(i.addr_z);
  }
  out = std::string(mnemonic(i.mode));
  switch (operand_shape(i.mode)) {
    case OperandShape::None: break;
    case OperandShape::Binary:
    case OperandShape::VectorScalar:
      out += " " + std::to_string(i.length) + ", " + hex32(i.addr_x) + ", " + hex32(i.addr_y) + ", " + hex32(i.addr_z);
      break;
    case OperandShape::Unary:
    case OperandShape::Reduction:
      out += " " + std::to_string(i.length) + ", " + hex32(i.addr_x) + ", " + hex32(i.addr_z);
      break;
    case OperandShape::MatrixVector:
      out += " " + std::to_string(i.length) + ", " + std::to_string(i.width) + ", " + hex32(i.addr_x) + ", " +
             hex32(i.addr_y) + ", " + hex32(i.addr_z);
      break;
  }
  return out;
}

inline std::string disassemble(const ProgramImage& program) {
  std::ostringstream os;
  os << "; " << program.instructions.size() << " instructions, " << program.data.size() << " data bytes\n";
  os << ".text\n";
  for (const auto& inst : program.instructions) os << "    " << disassemble(inst) << "\n";
  if (program.data.size() % 4 != 0) fail(ErrorCode::CorruptFile, "data segment length not a multiple of 4");
  if (!program.data.empty()) {
    os << ".data\n";
    const std::size_t words = program.data.size() / 4;
    for (std::size_t w = 0; w < words; w += 8) {
      os << "    .word ";
      for (std::size_t k = w; k < std::min(words, w + 8); ++k) {
        if (k != w) os << ", ";
        os << detail::hex32(detail::get_u32(program.data.data() + 4 * k));
      }
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace sid
