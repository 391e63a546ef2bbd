#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sid/assembler.hpp"

namespace sid {
namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ErrorCode code_of(std::string_view src) {
  try {
    assemble(src);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::InvalidArgument;
}

TEST(Assembler, ResolvesLabelsToByteAddresses) {
  const auto p = assemble(R"(
.data
a: .space 64
b: .space 64
c: .space 64
.text
    vadd 64, a, b, c
)");
  ASSERT_EQ(p.image.instructions.size(), 1u);
  const auto& i = p.image.instructions[0];
  EXPECT_EQ(i, (MacroInstruction{OperationMode::Vadd, 64, 0, 0, 256, 512}));
  EXPECT_EQ(p.labels.at("c"), 512u);
  EXPECT_EQ(p.image.data.size(), 3u * 64 * 4);
}

TEST(Assembler, OperandExpressionsAndEqu) {
  const auto p = assemble(R"(
.data
x:  .word 1, 2, 3
    .equ out, 0x2000
.text
    vsig 2, x+4, out-8
    mvmul 3, 2, x, x+12-4, out
    .inst 3, 10, 7, 0, 4, 8
    halt
)");
  ASSERT_EQ(p.image.instructions.size(), 4u);
  EXPECT_EQ(p.image.instructions[0], (MacroInstruction{OperationMode::Vsig, 2, 0, 4, 0, 0x2000 - 8}));
  EXPECT_EQ(p.image.instructions[1], (MacroInstruction{OperationMode::MVmul, 3, 2, 0, 8, 0x2000}));
  EXPECT_EQ(p.image.instructions[2], (MacroInstruction{OperationMode::Vmul, 10, 7, 0, 4, 8}));
  EXPECT_EQ(p.image.instructions[3], MacroInstruction{});
}

TEST(Assembler, DataDirectives) {
  const auto p = assemble(R"(
.data
    .fixed 1.5, -0.25
    .word 0xFFFFFFFF, -2
    .org 24
tail: .fixed 2
)");
  ASSERT_EQ(p.image.data.size(), 28u);
  EXPECT_EQ(detail::get_i32(p.image.data.data() + 0), 0x18000);
  EXPECT_EQ(detail::get_i32(p.image.data.data() + 4), -0x4000);
  EXPECT_EQ(detail::get_i32(p.image.data.data() + 8), -1);
  EXPECT_EQ(detail::get_i32(p.image.data.data() + 12), -2);
  EXPECT_EQ(detail::get_i32(p.image.data.data() + 16), 0);
  EXPECT_EQ(p.labels.at("tail"), 24u);
}

TEST(Assembler, Errors) {
  EXPECT_EQ(code_of("vadd 4, nowhere, 0, 0\n"), ErrorCode::UndefinedLabel);
  EXPECT_EQ(code_of("vadd 4, 2, 0, 0\n"), ErrorCode::AlignmentError);
  EXPECT_EQ(code_of(".data\n .org 6\n"), ErrorCode::AlignmentError);
  EXPECT_EQ(code_of("vfft 4, 0, 0\n"), ErrorCode::ParseError);
  EXPECT_EQ(code_of("vadd 4, 0, 0\n"), ErrorCode::ParseError);
  EXPECT_EQ(code_of("vadd 0, 0, 0, 0\n"), ErrorCode::ParseError);
  EXPECT_EQ(code_of("vadd 16384, 0, 0, 0\n"), ErrorCode::FieldOverflow);
  EXPECT_EQ(code_of(".inst 15, 1, 0, 0, 0, 0\n"), ErrorCode::UnknownMode);
  EXPECT_EQ(code_of(".data\na: .space 1\na: .space 1\n"), ErrorCode::ParseError);
}

TEST(Assembler, ParseErrorsCarryLineNumbers) {
  try {
    assemble("\n\n  halt\n  bogus 1\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
}

TEST(Assembler, FiveStepKsProgramHasTwoNPlusThreeInstructions) {
  const auto p = assemble(slurp(std::filesystem::path(SID_PROGRAM_DIR) / "ks_five_step.sas"));
  const std::size_t n = 5;
  ASSERT_EQ(p.image.instructions.size(), n + n + 3 + 1);  // plus the terminating halt
  EXPECT_EQ(p.image.instructions.back().mode, OperationMode::Halt);
  for (std::size_t k = 0; k < n; ++k) EXPECT_EQ(p.image.instructions[k].mode, OperationMode::VSsgt);
  for (std::size_t k = n; k < 2 * n; ++k) EXPECT_EQ(p.image.instructions[k].mode, OperationMode::Vadd);
  EXPECT_EQ(p.image.instructions[2 * n].mode, OperationMode::Vsub);
  EXPECT_EQ(p.image.instructions[2 * n + 1].mode, OperationMode::Vmaxabs);
  EXPECT_EQ(p.image.instructions[2 * n + 2].mode, OperationMode::VSsgt);
}

TEST(Assembler, ShippedProgramsRoundTripThroughTheDisassembler) {
  std::size_t programs = 0;
  for (const auto& entry : std::filesystem::directory_iterator(SID_PROGRAM_DIR)) {
    if (entry.path().extension() != ".sas") continue;
    ++programs;
    const auto first = assemble(slurp(entry.path())).image;
    const std::string text = disassemble(first);
    const auto second = assemble(text).image;
    EXPECT_EQ(first, second) << entry.path();
    EXPECT_EQ(to_bytes(first), to_bytes(second)) << entry.path();
    EXPECT_EQ(disassemble(second), text) << entry.path();
  }
  EXPECT_GE(programs, 3u);
}

TEST(Assembler, NonCanonicalInstructionsSurviveDisassembly) {
  ProgramImage p;
  p.instructions = {MacroInstruction{OperationMode::Vsig, 5, 9, 4, 8, 12},
                    MacroInstruction{OperationMode::Halt, 1, 0, 0, 0, 0},
                    MacroInstruction{OperationMode::Vadd, 0, 0, 0, 0, 0}};
  EXPECT_EQ(assemble(disassemble(p)).image, p);
}

TEST(Assembler, OutputIsDeterministic) {
  const std::string src = slurp(std::filesystem::path(SID_PROGRAM_DIR) / "vector_ops.sas");
  EXPECT_EQ(to_bytes(assemble(src).image), to_bytes(assemble(src).image));
}

}  // namespace
}  // namespace sid
