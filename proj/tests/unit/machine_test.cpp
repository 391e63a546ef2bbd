#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "sid/assembler.hpp"
#include "sid/machine.hpp"

namespace sid {
namespace {

// ---- independent scalar oracle -------------------------------------------------
// Works on exact integers: products are formed in __int128, rounding to the
// Q16.16 grid uses floor division by 2^16 with explicit tie handling.

std::int32_t clamp32(__int128 v) {
  if (v > INT32_MAX) return INT32_MAX;
  if (v < INT32_MIN) return INT32_MIN;
  return static_cast<std::int32_t>(v);
}

std::int32_t round_q32(__int128 p) {
  __int128 q = p / 65536;
  __int128 r = p % 65536;
  if (r < 0) {
    q -= 1;
    r += 65536;
  }
  if (r > 32768 || (r == 32768 && (q & 1) != 0)) q += 1;
  return clamp32(q);
}

std::int32_t oracle_lut(const LutTable& t, std::int32_t x) {
  std::int32_t k, b;
  if (x < t.lo.raw()) {
    k = t.below_slope.raw();
    b = t.below_intercept.raw();
  } else if (x >= t.hi.raw()) {
    k = t.above_slope.raw();
    b = t.above_intercept.raw();
  } else {
    const double seg_width = (static_cast<double>(t.hi.raw()) - t.lo.raw()) / static_cast<double>(t.segments());
    const auto s = static_cast<std::size_t>(std::floor((static_cast<double>(x) - t.lo.raw()) / seg_width));
    k = t.slope[s].raw();
    b = t.intercept[s].raw();
  }
  return round_q32(static_cast<__int128>(k) * x + static_cast<__int128>(b) * 65536);
}

using Ram = std::vector<std::int32_t>;  // word-addressed view of datapath RAM

void oracle_execute(const MacroInstruction& i, Ram& ram, const LutSet& luts) {
  const std::size_t x = i.addr_x / 4, y = i.addr_y / 4, z = i.addr_z / 4;
  const std::size_t L = i.length;
  std::vector<std::int32_t> out;
  switch (i.mode) {
    case OperationMode::Vadd:
    case OperationMode::Vsub:
    case OperationMode::Vmul:
    case OperationMode::Vsgt:
    case OperationMode::VSsgt:
    case OperationMode::Vsig:
    case OperationMode::Vtanh:
    case OperationMode::Vexp:
      for (std::size_t k = 0; k < L; ++k) {
        const __int128 a = ram[x + k];
        const __int128 b = i.mode == OperationMode::VSsgt ? ram[y] : ram[y + k];
        std::int32_t r = 0;
        switch (i.mode) {
          case OperationMode::Vadd: r = clamp32(a + b); break;
          case OperationMode::Vsub: r = clamp32(a - b); break;
          case OperationMode::Vmul: r = round_q32(a * b); break;
          case OperationMode::Vsgt:
          case OperationMode::VSsgt: r = a > b ? 65536 : 0; break;
          case OperationMode::Vsig: r = oracle_lut(luts.sigmoid, ram[x + k]); break;
          case OperationMode::Vtanh: r = oracle_lut(luts.tanh, ram[x + k]); break;
          case OperationMode::Vexp: r = oracle_lut(luts.exp, ram[x + k]); break;
          default: break;
        }
        out.push_back(r);
      }
      break;
    case OperationMode::Vmaxabs: {
      __int128 m = 0;
      for (std::size_t k = 0; k < L; ++k) m = std::max<__int128>(m, ram[x + k] < 0 ? -static_cast<__int128>(ram[x + k]) : ram[x + k]);
      out.push_back(clamp32(m));
      break;
    }
    case OperationMode::Vsqnorm: {
      __int128 s = 0;
      for (std::size_t k = 0; k < L; ++k) s += static_cast<__int128>(ram[x + k]) * ram[x + k];
      out.push_back(round_q32(s));
      break;
    }
    case OperationMode::MVmul:
      for (std::size_t r = 0; r < i.width; ++r) {
        __int128 s = 0;
        for (std::size_t c = 0; c < L; ++c) s += static_cast<__int128>(ram[x + r * L + c]) * ram[y + c];
        out.push_back(round_q32(s));
      }
      break;
    case OperationMode::Halt: break;
  }
  for (std::size_t k = 0; k < out.size(); ++k) ram[z + k] = out[k];
}

// ---- helpers -------------------------------------------------------------------

MachineConfig small_config(std::uint32_t tracks) {
  MachineConfig c;
  c.n_tracks = tracks;
  c.datapath_ram_bytes = 64 * 1024;
  return c;
}

Ram snapshot(const Machine& m, std::size_t words) {
  Ram r(words);
  const auto w = m.read_words(0, words);
  for (std::size_t k = 0; k < words; ++k) r[k] = w[k].raw();
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ErrorCode run_code(Machine& m, std::uint64_t budget = UINT64_MAX) {
  try {
    m.run(budget);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::InvalidArgument;
}

// Random program over a 3 KiB working area; values stay moderate so LUT inputs
// cover both the interior and the clamped tails.
std::vector<MacroInstruction> random_program(std::mt19937_64& rng, std::size_t count) {
  std::vector<MacroInstruction> prog;
  auto addr = [&](std::uint32_t words) { return static_cast<std::uint32_t>(4 * (rng() % (768 - words))); };
  for (std::size_t n = 0; n < count; ++n) {
    MacroInstruction i;
    i.mode = static_cast<OperationMode>(1 + rng() % (kModeCount - 1));
    if (i.mode == OperationMode::MVmul) {
      i.length = 1 + rng() % 24;
      i.width = 1 + rng() % 20;
      i.addr_x = addr(i.length * i.width);
      i.addr_y = addr(i.length);
      i.addr_z = addr(i.width);
    } else {
      i.length = 1 + rng() % 40;
      i.addr_x = addr(i.length);
      i.addr_y = addr(i.length);
      i.addr_z = addr(i.length);
    }
    prog.push_back(i);
  }
  prog.push_back(MacroInstruction{});
  return prog;
}

std::vector<FixedPoint32> random_words(std::mt19937_64& rng, std::size_t count) {
  std::vector<FixedPoint32> w(count);
  std::uniform_real_distribution<double> d(-12.0, 12.0);
  for (auto& v : w) v = quantize(d(rng));
  return w;
}

// ---- timing --------------------------------------------------------------------

TEST(Machine, VectorAddTiming) {
  Machine m(small_config(4));
  const std::vector<MacroInstruction> prog = {{OperationMode::Vadd, 10, 0, 0, 40, 80}, {}};
  m.load_program(prog);
  const auto r = m.run();
  EXPECT_EQ(iteration_count(prog[0], 4), 3u);
  EXPECT_EQ(r.cycles, 3u + kPipelineFillCycles);
  EXPECT_EQ(r.instructions, 1u);
}

TEST(Machine, MatrixVectorTiming) {
  const MacroInstruction mv{OperationMode::MVmul, 10, 7, 0, 400, 800};
  EXPECT_EQ(iteration_count(mv, 4), 7u * 3u);
  EXPECT_EQ(instruction_cycles(mv, 4), 21u + 5u);
  EXPECT_EQ(iteration_count(mv, 1), 70u);
}

TEST(Machine, HaltOnlyProgramCostsNothing) {
  Machine m(small_config(4));
  const std::vector<MacroInstruction> prog = {{}};
  m.load_program(prog);
  const auto r = m.run();
  EXPECT_EQ(r.cycles, 0u);
  EXPECT_EQ(r.instructions, 0u);
  EXPECT_TRUE(m.state().halted);
}

TEST(Machine, ReportLines) {
  Machine m(small_config(2));
  const std::vector<MacroInstruction> prog = {{OperationMode::Vadd, 4, 0, 0, 16, 32}, {}};
  m.load_program(prog);
  const auto r = m.run();
  const std::string text = r.to_report();
  EXPECT_NE(text.find("cycles=7\n"), std::string::npos) << text;
  EXPECT_NE(text.find("instructions=1\n"), std::string::npos);
  EXPECT_NE(text.find("overflow=0\n"), std::string::npos);
  EXPECT_DOUBLE_EQ(r.wall_time_seconds(), 7.0 / 115e6);
}

// ---- functional ----------------------------------------------------------------

TEST(Machine, MatrixVectorMatchesDoubleOracle) {
  Machine m(small_config(4));
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  double a[8][8], v[8];
  std::vector<FixedPoint32> words;
  for (auto& row : a)
    for (double& e : row) {
      e = dequantize(quantize(d(rng)));
      words.push_back(quantize(e));
    }
  for (double& e : v) {
    e = dequantize(quantize(d(rng)));
    words.push_back(quantize(e));
  }
  m.write_words(0, words);
  const std::vector<MacroInstruction> prog = {{OperationMode::MVmul, 8, 8, 0, 256, 512}, {}};
  m.load_program(prog);
  m.run();
  for (int r = 0; r < 8; ++r) {
    double expect = 0.0;
    for (int c = 0; c < 8; ++c) expect += a[r][c] * v[c];
    EXPECT_NEAR(m.read_word(512 + 4 * r).to_real(), expect, std::ldexp(1.0, -16)) << r;
  }
}

TEST(Machine, EveryModeMatchesTheScalarOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    Machine m(small_config(1 + trial % 6));
    const auto init = random_words(rng, 768);
    const auto prog = random_program(rng, 60);
    m.write_words(0, init);
    m.load_program(prog);
    m.run();

    Ram ram(768);
    for (std::size_t k = 0; k < ram.size(); ++k) ram[k] = init[k].raw();
    for (const auto& i : prog) oracle_execute(i, ram, m.luts());
    ASSERT_EQ(snapshot(m, 768), ram) << "trial " << trial;
  }
}

TEST(Machine, ResultsAreIndependentOfTrackCount) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto init = random_words(rng, 768);
    const auto prog = random_program(rng, 80);
    Ram reference;
    for (std::uint32_t tracks : {1u, 2u, 3u, 4u, 8u}) {
      Machine m(small_config(tracks));
      m.write_words(0, init);
      m.load_program(prog);
      m.run();
      const Ram ram = snapshot(m, 768);
      if (reference.empty()) reference = ram;
      ASSERT_EQ(ram, reference) << "trial " << trial << " tracks " << tracks;
    }
  }
}

TEST(Machine, MoreTracksNeverCostMoreCycles) {
  std::mt19937_64 rng(12);
  const auto prog = random_program(rng, 100);
  std::uint64_t prev = UINT64_MAX;
  for (std::uint32_t tracks : {1u, 2u, 4u, 8u}) {
    Machine m(small_config(tracks));
    m.load_program(prog);
    const auto cycles = m.run().cycles;
    EXPECT_LE(cycles, prev);
    prev = cycles;
  }
}

TEST(Machine, ReductionProperties) {
  Machine m(small_config(4));
  const std::vector<FixedPoint32> v = {quantize(0.5), quantize(-3.25), quantize(2.0), quantize(-0.125), quantize(3.0)};
  m.write_words(0, v);
  const std::vector<MacroInstruction> prog = {
      {OperationMode::Vmaxabs, 5, 0, 0, 0, 100}, {OperationMode::Vsqnorm, 5, 0, 0, 0, 104}, {}};
  m.load_program(prog);
  m.run();
  EXPECT_EQ(m.read_word(100).to_real(), 3.25);
  EXPECT_EQ(m.read_word(104).to_real(), 0.25 + 10.5625 + 4.0 + 0.015625 + 9.0);
}

TEST(Machine, WideAccumulationKeepsLongReductionsAccurate) {
  Machine m(MachineConfig{});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<FixedPoint32> x(1000);
  double norm = 0.0, dot = 0.0;
  for (auto& e : x) {
    e = quantize(d(rng));
    norm += e.to_real() * e.to_real();
    dot += e.to_real() * e.to_real();
  }
  m.write_words(0, x);
  const std::vector<MacroInstruction> prog = {{OperationMode::Vsqnorm, 1000, 0, 0, 0, 8000},
                                              {OperationMode::MVmul, 1000, 1, 0, 0, 8004}, {}};
  m.load_program(prog);
  m.run();
  EXPECT_NEAR(m.read_word(8000).to_real(), norm, std::ldexp(1.0, -15));
  EXPECT_NEAR(m.read_word(8004).to_real(), dot, std::ldexp(1.0, -15));
}

TEST(Machine, SaturationRaisesTheStickyFlag) {
  Machine m(small_config(4));
  m.write_words(0, std::vector<FixedPoint32>{quantize(30000.0), quantize(30000.0)});
  const std::vector<MacroInstruction> prog = {{OperationMode::Vadd, 1, 0, 0, 4, 8}, {OperationMode::Vsub, 1, 0, 0, 0, 12}, {}};
  m.load_program(prog);
  const auto r = m.run();
  EXPECT_TRUE(r.overflow);
  EXPECT_EQ(m.read_word(8), FixedPoint32::max());
  EXPECT_NE(r.to_report().find("overflow=1"), std::string::npos);
}

TEST(Machine, InPlaceOperandsReadBeforeWrite) {
  // z overlapping x shifted by one word: each iteration reads all lanes first.
  Machine m(small_config(1));
  m.write_words(0, std::vector<FixedPoint32>{quantize(1), quantize(2), quantize(3), quantize(4)});
  const std::vector<MacroInstruction> prog = {{OperationMode::Vadd, 3, 0, 4, 4, 0}, {}};
  m.load_program(prog);
  m.run();
  // Operands are latched before write-back, so the overlap does not feed results forward.
  EXPECT_EQ(m.read_word(0).to_real(), 4.0);
  EXPECT_EQ(m.read_word(4).to_real(), 6.0);
  EXPECT_EQ(m.read_word(8).to_real(), 8.0);
}

TEST(Machine, ShippedProgramsRun) {
  const auto five = assemble(slurp(std::filesystem::path(SID_PROGRAM_DIR) / "ks_five_step.sas"));
  Machine m(small_config(4));
  m.load_program(five.image);
  const auto r = m.run();
  EXPECT_EQ(r.instructions, 13u);
  EXPECT_EQ(m.read_word(five.labels.at("verdict")), FixedPoint32::zero());
  EXPECT_EQ(m.read_word(five.labels.at("stat")), FixedPoint32::one());

  const auto mv = assemble(slurp(std::filesystem::path(SID_PROGRAM_DIR) / "mvmul_tiles.sas"));
  Machine m2(small_config(4));
  m2.load_program(mv.image);
  m2.run();
  Ram ram(mv.image.data.size() / 4);
  for (std::size_t k = 0; k < ram.size(); ++k) ram[k] = detail::get_i32(mv.image.data.data() + 4 * k);
  for (const auto& i : mv.image.instructions) oracle_execute(i, ram, m2.luts());
  EXPECT_EQ(snapshot(m2, ram.size()), ram);
}

// ---- sensor input --------------------------------------------------------------

TEST(Machine, SensorInjectionQuantizesTheWindow) {
  Machine m(small_config(4));
  m.reserve_sensor_buffer(1024, 64 * kChannels * 4);
  Window w(64);
  for (std::size_t t = 0; t < w.size(); ++t)
    for (std::size_t c = 0; c < kChannels; ++c) w[t][c] = 0.01 * static_cast<double>(t) - 0.1 * static_cast<double>(c);
  m.inject_sensor_window(w);
  EXPECT_EQ(64 * kChannels * 4, 1536u);
  for (std::size_t t = 0; t < w.size(); ++t)
    for (std::size_t c = 0; c < kChannels; ++c)
      ASSERT_EQ(m.read_word(static_cast<std::uint32_t>(1024 + 4 * (t * kChannels + c))), quantize(w[t][c]));
  EXPECT_EQ(m.read_word(1024 + 1536), FixedPoint32::zero());
  EXPECT_EQ(m.state().pc, 0u);
}

TEST(Machine, ZeroWindowWritesZeros) {
  Machine m(small_config(4));
  m.write_words(0, std::vector<FixedPoint32>(384, FixedPoint32::one()));
  m.reserve_sensor_buffer(0, 1536);
  m.inject_sensor_window(Window(64, SensorReading{}));
  for (const auto& v : m.read_words(0, 384)) ASSERT_EQ(v, FixedPoint32::zero());
}

TEST(Machine, OversizedWindowIsRejected) {
  Machine m(small_config(4));
  m.reserve_sensor_buffer(0, 1536);
  try {
    m.inject_sensor_window(Window(65));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BufferOverflow);
  }
}

// ---- errors --------------------------------------------------------------------

TEST(Machine, OutOfBoundsAccessIsReportedWithPc) {
  Machine m(small_config(4));
  const std::vector<MacroInstruction> prog = {
      {OperationMode::Vadd, 4, 0, 0, 16, 32}, {OperationMode::Vadd, 16, 0, 64 * 1024 - 32, 0, 0}, {}};
  m.load_program(prog);
  try {
    m.run();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MemoryOutOfBounds);
    ASSERT_TRUE(e.pc.has_value());
    EXPECT_EQ(*e.pc, 1u);
    EXPECT_NE(std::string(e.what()).find("pc 1"), std::string::npos) << e.what();
  }
}

TEST(Machine, WideMatrixOverflowsTheScratchpad) {
  Machine m(small_config(4));
  const std::vector<MacroInstruction> ok = {{OperationMode::MVmul, 4, 64, 0, 2048, 4096}, {}};
  m.load_program(ok);
  EXPECT_NO_THROW(m.run());
  const std::vector<MacroInstruction> bad = {{OperationMode::MVmul, 4, 65, 0, 2048, 4096}, {}};
  m.load_program(bad);
  EXPECT_EQ(run_code(m), ErrorCode::ScratchpadOverflow);
}

TEST(Machine, PoisonModeRunsCleanPrograms) {
  MachineConfig c = small_config(3);
  c.poison_scratchpad = true;
  Machine m(c);
  std::mt19937_64 rng(4);
  m.write_words(0, random_words(rng, 768));
  m.load_program(random_program(rng, 50));
  EXPECT_NO_THROW(m.run());
}

TEST(Machine, CycleBudgetIsEnforced) {
  Machine m(small_config(4));
  const std::vector<MacroInstruction> prog = {{OperationMode::Vadd, 40, 0, 0, 160, 320},
                                              {OperationMode::Vadd, 40, 0, 0, 160, 320}, {}};
  m.load_program(prog);
  EXPECT_EQ(run_code(m, 20), ErrorCode::CycleBudgetExceeded);
  m.load_program(prog);
  Machine fresh(small_config(4));
  fresh.load_program(prog);
  EXPECT_EQ(fresh.run(30).cycles, 30u);
}

TEST(Machine, RunningOffTheEndIsAnError) {
  Machine m(small_config(4));
  const std::vector<MacroInstruction> prog = {{OperationMode::Vadd, 4, 0, 0, 16, 32}};
  m.load_program(prog);
  EXPECT_EQ(run_code(m), ErrorCode::PcOutOfRange);
}

TEST(Machine, OversizedProgramIsRejected) {
  MachineConfig c = small_config(4);
  c.instruction_ram_bytes = 16 * 4;
  Machine m(c);
  std::vector<MacroInstruction> prog(5);
  try {
    m.load_program(prog);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CapacityExceeded);
  }
  prog.resize(4);
  EXPECT_NO_THROW(m.load_program(prog));
}

TEST(Machine, InvalidInstructionsAreRejectedAtIssue) {
  Machine m(small_config(4));
  const std::vector<MacroInstruction> prog = {{OperationMode::Vadd, 0, 0, 0, 16, 32}, {}};
  m.load_program(prog);
  EXPECT_EQ(run_code(m), ErrorCode::InvalidArgument);
}

}  // namespace
}  // namespace sid
