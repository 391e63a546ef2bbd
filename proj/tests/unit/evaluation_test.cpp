#include <gtest/gtest.h>

#include <filesystem>

#include "sid/evaluation.hpp"
#include "sid/synthetic.hpp"

namespace sid {
namespace {

namespace fs = std::filesystem;

struct Fixture {
  HaptDataset ds;
  UserSplit split;
};

const Fixture& five_users() {
  static const Fixture f = [] {
    const auto dir = fs::temp_directory_path() / "sid_evaluation_test_hapt";
    fs::remove_all(dir);
    synth::write_synthetic_hapt(dir, 5, 21, 400);
    Fixture x;
    x.ds = load_hapt(dir);
    SplitConfig cfg;
    cfg.registered = 3;
    cfg.unregistered = 2;
    cfg.window = 32;
    x.split = build_split(x.ds, 4, cfg);
    return x;
  }();
  return f;
}

std::map<std::uint32_t, ModelBundle> fit_all(ModelKind kind) {
  const auto& f = five_users();
  std::map<std::uint32_t, ModelBundle> out;
  for (auto u : f.split.registered) {
    synth::SynthConfig cfg;
    cfg.kind = kind;
    cfg.user = u;
    cfg.window = 32;
    cfg.hidden = 8;
    cfg.mlp_hidden = {16};
    cfg.support_vectors = 12;
    cfg.references = 5;
    const bool two = kind == ModelKind::Mlp || kind == ModelKind::Svm;
    out.emplace(u, synth::fit_bundle(synth::fit_data(f.ds, f.split, u, two), cfg));
  }
  return out;
}

TEST(Evaluation, ReportCountsAreTheSumOfPairCounts) {
  const auto& f = five_users();
  const auto pairs = evaluation_pairs(f.split);
  ASSERT_EQ(pairs.size(), 15u);
  const auto rep = evaluate(fit_all(ModelKind::Svm), f.ds, f.split, pairs, EvalMode::Reference, MachineConfig{});
  MetricCounts sum;
  for (const auto& p : rep.pairs) sum += p.counts;
  EXPECT_EQ(rep.total, sum);
  EXPECT_EQ(rep.pairs.size(), 15u);
  for (const auto& p : rep.pairs) {
    if (p.pair.impostor()) EXPECT_EQ(p.counts.tn + p.counts.fp, 0u);
    else EXPECT_EQ(p.counts.tp + p.counts.fn, 0u);
    EXPECT_EQ(p.counts.total(), partition_windows(f.ds, f.split, p.pair.candidate, Partition::Test).size());
  }
  ASSERT_TRUE(rep.aggregate.accuracy);
  EXPECT_DOUBLE_EQ(*rep.aggregate.accuracy, static_cast<double>(sum.tp + sum.tn) / static_cast<double>(sum.total()));
  EXPECT_NE(rep.key_values().find("pair target="), std::string::npos);
  EXPECT_NE(rep.table().find("per-target"), std::string::npos);
}

TEST(Evaluation, PerTargetAndBalancedAveragesFollowTheirDefinitions) {
  EvaluationReport rep;
  rep.pairs = {{{1, 1}, {0, 8, 2, 0}}, {{1, 2}, {5, 0, 0, 5}}, {{2, 2}, {0, 10, 0, 0}}, {{2, 1}, {9, 0, 0, 1}}};
  rep.finalize();
  // Target 1 pooled: tp 5 tn 8 fp 2 fn 5, accuracy 13/20; target 2: tp 9 tn 10 fn 1, accuracy 19/20.
  EXPECT_DOUBLE_EQ(*rep.per_target.accuracy, (13.0 / 20 + 19.0 / 20) / 2);
  EXPECT_DOUBLE_EQ(*rep.per_target.tnr, (0.8 + 1.0) / 2);
  EXPECT_DOUBLE_EQ(*rep.balanced_accuracy, ((0.8 + 1.0) / 2 + (0.5 + 0.9) / 2) / 2);
  EXPECT_DOUBLE_EQ(*rep.aggregate.accuracy, 32.0 / 40);
}

TEST(Evaluation, SimulatedModeAgreesWithReference) {
  const auto& f = five_users();
  const auto pairs = evaluation_pairs(f.split);
  for (auto kind : kModelKinds) {
    const auto bundles = fit_all(kind);
    const auto ref = evaluate(bundles, f.ds, f.split, pairs, EvalMode::Reference, MachineConfig{});
    const auto sim = evaluate(bundles, f.ds, f.split, pairs, EvalMode::Simulated, MachineConfig{});
    EXPECT_EQ(sim.windows, ref.total.total());
    EXPECT_GE(sim.agreement(), 0.97) << to_string(kind);
    EXPECT_GT(sim.max_latency_cycles, 0u);
    EXPECT_GT(sim.max_image_bytes, 0u);
    EXPECT_NE(sim.key_values().find("agreement="), std::string::npos);
  }
}

TEST(Evaluation, ThreadCountDoesNotChangeTheReport) {
  const auto& f = five_users();
  const auto pairs = evaluation_pairs(f.split);
  const auto bundles = fit_all(ModelKind::PedLstmVote);
  const auto one = evaluate(bundles, f.ds, f.split, pairs, EvalMode::Simulated, MachineConfig{}, 1);
  const auto many = evaluate(bundles, f.ds, f.split, pairs, EvalMode::Simulated, MachineConfig{}, 6);
  EXPECT_EQ(one.key_values(), many.key_values());
}

TEST(Evaluation, EmptyPairListAndMissingBundles) {
  const auto& f = five_users();
  auto bundles = fit_all(ModelKind::Mlp);
  const auto empty = evaluate(bundles, f.ds, f.split, {}, EvalMode::Reference, MachineConfig{});
  EXPECT_TRUE(empty.pairs.empty());
  EXPECT_EQ(empty.total.total(), 0u);
  EXPECT_FALSE(empty.aggregate.accuracy);
  bundles.erase(bundles.begin());
  const auto pairs = evaluation_pairs(f.split);
  try {
    evaluate(bundles, f.ds, f.split, pairs, EvalMode::Reference, MachineConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingBundle);
  }
}

TEST(Evaluation, VectorMicrobenchScalesWithTracks) {
  const auto v = vector_microbench(1000);
  EXPECT_EQ(v.cycles_1, 1005u);
  EXPECT_EQ(v.cycles_4, 255u);
  EXPECT_NEAR(v.ratio(), 4.0, 0.1);
}

TEST(Evaluation, BenchReportsEveryTrackCount) {
  synth::SynthConfig cfg;
  cfg.kind = ModelKind::PedLstmVote;
  cfg.window = 16;
  cfg.hidden = 8;
  cfg.references = 4;
  cfg.train_readings = 400;
  const std::vector<std::uint32_t> tracks = {1, 2, 4, 8};
  const auto rep = bench(synth::synth_bundle(cfg), tracks);
  ASSERT_EQ(rep.rows.size(), 4u);
  EXPECT_TRUE(rep.streaming);
  for (std::size_t i = 1; i < rep.rows.size(); ++i) EXPECT_LT(rep.rows[i].latency_cycles, rep.rows[i - 1].latency_cycles);
  EXPECT_TRUE(rep.within_period());
  EXPECT_NE(rep.key_values().find("bench tracks=8"), std::string::npos);
}

TEST(Evaluation, FidelityBandExplainsEveryDisagreement) {
  synth::SynthConfig cfg;
  cfg.kind = ModelKind::Mlp;
  cfg.window = 16;
  cfg.mlp_hidden = {16};
  cfg.train_readings = 600;
  const auto b = synth::synth_bundle(cfg);
  const auto p = compile(b, MachineConfig{});
  const auto data = synth::test_windows(cfg, 200);
  const auto f = measure_fidelity(b, p, data.windows, MachineConfig{});
  EXPECT_EQ(f.windows, 200u);
  EXPECT_TRUE(f.passes()) << f.agree << " band " << f.band;
  EXPECT_LT(f.band, 0.05);
}

}  // namespace
}  // namespace sid
