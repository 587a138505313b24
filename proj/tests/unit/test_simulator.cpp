#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "ive/activeness.hpp"
#include "ive/simulator.hpp"
#include "ive/stats.hpp"

namespace ive {
namespace {

SimConfig quiet(GridShape grid = {6, 6}, std::size_t steps = 24) {
  SimConfig cfg;
  cfg.grid = grid;
  cfg.steps = steps;
  cfg.noise_scale = 0.0;
  cfg.head_jitter = 0.0;
  cfg.heads = 2;
  return cfg;
}

double l1(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d += std::abs(a[k] - b[k]);
  return d;
}

TEST(RelevanceField, ZeroWidthBumpIsPointMass) {
  SimConfig cfg = quiet();
  cfg.relevance_bumps = 1;
  cfg.bump_sigma = 0.0;
  const auto centers = relevance_centers(cfg, 1);
  ASSERT_EQ(centers.size(), 1u);
  EXPECT_EQ(relevance_field(cfg, 1), GridDistribution::point_mass(cfg.grid, centers[0]));
}

TEST(RelevanceField, DeterministicAndPiecewiseConstant) {
  SimConfig cfg = quiet({24, 24});
  EXPECT_EQ(relevance_field(cfg, 5), relevance_field(cfg, 5));
  EXPECT_EQ(relevance_field(cfg, 1), relevance_field(cfg, cfg.switch_period));
  EXPECT_THROW(relevance_centers(cfg, 0), std::invalid_argument);
}

TEST(RelevanceField, CentersJumpEachPeriod) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SimConfig cfg = quiet({24, 24});
    cfg.seed = seed;
    for (std::size_t t = 1; t <= 40; t += 7) {
      EXPECT_NE(relevance_centers(cfg, t), relevance_centers(cfg, t + cfg.switch_period));
    }
  }
}

TEST(SynthStep, NoInertiaNoNoiseFollowsField) {
  SimConfig cfg = quiet();
  cfg.inertia_beta = 0.0;
  auto rng = make_rng(1, 2, 3);
  const auto field = relevance_field(cfg, 1);
  const std::vector<double> prev(cfg.grid.cells(), 1.0 / 36.0);
  const auto a = synth_attention_step(prev, field, cfg, rng);
  EXPECT_LT(l1(a, field.mass()), 1e-14);
}

TEST(SynthStep, ConvexCombination) {
  SimConfig cfg = quiet({1, 2});
  cfg.inertia_beta = 0.5;
  auto rng = make_rng(0, 0, 0);
  const GridDistribution field({1, 2}, {0.0, 1.0});
  const std::vector<double> prev{1.0, 0.0};
  const auto a = synth_attention_step(prev, field, cfg, rng);
  EXPECT_NEAR(a[0], 0.5, 1e-15);
  EXPECT_NEAR(a[1], 0.5, 1e-15);
}

TEST(SynthStep, HighInertiaFreezesAttention) {
  SimConfig cfg = quiet({8, 8});
  cfg.inertia_beta = 0.999;
  auto rng = make_rng(0, 0, 0);
  const auto field = relevance_field(cfg, 1);
  const std::vector<double> first(field.mass().begin(), field.mass().end());
  std::vector<double> a = first;
  for (std::size_t t = 2; t <= 60; ++t) a = synth_attention_step(a, relevance_field(cfg, t), cfg, rng);
  EXPECT_LT(l1(a, first), 2.0 * (1.0 - std::pow(0.999, 59)) + 1e-12);
}

TEST(SynthStep, NoisyOutputIsADistribution) {
  SimConfig cfg = quiet();
  cfg.noise_scale = 0.5;
  auto rng = make_rng(4, 0, 0);
  const auto a = synth_attention_step(std::nullopt, relevance_field(cfg, 1), cfg, rng);
  double sum = 0.0;
  for (double v : a) {
    EXPECT_GE(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(InjectInertia, Examples) {
  const std::vector<double> cur{0.6, 0.4}, prev{0.2, 0.8};
  EXPECT_EQ(inject_inertia(cur, prev, 0.0), cur);
  const auto mixed = inject_inertia(cur, prev, 0.5);
  EXPECT_NEAR(mixed[0], 7.0 / 15.0, 1e-15);
  EXPECT_NEAR(mixed[1], 8.0 / 15.0, 1e-15);
  const auto same = inject_inertia(cur, cur, 3.0);
  EXPECT_NEAR(same[0], 0.6, 1e-15);
  EXPECT_NEAR(same[1], 0.4, 1e-15);
  EXPECT_THROW(inject_inertia(cur, prev, -1.0), std::invalid_argument);
  EXPECT_THROW(inject_inertia(cur, std::vector<double>{1.0}, 0.5), std::invalid_argument);
}

TEST(AmplifyVisual, SharpensDistribution) {
  const std::vector<double> v{0.5, 0.3, 0.2};
  EXPECT_EQ(amplify_visual(v, 1.0), v);
  const auto a = amplify_visual(v, 2.0);
  EXPECT_NEAR(a[0], 0.25 / 0.38, 1e-15);
  EXPECT_GT(a[0], v[0]);
  EXPECT_LT(a[2], v[2]);
}

TEST(SpreadHeads, RowsAreDistributions) {
  auto rng = make_rng(0, 0, 0);
  const std::vector<double> shared{0.1, 0.2, 0.7};
  for (const auto& h : spread_heads(shared, 5, 0.3, rng)) {
    double sum = 0.0;
    for (double v : h) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  auto rng2 = make_rng(0, 0, 0);
  for (const auto& h : spread_heads(shared, 3, 0.0, rng2)) EXPECT_EQ(h, shared);
}

TEST(RunDecode, BitIdenticalReplay) {
  SimConfig cfg;
  cfg.grid = {8, 8};
  cfg.steps = 20;
  cfg.ive_enabled = true;
  cfg.seed = 17;
  const auto a = run_decode(cfg);
  const auto b = run_decode(cfg);
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(a.relevance_trace, b.relevance_trace);
  EXPECT_EQ(a.outcomes.size(), 20u);
  EXPECT_EQ(a.trace.meta.at("source"), "simulator");
  EXPECT_EQ(nlohmann::json::parse(a.trace.meta.at("config")).at("ive_enabled"), true);
}

TEST(RunDecode, StepsSatisfyAttentionInvariants) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    SimConfig cfg;
    cfg.grid = {1 + rng() % 6, 1 + rng() % 6};
    cfg.steps = 2 + rng() % 10;
    cfg.layers = 1 + rng() % 3;
    cfg.heads = 1 + rng() % 4;
    cfg.inertia_beta = 0.99 * unit(rng);
    cfg.noise_scale = unit(rng);
    cfg.head_jitter = unit(rng);
    cfg.lambda_inject = 2.0 * unit(rng);
    cfg.amplify_factor = 1.0 + 2.0 * unit(rng);
    cfg.ive_enabled = unit(rng) < 0.5;
    cfg.bump_sigma = 2.0 * unit(rng);
    cfg.text_share = 0.5 * unit(rng);
    cfg.system_tokens = rng() % 4;
    cfg.instruction_tokens = 1 + rng() % 4;
    cfg.seed = rng();
    const auto run = run_decode(cfg);
    EXPECT_NO_THROW(run.trace.validate());
    for (const auto& step : run.trace.steps) {
      const auto check = check_rows(step);
      EXPECT_EQ(check.status, RowCheck::ok) << check.worst_deviation;
      for (std::size_t l = 0; l < cfg.layers; ++l) {
        EXPECT_NO_THROW(visual_slice_normalized(step, run.trace.layout, l));
      }
    }
  }
}

TEST(RunDecode, InvalidConfigThrows) {
  SimConfig cfg;
  cfg.inertia_beta = 1.0;
  EXPECT_THROW(run_decode(cfg), std::invalid_argument);
  cfg = SimConfig{};
  cfg.lambda_inject = -0.5;
  EXPECT_THROW(run_decode(cfg), std::invalid_argument);
  cfg = SimConfig{};
  cfg.amplify_factor = 0.5;
  EXPECT_THROW(run_decode(cfg), std::invalid_argument);
  cfg = SimConfig{};
  cfg.steps = 1;
  EXPECT_THROW(run_decode(cfg), std::invalid_argument);
}

TEST(RelevanceLag, ZeroWhenAttentionIsTheField) {
  SimConfig cfg = quiet();
  cfg.inertia_beta = 0.0;
  for (double v : relevance_lag(run_decode(cfg))) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(RelevanceLag, FrozenAttentionFallsBehind) {
  SimConfig cfg = quiet({10, 10}, 48);
  cfg.inertia_beta = 0.995;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    cfg.seed = seed;
    const auto lag = relevance_lag(run_decode(cfg));
    double first = 0.0, later = 0.0;
    for (std::size_t i = 0; i < 12; ++i) first += lag[i] / 12.0;
    for (std::size_t i = 12; i < 48; ++i) later += lag[i] / 36.0;
    EXPECT_GT(later, first) << "seed " << seed;
  }
}

TEST(CompareRuns, IdenticalRunsIdenticalReports) {
  SimConfig cfg = quiet();
  const std::vector<SimRun> runs{run_decode(cfg), run_decode(cfg)};
  const auto cmp = compare_runs(runs);
  EXPECT_EQ(cmp.reports[0].per_layer_series, cmp.reports[1].per_layer_series);
  EXPECT_EQ(cmp.relevance_lag[0], cmp.relevance_lag[1]);
  EXPECT_EQ(cmp.mean_lag[0], cmp.mean_lag[1]);
}

TEST(CompareRuns, RejectsMismatchedRuns) {
  SimConfig a = quiet({4, 4}), b = quiet({5, 5});
  const std::vector<SimRun> runs{run_decode(a), run_decode(b)};
  EXPECT_THROW(compare_runs(runs), std::invalid_argument);
}

// Small-batch versions of the orderings; the full-size batches live in the
// acceptance suite.
TEST(RunDecode, InjectionLowersActivenessOnSmallBatch) {
  std::vector<double> m0, m1;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    SimConfig cfg;
    cfg.grid = {10, 10};
    cfg.steps = 30;
    cfg.seed = seed;
    m0.push_back(activeness_report(run_decode(cfg).trace).overall_mean);
    cfg.lambda_inject = 1.0;
    m1.push_back(activeness_report(run_decode(cfg).trace).overall_mean);
  }
  EXPECT_GT(median(m0), median(m1));
  EXPECT_EQ(sign_test_greater(m0, m1).positive, 8u);
}

TEST(RunDecode, AmplificationLowersActivenessOnSmallBatch) {
  std::vector<double> m1, m2;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    SimConfig cfg;
    cfg.grid = {10, 10};
    cfg.steps = 30;
    cfg.seed = seed;
    m1.push_back(activeness_report(run_decode(cfg).trace).overall_mean);
    cfg.amplify_factor = 2.0;
    m2.push_back(activeness_report(run_decode(cfg).trace).overall_mean);
  }
  EXPECT_GT(median(m1), median(m2));
}

}  // namespace
}  // namespace ive
