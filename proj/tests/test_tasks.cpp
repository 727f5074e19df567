#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "gap/evaluation.hpp"
#include "gap/run_record.hpp"
#include "gap/stats.hpp"
#include "gap/tasks.hpp"

using namespace gap;

TEST(Tasks, ParameterRangesAndAmplitudeMean) {
  Rng rng = make_rng(1, 0);
  double sum_a = 0.0, min_a = 1e9, max_a = -1e9;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const SinusoidTask t = sample_task(rng);
    sum_a += t.amplitude;
    min_a = std::min(min_a, t.amplitude);
    max_a = std::max(max_a, t.amplitude);
    ASSERT_GE(t.frequency, 0.8);
    ASSERT_LE(t.frequency, 1.2);
    ASSERT_GE(t.phase, 0.0);
    ASSERT_LE(t.phase, M_PI);
  }
  EXPECT_GE(min_a, 0.1);
  EXPECT_LE(max_a, 5.0);
  EXPECT_NEAR(sum_a / n, 2.55, 0.01 * 2.55);
}

TEST(Tasks, SeededSamplingIsReproducible) {
  Rng a = make_rng(5, 1), b = make_rng(5, 1);
  const SinusoidTask ta = sample_task(a), tb = sample_task(b);
  EXPECT_EQ(ta.amplitude, tb.amplitude);
  EXPECT_EQ(ta.frequency, tb.frequency);
  EXPECT_EQ(ta.phase, tb.phase);
}

TEST(Tasks, ValueAtZero) {
  Rng rng = make_rng(2, 0);
  for (int i = 0; i < 10; ++i) {
    const SinusoidTask t = sample_task(rng);
    EXPECT_EQ(t(0.0), t.amplitude * std::sin(t.phase));
  }
}

TEST(Episode, SizesRangesAndTargets) {
  Rng rng = make_rng(3, 0);
  const SinusoidTask t = sample_task(rng);
  const Episode e = make_episode(t, 5, 100, rng);
  EXPECT_EQ(e.support.x.shape(), (Shape{5, 1}));
  EXPECT_EQ(e.query.x.shape(), (Shape{100, 1}));
  for (const Batch* b : {&e.support, &e.query}) {
    for (std::size_t i = 0; i < b->x.size(); ++i) {
      const double x = b->x[i];
      EXPECT_LE(std::abs(x), 5.0);
      const double y = t.amplitude * std::sin(t.frequency * x + t.phase);
      EXPECT_LE(std::abs(b->y[i] - y), 1e-12);
    }
  }
  EXPECT_THROW(make_episode(t, 0, 10, rng), DomainError);
  EXPECT_THROW(make_episode(t, 5, 0, rng), DomainError);
}

TEST(Stats, CiMatchesHandComputation) {
  const std::vector<double> v{1.0, 2.0, 4.0, 7.0, 11.0};
  // mean 5, squared deviations 16+9+1+4+36 = 66, s = √(66/4)
  EXPECT_DOUBLE_EQ(stats::mean(v), 5.0);
  EXPECT_NEAR(stats::ci95(v), 1.96 * std::sqrt(66.0 / 4.0) / std::sqrt(5.0), 1e-15);
  const std::vector<double> c(7, 0.3);
  EXPECT_EQ(stats::ci95(c), 0.0);
  EXPECT_DOUBLE_EQ(stats::mean(c), 0.3);
  EXPECT_THROW(stats::ci95(std::vector<double>{1.0}), ContractError);
}

namespace {

MetaState small_state() {
  TrainConfig cfg;
  cfg.kind = PrecondKind::kGap;
  Rng rng = make_rng(7, streams::kInit);
  return init_state(cfg, rng);
}

}  // namespace

TEST(Protocol, EpisodesArePureInSeedAndIndex) {
  const auto [t1, e1] = eval_episode(9, 17, 5, 100);
  const auto [t2, e2] = eval_episode(9, 17, 5, 100);
  EXPECT_EQ(e1.support.x, e2.support.x);
  EXPECT_EQ(e1.query.y, e2.query.y);
  const auto [t3, e3] = eval_episode(9, 18, 5, 100);
  EXPECT_NE(e1.support.x, e3.support.x);
}

TEST(Protocol, WorkerCountDoesNotChangeResults) {
  const MetaState s = small_state();
  EvalSettings es;
  es.n_tasks = 24;
  es.seed = 3;
  const EvalResult one = evaluate_protocol(s, es);
  es.workers = 4;
  const EvalResult four = evaluate_protocol(s, es);
  EXPECT_EQ(one.mean, four.mean);
  EXPECT_EQ(one.ci95, four.ci95);
  for (std::size_t i = 0; i < one.tasks.size(); ++i) EXPECT_EQ(one.tasks[i].mse, four.tasks[i].mse);
}

TEST(Protocol, MeanRecomputesFromCsv) {
  const MetaState s = small_state();
  EvalSettings es;
  es.n_tasks = 30;
  const EvalResult r = evaluate_protocol(s, es);
  const auto path = std::filesystem::temp_directory_path() / "gap_test_eval.csv";
  write_eval_csv(path, r);
  const std::vector<double> mse = read_eval_mse(path);
  ASSERT_EQ(mse.size(), 30u);
  double acc = 0.0;
  for (double v : mse) acc += v;
  EXPECT_EQ(acc / 30.0, r.mean);
  EXPECT_NEAR(stats::ci95(mse), r.ci95, 1e-15);
  std::filesystem::remove(path);
}

TEST(Protocol, NeedsTwoTasks) {
  EvalSettings es;
  es.n_tasks = 1;
  EXPECT_THROW(evaluate_protocol(small_state(), es), ContractError);
}
