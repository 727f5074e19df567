#pragma once

// Fixed-protocol evaluation: n independent sinusoid tasks, each a pure
// function of (seed, task index), adapted for k_test steps and scored on a
// fresh query set.

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "gap/errors.hpp"
#include "gap/metaloop.hpp"
#include "gap/rng.hpp"
#include "gap/stats.hpp"
#include "gap/tasks.hpp"

namespace gap {

struct EvalSettings {
  std::size_t n_tasks = 600;
  std::size_t shots = 5;
  std::size_t query_size = 100;
  double alpha = 1e-2;
  std::size_t k_steps = 10;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct TaskResult {
  std::size_t task_index = 0;
  SinusoidTask task;
  double mse = 0.0;
};

struct EvalResult {
  double mean = 0.0;
  double ci95 = 0.0;
  std::vector<TaskResult> tasks;  // in task-index order
};

inline Rng eval_task_rng(std::uint64_t seed, std::size_t task_index) {
  return make_rng(derive_seed(seed, streams::kEvalTasks), task_index);
}

/// Task `task_index` of the protocol: the task and its episode.
inline std::pair<SinusoidTask, Episode> eval_episode(std::uint64_t seed, std::size_t task_index, std::size_t shots,
                                                     std::size_t query_size) {
  Rng rng = eval_task_rng(seed, task_index);
  const SinusoidTask task = sample_task(rng);
  Episode ep = make_episode(task, shots, query_size, rng);
  return {task, std::move(ep)};
}

inline EvalResult summarize(std::vector<TaskResult> tasks) {
  if (tasks.size() < 2) throw ContractError("evaluation needs at least two tasks");
  std::vector<double> mse;
  mse.reserve(tasks.size());
  for (const TaskResult& t : tasks) mse.push_back(t.mse);
  return {stats::mean(mse), stats::ci95(mse), std::move(tasks)};
}

/// Results are independent of the worker count: each task owns its RNG and
/// the reduction runs over the index-ordered vector.
inline EvalResult evaluate_protocol(const MetaState& state, const EvalSettings& s) {
  if (s.n_tasks < 2) throw ContractError("evaluate_protocol: n_tasks must be ≥ 2");
  std::vector<TaskResult> results(s.n_tasks);
  auto run_one = [&](std::size_t i) {
    auto [task, ep] = eval_episode(s.seed, i, s.shots, s.query_size);
    results[i] = {i, task, adapted_query_loss(state, ep, s.alpha, s.k_steps)};
  };

  const std::size_t workers = std::clamp<std::size_t>(s.workers, 1, s.n_tasks);
  if (workers == 1) {
    for (std::size_t i = 0; i < s.n_tasks; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < s.n_tasks; i = next++) {
          try {
            run_one(i);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (std::thread& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  return summarize(std::move(results));
}

}  // namespace gap
