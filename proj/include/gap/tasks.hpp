#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "gap/errors.hpp"
#include "gap/rng.hpp"
#include "gap/tensor.hpp"

namespace gap {

/// y(x) = amplitude·sin(frequency·x + phase).
struct SinusoidTask {
  static constexpr double kAmplitudeMin = 0.1, kAmplitudeMax = 5.0;
  static constexpr double kFrequencyMin = 0.8, kFrequencyMax = 1.2;
  static constexpr double kPhaseMin = 0.0, kPhaseMax = std::numbers::pi;
  static constexpr double kInputMin = -5.0, kInputMax = 5.0;

  double amplitude = 1.0;
  double frequency = 1.0;
  double phase = 0.0;

  double operator()(double x) const { return amplitude * std::sin(frequency * x + phase); }
};

/// A labelled point set; x and y are both N×1.
struct Batch {
  Tensor x;
  Tensor y;
};

struct Episode {
  Batch support;
  Batch query;
};

inline SinusoidTask sample_task(Rng& rng) {
  std::uniform_real_distribution<double> amp(SinusoidTask::kAmplitudeMin, SinusoidTask::kAmplitudeMax);
  std::uniform_real_distribution<double> freq(SinusoidTask::kFrequencyMin, SinusoidTask::kFrequencyMax);
  std::uniform_real_distribution<double> phase(SinusoidTask::kPhaseMin, SinusoidTask::kPhaseMax);
  SinusoidTask t;
  t.amplitude = amp(rng);
  t.frequency = freq(rng);
  t.phase = phase(rng);
  return t;
}

inline Batch sample_points(const SinusoidTask& task, std::size_t count, Rng& rng) {
  std::uniform_real_distribution<double> input(SinusoidTask::kInputMin, SinusoidTask::kInputMax);
  Batch b{Tensor(Shape{count, 1}), Tensor(Shape{count, 1})};
  for (std::size_t i = 0; i < count; ++i) {
    b.x[i] = input(rng);
    b.y[i] = task(b.x[i]);
  }
  return b;
}

/// Support and query inputs are independent uniform draws on [−5, 5].
inline Episode make_episode(const SinusoidTask& task, std::size_t shots, std::size_t query_size, Rng& rng) {
  if (shots < 1 || query_size < 1) throw DomainError("make_episode: shots and query_size must be ≥ 1");
  Episode e;
  e.support = sample_points(task, shots, rng);
  e.query = sample_points(task, query_size, rng);
  return e;
}

}  // namespace gap
