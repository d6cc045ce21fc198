#ifndef DPL_SYNTHBENCH_H_
#define DPL_SYNTHBENCH_H_

// Monte-Carlo checks of the PU estimator on finite synthetic worlds. Every
// world is a pair of discrete score populations, so the reference values
// are exact enumerations.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dpl/pu_core.h"

namespace dpl {

struct SyntheticPU {
  std::vector<double> pos_scores;  // support of p+ (uniform)
  std::vector<double> neg_scores;  // support of p- (uniform)
  ClassPrior prior;

  // Throws ConfigError on an empty population or a non-finite score, and
  // on a score outside [0, 1] when `unit_range` is set.
  void Validate(bool unit_range = false) const;
};

// Scores uniform on [lo, hi]; the sizes are fixed by the caller.
SyntheticPU RandomWorld(std::uint64_t seed, std::size_t num_pos,
                        std::size_t num_neg, double lo, double hi,
                        ClassPrior prior);

// Mean of sigmoid(anchor - s) over neg_scores.
double ExactPnExpectation(const SyntheticPU& world, double anchor);

// Mean of ExactPnExpectation over pos_scores, i.e. the AUC risk target.
double ExactAucRisk(const SyntheticPU& world);

// One draw of the corrected estimate: N unlabeled scores from the mixture
// tau+ p+ + tau- p-, M extra positives from p+. No clamping.
double SamplePnEstimate(const SyntheticPU& world, double anchor,
                        std::size_t m, std::size_t n, std::mt19937_64& rng);

struct UnbiasednessResult {
  double mc_mean = 0.0;
  double exact = 0.0;
  double std_err = 0.0;
  std::size_t trials = 0;

  double z() const;  // (mc_mean - exact) / std_err
  bool Within(double sigmas = 3.0) const;
};

// Averages P̂_PN over `trials` independent draws. With an anchor the target
// is ExactPnExpectation(anchor); without one the anchor is drawn from p+
// in each trial and the target is ExactAucRisk. trials >= 1000.
UnbiasednessResult UnbiasednessExperiment(const SyntheticPU& world,
                                          std::optional<double> anchor,
                                          std::size_t m, std::size_t n,
                                          std::size_t trials,
                                          std::uint64_t seed);

struct ConsistencyPoint {
  std::size_t n = 0;        // M = N
  double empirical = 0.0;     // mean -log P̂ over draws
  double supervised = 0.0;    // mean -log P over anchors
  double gap = 0.0;           // |empirical - supervised|
  double mean_abs_gap = 0.0;  // mean |log P̂ - log P| per draw
  std::size_t clamped = 0;  // draws with P̂ <= 0 (replaced by clamp_floor)
  std::size_t draws = 0;
};

// For each schedule point (strictly increasing, M = N), draws `repeats`
// estimates per anchor and compares the empirical objective, the mean of
// -log P̂ over all draws, with the exact objective, the mean of -log P over
// the anchors.
std::vector<ConsistencyPoint> ConsistencyExperiment(
    const SyntheticPU& world, std::span<const double> anchors,
    std::span<const std::size_t> schedule, std::size_t repeats,
    std::uint64_t seed, double clamp_floor = 1e-7);

double LemmaBound(double tau_plus, std::size_t m, std::size_t n);

struct BoundCheckResult {
  double bound = 0.0;
  double mean_gap = 0.0;
  double p99_gap = 0.0;
  double max_gap = 0.0;
  std::size_t clamped = 0;
  std::size_t trials = 0;
};

// Per trial: anchor from p+, then |log P̂ - log P(anchor)|. The world must
// have every score in [0, 1].
BoundCheckResult BoundCheckExperiment(const SyntheticPU& world, std::size_t m,
                                      std::size_t n, std::size_t trials,
                                      std::uint64_t seed,
                                      double clamp_floor = 1e-7);

struct SynthRow {
  std::string world;
  double tau_plus = 0.0;
  std::size_t m = 0;
  std::size_t n = 0;
  double mc_mean = 0.0;
  double exact = 0.0;
  double gap = 0.0;
  double bound = 0.0;
};

void WriteSynthTsv(std::ostream& os, std::span<const SynthRow> rows);

// Suites run by `dpl verify` and the acceptance binary. Each row is one
// (world, setting) cell; failures name the offending cell.
struct SuiteResult {
  std::vector<SynthRow> rows;
  std::vector<std::string> failures;

  bool passed() const { return failures.empty(); }
};

// Random worlds with scores in [-3, 3], tau+ in [0, 0.7), M and N cycling
// through {1, 3, 10}. A cell passes when the Monte-Carlo mean lies within
// 3 standard errors of the exact AUC risk.
SuiteResult VerifyUnbiasedness(std::size_t worlds, std::size_t trials,
                               std::uint64_t seed);

// Random worlds with scores in [-2, 2], tau+ in [0, 0.5), M = N over
// {1, 10, 100, 1000, 10000}. Requires the gap at 10^4 to be below
// `threshold` and strictly below the gap at N = 1.
SuiteResult VerifyConsistency(std::size_t worlds, std::size_t repeats,
                              std::uint64_t seed, double threshold = 0.01);

struct BoundGrid {
  std::vector<double> taus = {0.0, 0.25, 0.5};
  std::vector<std::size_t> sizes = {100, 400, 1600};  // both N and M
  std::size_t worlds = 3;
  std::size_t trials = 2000;
  double ratio_lo = 0.35;
  double ratio_hi = 0.7;
};

// Worlds with scores in [0, 1]. Every (tau, N, M) cell needs its 99th
// percentile gap within the bound; for each pair (N, M) -> (4N, 4M) inside
// the grid the mean-gap ratio must lie in [ratio_lo, ratio_hi].
SuiteResult VerifyBound(const BoundGrid& grid, std::uint64_t seed);

}  // namespace dpl

#endif  // DPL_SYNTHBENCH_H_
