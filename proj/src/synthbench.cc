#include "dpl/synthbench.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <thread>

#include "dpl/errors.h"

namespace dpl {

namespace {

// Trials are cut into fixed-size blocks, each with its own seed stream, so
// results do not depend on how many threads run them.
constexpr std::size_t kBlock = 4096;

std::mt19937_64 BlockRng(std::uint64_t seed, std::uint64_t stream,
                         std::uint64_t block) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(block),
                    static_cast<std::uint32_t>(block >> 32)};
  return std::mt19937_64(seq);
}

// Runs fn(block_index, first_trial, count) for every block, spreading the
// blocks over the available cores. fn writes only to its own block slot.
template <typename Fn>
void ForEachBlock(std::size_t trials, Fn fn) {
  const std::size_t blocks = (trials + kBlock - 1) / kBlock;
  const std::size_t workers = std::clamp<std::size_t>(
      std::thread::hardware_concurrency(), 1, std::max<std::size_t>(blocks, 1));
  auto run = [&](std::size_t w) {
    for (std::size_t b = w; b < blocks; b += workers) {
      const std::size_t first = b * kBlock;
      fn(b, first, std::min(kBlock, trials - first));
    }
  };
  if (workers == 1) {
    run(0);
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
}

double Pick(const std::vector<double>& xs, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, xs.size() - 1);
  return xs[d(rng)];
}

}  // namespace

void SyntheticPU::Validate(bool unit_range) const {
  if (pos_scores.empty() || neg_scores.empty()) {
    throw ConfigError("synthetic world needs positive and negative scores");
  }
  for (const auto* xs : {&pos_scores, &neg_scores}) {
    for (double s : *xs) {
      if (!std::isfinite(s)) throw ConfigError("synthetic score not finite");
      if (unit_range && (s < 0.0 || s > 1.0)) {
        throw ConfigError("synthetic score outside [0, 1]");
      }
    }
  }
}

SyntheticPU RandomWorld(std::uint64_t seed, std::size_t num_pos,
                        std::size_t num_neg, double lo, double hi,
                        ClassPrior prior) {
  if (num_pos == 0 || num_neg == 0 || !(lo <= hi)) {
    throw ConfigError("bad synthetic world shape");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  SyntheticPU w{{}, {}, prior};
  for (std::size_t i = 0; i < num_pos; ++i) w.pos_scores.push_back(d(rng));
  for (std::size_t i = 0; i < num_neg; ++i) w.neg_scores.push_back(d(rng));
  return w;
}

double ExactPnExpectation(const SyntheticPU& world, double anchor) {
  if (world.neg_scores.empty()) throw ConfigError("no negative scores");
  double sum = 0.0;
  for (double s : world.neg_scores) sum += Sigmoid(anchor - s);
  return sum / static_cast<double>(world.neg_scores.size());
}

double ExactAucRisk(const SyntheticPU& world) {
  if (world.pos_scores.empty()) throw ConfigError("no positive scores");
  double sum = 0.0;
  for (double a : world.pos_scores) sum += ExactPnExpectation(world, a);
  return sum / static_cast<double>(world.pos_scores.size());
}

double SamplePnEstimate(const SyntheticPU& world, double anchor,
                        std::size_t m, std::size_t n, std::mt19937_64& rng) {
  const double tau_plus = world.prior.tau_plus();
  if (n == 0) throw ConfigError("N must be >= 1");
  if (tau_plus > 0.0 && m == 0) throw ConfigError("M must be >= 1");
  std::bernoulli_distribution from_pos(tau_plus);
  double pu = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double s = from_pos(rng) ? Pick(world.pos_scores, rng)
                                   : Pick(world.neg_scores, rng);
    pu += Sigmoid(anchor - s);
  }
  pu /= static_cast<double>(n);
  if (tau_plus == 0.0) return pu;
  double pp = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    pp += Sigmoid(anchor - Pick(world.pos_scores, rng));
  }
  pp /= static_cast<double>(m);
  return (pu - tau_plus * pp) / world.prior.tau_minus();
}

double UnbiasednessResult::z() const {
  if (std_err == 0.0) return mc_mean == exact ? 0.0 : INFINITY;
  return (mc_mean - exact) / std_err;
}

bool UnbiasednessResult::Within(double sigmas) const {
  return std::abs(mc_mean - exact) <= sigmas * std_err;
}

UnbiasednessResult UnbiasednessExperiment(const SyntheticPU& world,
                                          std::optional<double> anchor,
                                          std::size_t m, std::size_t n,
                                          std::size_t trials,
                                          std::uint64_t seed) {
  world.Validate();
  if (trials < 1000) throw ConfigError("need at least 1000 trials");
  const std::size_t blocks = (trials + kBlock - 1) / kBlock;
  std::vector<double> sums(blocks), sq(blocks);
  ForEachBlock(trials, [&](std::size_t b, std::size_t, std::size_t count) {
    auto rng = BlockRng(seed, 1, b);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t t = 0; t < count; ++t) {
      const double a = anchor ? *anchor : Pick(world.pos_scores, rng);
      const double x = SamplePnEstimate(world, a, m, n, rng);
      s1 += x;
      s2 += x * x;
    }
    sums[b] = s1;
    sq[b] = s2;
  });
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t b = 0; b < blocks; ++b) {
    s1 += sums[b];
    s2 += sq[b];
  }
  const auto t = static_cast<double>(trials);
  UnbiasednessResult r;
  r.trials = trials;
  r.mc_mean = s1 / t;
  const double var = std::max(0.0, (s2 - t * r.mc_mean * r.mc_mean) / (t - 1));
  r.std_err = std::sqrt(var / t);
  r.exact = anchor ? ExactPnExpectation(world, *anchor) : ExactAucRisk(world);
  return r;
}

std::vector<ConsistencyPoint> ConsistencyExperiment(
    const SyntheticPU& world, std::span<const double> anchors,
    std::span<const std::size_t> schedule, std::size_t repeats,
    std::uint64_t seed, double clamp_floor) {
  world.Validate();
  if (anchors.empty() || schedule.empty() || repeats == 0) {
    throw ConfigError("consistency experiment needs anchors and a schedule");
  }
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (schedule[i] == 0 || (i > 0 && schedule[i] <= schedule[i - 1])) {
      throw ConfigError("schedule must be positive and strictly increasing");
    }
  }
  std::vector<double> exact_log(anchors.size());
  double sup = 0.0;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    exact_log[a] = std::log(ExactPnExpectation(world, anchors[a]));
    sup -= exact_log[a];
  }
  sup /= static_cast<double>(anchors.size());

  std::vector<ConsistencyPoint> out;
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    const std::size_t n = schedule[k];
    const std::size_t draws = anchors.size() * repeats;
    const std::size_t blocks = (draws + kBlock - 1) / kBlock;
    std::vector<double> abs_sum(blocks), obj_sum(blocks);
    std::vector<std::size_t> clamp_count(blocks);
    ForEachBlock(draws, [&](std::size_t b, std::size_t first,
                            std::size_t count) {
      auto rng = BlockRng(seed, 2 + k, b);
      for (std::size_t t = first; t < first + count; ++t) {
        const std::size_t a = t % anchors.size();
        double p = SamplePnEstimate(world, anchors[a], n, n, rng);
        if (p <= 0.0) {
          p = clamp_floor;
          ++clamp_count[b];
        }
        const double lp = std::log(p);
        abs_sum[b] += std::abs(lp - exact_log[a]);
        obj_sum[b] -= lp;
      }
    });
    ConsistencyPoint pt;
    pt.n = n;
    pt.draws = draws;
    double obj = 0.0;
    for (std::size_t b = 0; b < blocks; ++b) {
      pt.mean_abs_gap += abs_sum[b];
      obj += obj_sum[b];
      pt.clamped += clamp_count[b];
    }
    pt.mean_abs_gap /= static_cast<double>(draws);
    pt.empirical = obj / static_cast<double>(draws);
    pt.supervised = sup;
    pt.gap = std::abs(pt.empirical - sup);
    out.push_back(pt);
  }
  return out;
}

double LemmaBound(double tau_plus, std::size_t m, std::size_t n) {
  if (n == 0) throw ConfigError("N must be >= 1");
  const double e2 = std::exp(2.0);
  const double two_pi = 2.0 * std::numbers::pi;
  double b = e2 * std::sqrt(two_pi / static_cast<double>(n));
  if (tau_plus > 0.0) {
    if (m == 0) throw ConfigError("M must be >= 1");
    b += e2 * tau_plus * std::sqrt(two_pi / static_cast<double>(m));
  }
  return b;
}

BoundCheckResult BoundCheckExperiment(const SyntheticPU& world, std::size_t m,
                                      std::size_t n, std::size_t trials,
                                      std::uint64_t seed, double clamp_floor) {
  world.Validate(/*unit_range=*/true);
  if (trials == 0) throw ConfigError("need at least one trial");
  std::vector<double> gaps(trials);
  const std::size_t blocks = (trials + kBlock - 1) / kBlock;
  std::vector<std::size_t> clamp_count(blocks);
  ForEachBlock(trials, [&](std::size_t b, std::size_t first,
                           std::size_t count) {
    auto rng = BlockRng(seed, 3, b);
    for (std::size_t t = first; t < first + count; ++t) {
      const double a = Pick(world.pos_scores, rng);
      double p = SamplePnEstimate(world, a, m, n, rng);
      if (p <= 0.0) {
        p = clamp_floor;
        ++clamp_count[b];
      }
      gaps[t] = std::abs(std::log(p) - std::log(ExactPnExpectation(world, a)));
    }
  });
  BoundCheckResult r;
  r.trials = trials;
  r.bound = LemmaBound(world.prior.tau_plus(), m, n);
  for (std::size_t c : clamp_count) r.clamped += c;
  double sum = 0.0;
  for (double g : gaps) sum += g;
  r.mean_gap = sum / static_cast<double>(trials);
  std::sort(gaps.begin(), gaps.end());
  r.max_gap = gaps.back();
  // Nearest-rank percentile.
  const auto rank = static_cast<std::size_t>(
      std::ceil(0.99 * static_cast<double>(trials)));
  r.p99_gap = gaps[std::max<std::size_t>(rank, 1) - 1];
  return r;
}

void WriteSynthTsv(std::ostream& os, std::span<const SynthRow> rows) {
  os << "world\ttau_plus\tM\tN\tmc_mean\texact\tgap\tbound\n";
  os << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.world << '\t' << r.tau_plus << '\t' << r.m << '\t' << r.n << '\t'
       << r.mc_mean << '\t' << r.exact << '\t' << r.gap << '\t' << r.bound
       << '\n';
  }
}

namespace {

std::string WorldName(std::size_t w) { return "w" + std::to_string(w); }

std::string Cell(const std::string& world, double tau, std::size_t m,
                 std::size_t n) {
  std::ostringstream os;
  os << world << " tau=" << tau << " M=" << m << " N=" << n;
  return os.str();
}

}  // namespace

SuiteResult VerifyUnbiasedness(std::size_t worlds, std::size_t trials,
                               std::uint64_t seed) {
  static constexpr std::size_t kSizes[] = {1, 3, 10};
  SuiteResult out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> tau_dist(0.0, 0.7);
  std::uniform_int_distribution<std::size_t> count(2, 8);
  for (std::size_t w = 0; w < worlds; ++w) {
    const double tau = tau_dist(rng);
    const std::size_t num_pos = count(rng), num_neg = count(rng);
    const SyntheticPU world =
        RandomWorld(rng(), num_pos, num_neg, -3.0, 3.0, ClassPrior(tau));
    const std::size_t m = kSizes[w % 3], n = kSizes[(w / 3) % 3];
    const auto r =
        UnbiasednessExperiment(world, std::nullopt, m, n, trials, rng());
    out.rows.push_back({WorldName(w), tau, m, n, r.mc_mean, r.exact,
                        std::abs(r.mc_mean - r.exact), 3.0 * r.std_err});
    if (!r.Within(3.0)) {
      std::ostringstream os;
      os << Cell(WorldName(w), tau, m, n) << ": z=" << r.z();
      out.failures.push_back(os.str());
    }
  }
  return out;
}

SuiteResult VerifyConsistency(std::size_t worlds, std::size_t repeats,
                              std::uint64_t seed, double threshold) {
  static constexpr std::size_t kSchedule[] = {1, 10, 100, 1000, 10000};
  SuiteResult out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> tau_dist(0.0, 0.5);
  std::uniform_int_distribution<std::size_t> count(2, 8);
  for (std::size_t w = 0; w < worlds; ++w) {
    const double tau = tau_dist(rng);
    const std::size_t num_pos = count(rng), num_neg = count(rng);
    const SyntheticPU world =
        RandomWorld(rng(), num_pos, num_neg, -2.0, 2.0, ClassPrior(tau));
    const auto pts = ConsistencyExperiment(world, world.pos_scores, kSchedule,
                                           repeats, rng());
    for (const auto& p : pts) {
      out.rows.push_back({WorldName(w), tau, p.n, p.n, p.empirical,
                          p.supervised, p.gap,
                          p.n == kSchedule[4] ? threshold : 0.0});
    }
    const double first = pts.front().gap, last = pts.back().gap;
    if (!(last < threshold) || !(last < first)) {
      std::ostringstream os;
      os << WorldName(w) << " tau=" << tau << ": gap(N=1)=" << first
         << " gap(N=10000)=" << last;
      out.failures.push_back(os.str());
    }
  }
  return out;
}

SuiteResult VerifyBound(const BoundGrid& grid, std::uint64_t seed) {
  SuiteResult out;
  std::mt19937_64 rng(seed);
  for (std::size_t w = 0; w < grid.worlds; ++w) {
    const std::uint64_t world_seed = rng();
    for (double tau : grid.taus) {
      const SyntheticPU world =
          RandomWorld(world_seed, 6, 10, 0.0, 1.0, ClassPrior(tau));
      std::map<std::pair<std::size_t, std::size_t>, double> mean_gap;
      for (std::size_t n : grid.sizes) {
        for (std::size_t m : grid.sizes) {
          const auto r = BoundCheckExperiment(world, m, n, grid.trials, rng());
          mean_gap[{n, m}] = r.mean_gap;
          out.rows.push_back(
              {WorldName(w), tau, m, n, r.mean_gap, r.p99_gap, r.p99_gap,
               r.bound});
          if (!(r.p99_gap <= r.bound)) {
            std::ostringstream os;
            os << Cell(WorldName(w), tau, m, n) << ": p99 gap " << r.p99_gap
               << " > bound " << r.bound;
            out.failures.push_back(os.str());
          }
        }
      }
      for (const auto& [key, gap] : mean_gap) {
        const auto it = mean_gap.find({4 * key.first, 4 * key.second});
        if (it == mean_gap.end()) continue;
        const double ratio = it->second / gap;
        if (ratio < grid.ratio_lo || ratio > grid.ratio_hi) {
          std::ostringstream os;
          os << Cell(WorldName(w), tau, key.second, key.first)
             << ": gap ratio to 4x sizes " << ratio;
          out.failures.push_back(os.str());
        }
      }
    }
  }
  return out;
}

}  // namespace dpl
