#ifndef DPL_PU_CORE_H_
#define DPL_PU_CORE_H_

// Pairwise probability estimators and ranking losses over precomputed
// scores. Every function here is pure; none of them touches embeddings.
//
// A scored entry is the (anchor positive, M extra positives, N unlabeled)
// record produced for one (user, item) training pair. Scores are g(u, .)
// values, i.e. already reduced to reals by the encoder.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dpl {

// Probability that an unlabeled sample is a hidden positive.
class ClassPrior {
 public:
  ClassPrior() = default;
  // Throws DomainError unless 0 <= tau_plus < 1.
  explicit ClassPrior(double tau_plus);

  double tau_plus() const { return tau_plus_; }
  double tau_minus() const { return 1.0 - tau_plus_; }

 private:
  double tau_plus_ = 0.0;
};

struct ScoredEntry {
  double anchor_pos_score = 0.0;
  std::vector<double> extra_pos_scores;
  std::vector<double> unlabeled_scores;
};

// Non-owning view used by the kernels; the training loop builds these over
// its own score buffers to avoid per-entry allocation.
struct EntryScores {
  double anchor = 0.0;
  std::span<const double> extra;
  std::span<const double> unlabeled;

  EntryScores() = default;
  EntryScores(double a, std::span<const double> e, std::span<const double> u)
      : anchor(a), extra(e), unlabeled(u) {}
  EntryScores(const ScoredEntry& entry)  // NOLINT: implicit by intent
      : anchor(entry.anchor_pos_score),
        extra(entry.extra_pos_scores),
        unlabeled(entry.unlabeled_scores) {}
};

// d(loss)/d(score) for one entry. Spans must match the entry's sizes.
struct EntryGradient {
  double anchor = 0.0;
  std::span<double> extra;
  std::span<double> unlabeled;
};

enum class LossKind { kBpr, kInfoNce, kDcl, kHcl, kDpl };

std::string_view LossKindName(LossKind kind);
// Accepts "bpr", "infonce", "dcl", "hcl", "dpl" (case-insensitive).
// Throws ConfigError otherwise.
LossKind ParseLossKind(std::string_view name);

struct LossConfig {
  LossKind kind = LossKind::kDpl;
  ClassPrior prior;
  std::size_t m_extra_pos = 3;
  std::size_t n_neg = 3;
  double beta = 1.0;         // HCL hardness.
  double lambda_reg = 1e-4;  // L2 weight, applied by the training loop.
  double clamp_floor = 1e-7;

  // Throws ConfigError on an inconsistent combination.
  void Validate() const;
};

// Branch-wise logistic function; never overflows.
double Sigmoid(double z);
// log(1 + exp(x)), stable for any finite x.
double Softplus(double x);

// sigma(score_pos - score_other). Throws DomainError on non-finite input.
double PairProb(double score_pos, double score_other);

// Mean of PairProb(anchor, s) over the unlabeled scores.
double PuProb(const EntryScores& entry);
// Mean of PairProb(anchor, s) over the extra positive scores.
double PpProb(const EntryScores& entry);

// Prior-corrected positive-vs-negative probability
// (p_pu - tau_plus * p_pp) / tau_minus. Not clamped; may leave (0, 1).
double PnCorrect(double p_pu, double p_pp, const ClassPrior& prior);

struct EntryLoss {
  double value = 0.0;
  // True when the DPL probability left [floor, 1] or the DCL/HCL negative
  // mass fell below the floor. Clamped quantities carry zero gradient.
  bool clamped = false;
};

// Loss of a single entry under config.kind. When `grad` is non-null its
// spans are filled with d(loss)/d(score). Entry sizes must satisfy the
// kind's preconditions (see LossConfig::Validate and the kernels below).
EntryLoss ComputeEntryLoss(const EntryScores& entry, const LossConfig& config,
                           EntryGradient* grad = nullptr);

struct LossSummary {
  double mean = 0.0;
  std::size_t entries = 0;
  std::size_t clamped = 0;
};

// Batch losses: mean over entries. BPR additionally averages over the N
// (anchor, unlabeled) pairs inside each entry. Each throws ConfigError if
// config.kind does not match the function.
double DplLoss(std::span<const ScoredEntry> entries, const LossConfig& config);
double BprLoss(std::span<const ScoredEntry> entries, const LossConfig& config);
double InfoNceLoss(std::span<const ScoredEntry> entries,
                   const LossConfig& config);
double DclLoss(std::span<const ScoredEntry> entries, const LossConfig& config);
double HclLoss(std::span<const ScoredEntry> entries, const LossConfig& config);

// Dispatches on config.kind and reports how many entries were clamped.
LossSummary BatchLoss(std::span<const ScoredEntry> entries,
                      const LossConfig& config);

}  // namespace dpl

#endif  // DPL_PU_CORE_H_
