#include "dpl/pu_core.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <string>

#include "dpl/errors.h"

namespace dpl {

namespace {

void RequireFinite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw DomainError(std::string(what) + " must be finite");
  }
}

void RequireFinite(std::span<const double> xs, const char* what) {
  for (double x : xs) RequireFinite(x, what);
}

double LogSumExp2(double x, double y) {
  const double m = std::max(x, y);
  return m + std::log(std::exp(x - m) + std::exp(y - m));
}

void CheckEntry(const EntryScores& e, const LossConfig& config) {
  RequireFinite(e.anchor, "anchor score");
  RequireFinite(e.extra, "extra positive score");
  RequireFinite(e.unlabeled, "unlabeled score");
  if (e.unlabeled.empty()) {
    throw ConfigError("entry has no unlabeled scores (N >= 1 required)");
  }
  const bool needs_extra = config.kind == LossKind::kDpl ||
                           config.kind == LossKind::kDcl ||
                           config.kind == LossKind::kHcl;
  if (needs_extra && config.prior.tau_plus() > 0.0 && e.extra.empty()) {
    throw ConfigError(std::string(LossKindName(config.kind)) +
                      " with tau_plus > 0 needs at least one extra positive");
  }
}

void ZeroGradient(EntryGradient* grad) {
  if (grad == nullptr) return;
  grad->anchor = 0.0;
  std::fill(grad->extra.begin(), grad->extra.end(), 0.0);
  std::fill(grad->unlabeled.begin(), grad->unlabeled.end(), 0.0);
}

EntryLoss BprEntry(const EntryScores& e, EntryGradient* grad) {
  const double inv_n = 1.0 / static_cast<double>(e.unlabeled.size());
  double loss = 0.0;
  double d_anchor = 0.0;
  for (std::size_t n = 0; n < e.unlabeled.size(); ++n) {
    const double diff = e.unlabeled[n] - e.anchor;
    loss += Softplus(diff);
    if (grad != nullptr) {
      const double w = Sigmoid(diff) * inv_n;
      grad->unlabeled[n] = w;
      d_anchor -= w;
    }
  }
  if (grad != nullptr) {
    grad->anchor = d_anchor;
    std::fill(grad->extra.begin(), grad->extra.end(), 0.0);
  }
  return {loss * inv_n, false};
}

EntryLoss InfoNceEntry(const EntryScores& e, EntryGradient* grad) {
  double m = e.anchor;
  for (double s : e.unlabeled) m = std::max(m, s);
  double z = std::exp(e.anchor - m);
  for (double s : e.unlabeled) z += std::exp(s - m);
  const double lse = m + std::log(z);
  if (grad != nullptr) {
    grad->anchor = std::exp(e.anchor - lse) - 1.0;
    for (std::size_t n = 0; n < e.unlabeled.size(); ++n) {
      grad->unlabeled[n] = std::exp(e.unlabeled[n] - lse);
    }
    std::fill(grad->extra.begin(), grad->extra.end(), 0.0);
  }
  return {lse - e.anchor, false};
}

// DCL and HCL share the same outer form
//   loss = log(exp(a) + N * g) - a,
//   g    = (S - N * tau_plus * mean_m exp(p_m)) / (N * tau_minus),
// and differ in the negative mass S. Everything is carried in units of
// exp(shift) so no exponential overflows.
EntryLoss DebiasedContrastiveEntry(const EntryScores& e,
                                   const LossConfig& config, bool hard,
                                   EntryGradient* grad) {
  const auto n_count = static_cast<double>(e.unlabeled.size());
  const auto m_count = static_cast<double>(e.extra.size());
  const double tau_plus = config.prior.tau_plus();
  const double tau_minus = config.prior.tau_minus();
  const double beta = hard ? config.beta : 0.0;

  const double u_max =
      *std::max_element(e.unlabeled.begin(), e.unlabeled.end());
  double shift = u_max;
  if (!e.extra.empty()) {
    shift = std::max(shift, *std::max_element(e.extra.begin(), e.extra.end()));
  }

  // Negative mass S, scaled by exp(-shift).
  double neg_mass = 0.0;
  double u_sum = 0.0;  // HCL: sum exp((beta+1)(s-u_max))
  double v_sum = 0.0;  // HCL: sum exp(beta(s-u_max))
  if (!hard) {
    for (double s : e.unlabeled) neg_mass += std::exp(s - shift);
  } else {
    for (double s : e.unlabeled) {
      u_sum += std::exp((beta + 1.0) * (s - u_max));
      v_sum += std::exp(beta * (s - u_max));
    }
    neg_mass = n_count * std::exp(u_max - shift) * u_sum / v_sum;
  }

  double pos_mass = 0.0;  // mean exp(p_m), scaled by exp(-shift)
  for (double p : e.extra) pos_mass += std::exp(p - shift);
  if (!e.extra.empty()) pos_mass /= m_count;

  const double g_scaled =
      (neg_mass - n_count * tau_plus * pos_mass) / (n_count * tau_minus);
  const double log_floor = std::log(config.clamp_floor);
  double log_g = g_scaled > 0.0 ? shift + std::log(g_scaled)
                                : -std::numeric_limits<double>::infinity();
  bool clamped = false;
  if (log_g < log_floor) {
    log_g = log_floor;
    clamped = true;
  }

  const double log_ng = std::log(n_count) + log_g;
  const double lse = LogSumExp2(e.anchor, log_ng);
  if (grad != nullptr) {
    grad->anchor = std::exp(e.anchor - lse) - 1.0;
    if (clamped) {
      std::fill(grad->extra.begin(), grad->extra.end(), 0.0);
      std::fill(grad->unlabeled.begin(), grad->unlabeled.end(), 0.0);
    } else {
      // d loss / d log g, then d log g / dx = (dg/dx * exp(-shift)) / g_scaled.
      const double w = std::exp(log_ng - lse) / g_scaled;
      for (std::size_t m = 0; m < e.extra.size(); ++m) {
        grad->extra[m] =
            -w * tau_plus * std::exp(e.extra[m] - shift) / (m_count * tau_minus);
      }
      const double denom = n_count * tau_minus;
      for (std::size_t n = 0; n < e.unlabeled.size(); ++n) {
        const double s = e.unlabeled[n];
        double dneg;
        if (!hard) {
          dneg = std::exp(s - shift);
        } else {
          const double a_n = std::exp((beta + 1.0) * (s - u_max));
          const double b_n = std::exp(beta * (s - u_max));
          dneg = n_count * std::exp(u_max - shift) *
                 ((beta + 1.0) * a_n * v_sum - beta * u_sum * b_n) /
                 (v_sum * v_sum);
        }
        grad->unlabeled[n] = w * dneg / denom;
      }
    }
  }
  return {lse - e.anchor, clamped};
}

EntryLoss DplEntry(const EntryScores& e, const LossConfig& config,
                   EntryGradient* grad) {
  const double tau_plus = config.prior.tau_plus();
  const double tau_minus = config.prior.tau_minus();
  const auto n_count = static_cast<double>(e.unlabeled.size());
  const auto m_count = static_cast<double>(e.extra.size());

  double p_pu = 0.0;
  for (double s : e.unlabeled) p_pu += Sigmoid(e.anchor - s);
  p_pu /= n_count;
  double p_pp = 0.0;
  if (!e.extra.empty()) {
    for (double s : e.extra) p_pp += Sigmoid(e.anchor - s);
    p_pp /= m_count;
  }
  const double p = (p_pu - tau_plus * p_pp) / tau_minus;

  // Outside [floor, 1] the probability is replaced by a constant.
  if (p < config.clamp_floor) {
    ZeroGradient(grad);
    return {-std::log(config.clamp_floor), true};
  }
  if (p > 1.0) {
    ZeroGradient(grad);
    return {0.0, true};
  }

  if (grad != nullptr) {
    const double dl_dp = -1.0 / p;
    double d_anchor = 0.0;
    for (std::size_t n = 0; n < e.unlabeled.size(); ++n) {
      const double sg = Sigmoid(e.anchor - e.unlabeled[n]);
      const double dsg = sg * (1.0 - sg) / (n_count * tau_minus);
      d_anchor += dsg;
      grad->unlabeled[n] = -dl_dp * dsg;
    }
    for (std::size_t m = 0; m < e.extra.size(); ++m) {
      const double sg = Sigmoid(e.anchor - e.extra[m]);
      const double dsg = tau_plus * sg * (1.0 - sg) / (m_count * tau_minus);
      d_anchor -= dsg;
      grad->extra[m] = dl_dp * dsg;
    }
    grad->anchor = dl_dp * d_anchor;
  }
  return {-std::log(p), false};
}

std::vector<EntryScores> Views(std::span<const ScoredEntry> entries) {
  return {entries.begin(), entries.end()};
}

void RequireKind(const LossConfig& config, LossKind kind) {
  if (config.kind != kind) {
    throw ConfigError("loss function " + std::string(LossKindName(kind)) +
                      " called with config for " +
                      std::string(LossKindName(config.kind)));
  }
}

}  // namespace

ClassPrior::ClassPrior(double tau_plus) : tau_plus_(tau_plus) {
  if (!(tau_plus >= 0.0 && tau_plus < 1.0)) {
    throw DomainError("class prior tau_plus must lie in [0, 1), got " +
                      std::to_string(tau_plus));
  }
}

std::string_view LossKindName(LossKind kind) {
  switch (kind) {
    case LossKind::kBpr:
      return "bpr";
    case LossKind::kInfoNce:
      return "infonce";
    case LossKind::kDcl:
      return "dcl";
    case LossKind::kHcl:
      return "hcl";
    case LossKind::kDpl:
      return "dpl";
  }
  return "unknown";
}

LossKind ParseLossKind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  for (LossKind k : {LossKind::kBpr, LossKind::kInfoNce, LossKind::kDcl,
                     LossKind::kHcl, LossKind::kDpl}) {
    if (lower == LossKindName(k)) return k;
  }
  if (lower == "info_nce") return LossKind::kInfoNce;
  throw ConfigError("unknown loss kind '" + std::string(name) + "'");
}

void LossConfig::Validate() const {
  if (!(clamp_floor > 0.0) || !(clamp_floor < 1.0)) {
    throw ConfigError("clamp_floor must lie in (0, 1)");
  }
  if (n_neg < 1) throw ConfigError("N >= 1 negatives required");
  if (!(beta >= 0.0)) throw ConfigError("beta must be nonnegative");
  if (!(lambda_reg >= 0.0)) throw ConfigError("lambda must be nonnegative");
  const bool debiased = kind == LossKind::kDpl || kind == LossKind::kDcl ||
                        kind == LossKind::kHcl;
  if (debiased && prior.tau_plus() > 0.0 && m_extra_pos < 1) {
    throw ConfigError(std::string(LossKindName(kind)) +
                      ": M >= 1 extra positives required when tau_plus > 0");
  }
}

double Sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double ez = std::exp(z);
  return ez / (1.0 + ez);
}

double Softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double PairProb(double score_pos, double score_other) {
  RequireFinite(score_pos, "score");
  RequireFinite(score_other, "score");
  return Sigmoid(score_pos - score_other);
}

double PuProb(const EntryScores& entry) {
  if (entry.unlabeled.empty()) {
    throw DomainError("pu_prob needs at least one unlabeled score");
  }
  double sum = 0.0;
  for (double s : entry.unlabeled) sum += PairProb(entry.anchor, s);
  return sum / static_cast<double>(entry.unlabeled.size());
}

double PpProb(const EntryScores& entry) {
  if (entry.extra.empty()) {
    throw DomainError("pp_prob needs at least one extra positive score");
  }
  double sum = 0.0;
  for (double s : entry.extra) sum += PairProb(entry.anchor, s);
  return sum / static_cast<double>(entry.extra.size());
}

double PnCorrect(double p_pu, double p_pp, const ClassPrior& prior) {
  if (!(prior.tau_minus() > 0.0)) {
    throw DomainError("pn_correct requires tau_minus > 0");
  }
  return (p_pu - prior.tau_plus() * p_pp) / prior.tau_minus();
}

EntryLoss ComputeEntryLoss(const EntryScores& entry, const LossConfig& config,
                           EntryGradient* grad) {
  CheckEntry(entry, config);
  switch (config.kind) {
    case LossKind::kBpr:
      return BprEntry(entry, grad);
    case LossKind::kInfoNce:
      return InfoNceEntry(entry, grad);
    case LossKind::kDcl:
      return DebiasedContrastiveEntry(entry, config, /*hard=*/false, grad);
    case LossKind::kHcl:
      return DebiasedContrastiveEntry(entry, config, /*hard=*/true, grad);
    case LossKind::kDpl:
      return DplEntry(entry, config, grad);
  }
  throw ConfigError("unknown loss kind");
}

LossSummary BatchLoss(std::span<const ScoredEntry> entries,
                      const LossConfig& config) {
  config.Validate();
  if (entries.empty()) throw ConfigError("loss over an empty batch");
  LossSummary out;
  out.entries = entries.size();
  if (config.kind == LossKind::kBpr) {
    // Mean over all (entry, unlabeled) pairs.
    double total = 0.0;
    std::size_t pairs = 0;
    for (const ScoredEntry& e : entries) {
      const EntryLoss l = ComputeEntryLoss(e, config);
      total += l.value * static_cast<double>(e.unlabeled_scores.size());
      pairs += e.unlabeled_scores.size();
    }
    out.mean = total / static_cast<double>(pairs);
    return out;
  }
  double total = 0.0;
  for (const EntryScores& e : Views(entries)) {
    const EntryLoss l = ComputeEntryLoss(e, config);
    total += l.value;
    if (l.clamped) ++out.clamped;
  }
  out.mean = total / static_cast<double>(entries.size());
  return out;
}

double DplLoss(std::span<const ScoredEntry> entries, const LossConfig& config) {
  RequireKind(config, LossKind::kDpl);
  return BatchLoss(entries, config).mean;
}

double BprLoss(std::span<const ScoredEntry> entries, const LossConfig& config) {
  RequireKind(config, LossKind::kBpr);
  return BatchLoss(entries, config).mean;
}

double InfoNceLoss(std::span<const ScoredEntry> entries,
                   const LossConfig& config) {
  RequireKind(config, LossKind::kInfoNce);
  return BatchLoss(entries, config).mean;
}

double DclLoss(std::span<const ScoredEntry> entries, const LossConfig& config) {
  RequireKind(config, LossKind::kDcl);
  return BatchLoss(entries, config).mean;
}

double HclLoss(std::span<const ScoredEntry> entries, const LossConfig& config) {
  RequireKind(config, LossKind::kHcl);
  return BatchLoss(entries, config).mean;
}

}  // namespace dpl
