#ifndef DPL_EVAL_H_
#define DPL_EVAL_H_

#include <cstddef>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include "dpl/data.h"
#include "dpl/encoders.h"

namespace dpl {

struct TopKScores {
  double precision = 0.0;
  double recall = 0.0;
  double ndcg = 0.0;
};

struct RankingMetrics {
  std::map<std::size_t, double> precision;
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> ndcg;
  double auc = 0.0;
  std::size_t users_evaluated = 0;
  std::size_t users_skipped = 0;  // empty test set
};

struct EvalOptions {
  std::vector<std::size_t> ks = {5, 10, 20};
  ScoreKind score = ScoreKind::kDot;
  bool compute_auc = true;
};

// Scores of every item for user u.
std::vector<double> ItemScores(const EmbeddingTable& table, std::size_t u,
                               ScoreKind kind = ScoreKind::kDot);

// Item indices in descending score order, ties by ascending index, with
// `exclude` (sorted) removed. `limit` > 0 keeps only the first `limit`.
std::vector<std::size_t> RankItems(std::span<const double> scores,
                                   std::span<const std::size_t> exclude,
                                   std::size_t limit = 0);
std::vector<std::size_t> RankItems(const EmbeddingTable& table, std::size_t u,
                                   std::span<const std::size_t> exclude,
                                   ScoreKind kind = ScoreKind::kDot);

// Binary relevance: precision = hits/K, recall = hits/|test|,
// ndcg = DCG@K / IDCG@K with discount 1/log2(rank + 1). `test` sorted.
TopKScores PrecisionRecallNdcg(std::span<const std::size_t> ranked,
                               std::span<const std::size_t> test,
                               std::size_t k);

// Fraction of (test positive, true negative) pairs ordered correctly, ties
// counted 0.5. True negatives are items in neither train nor test of u.
// Returns nullopt-like -1 when the user has no such pair.
double UserAuc(std::span<const double> scores,
               std::span<const std::size_t> train,
               std::span<const std::size_t> test);

// Mean of UserAuc over users with at least one valid pair.
double Auc01(const EmbeddingTable& table, const SplitDataset& split,
             ScoreKind kind = ScoreKind::kDot);

// Per-user averages of every metric over users with a non-empty test set.
// `table` holds the final embeddings (propagated ones for LightGCN).
RankingMetrics Evaluate(const EmbeddingTable& table, const SplitDataset& split,
                        const EvalOptions& options = {});

// Header plus one row: P@K R@K NDCG@K for each K, then AUC.
void WriteMetricsTsv(std::ostream& os, const RankingMetrics& metrics,
                     bool with_auc = true);

}  // namespace dpl

#endif  // DPL_EVAL_H_
