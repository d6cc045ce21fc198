#ifndef DPL_TRAINING_H_
#define DPL_TRAINING_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpl/data.h"
#include "dpl/encoders.h"
#include "dpl/eval.h"
#include "dpl/pu_core.h"

namespace dpl {

enum class OptimizerKind { kSgd, kAdam };

std::string_view OptimizerKindName(OptimizerKind kind);
OptimizerKind ParseOptimizerKind(std::string_view name);  // "sgd" | "adam"

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  LossConfig loss;
  EncoderConfig encoder;
  std::size_t epochs = 50;
  std::size_t batch_size = 1024;
  double learning_rate = 0.001;
  OptimizerConfig optimizer;
  std::uint64_t seed = 7;
  std::size_t eval_every = 0;  // 0: evaluate after the last epoch only.

  void Validate() const;
};

struct EpochReport {
  std::size_t epoch = 0;  // 1-based
  double loss_mean = 0.0;
  double clamp_rate = 0.0;
  double seconds = 0.0;
  std::optional<RankingMetrics> metrics;
};

struct TrainReport {
  std::vector<EpochReport> epochs;
};

// Everything that evolves during training. Holds the layer-0 parameters;
// FinalEmbeddings() gives the table scores are computed from.
struct TrainState {
  EmbeddingTable params;
  BipartiteGraph graph;
  Rng rng;
  std::vector<double> adam_m_user, adam_v_user, adam_m_item, adam_v_item;
  std::uint64_t step = 0;
  std::size_t epochs_done = 0;
};

TrainState MakeTrainState(const SplitDataset& split, const TrainConfig& config);

// Embeddings used for scoring: params for MF, propagated params for
// LightGCN.
EmbeddingTable FinalEmbeddings(const TrainState& state,
                               const TrainConfig& config);

struct BatchObjective {
  double data_loss = 0.0;  // mean entry loss
  double penalty = 0.0;    // lambda * sum of touched squared norms
  std::size_t clamped = 0;
  EmbeddingTable grad;     // d(data_loss + penalty) / d(params)
  std::vector<std::size_t> touched_users;  // unique, sorted
  std::vector<std::size_t> touched_items;

  double total() const { return data_loss + penalty; }
};

// Loss and exact gradient of one mini-batch w.r.t. the layer-0 parameters.
// For LightGCN the gradient is pulled back through the propagation.
BatchObjective ComputeBatchObjective(const EmbeddingTable& params,
                                     std::span<const BatchEntry> batch,
                                     const TrainConfig& config,
                                     const BipartiteGraph* graph);

// Applies one optimizer step from `objective.grad`. SGD touches only the
// batch rows; Adam updates every row, as a dense optimizer would.
void ApplyUpdate(TrainState& state, const BatchObjective& objective,
                 const TrainConfig& config);

// One pass over the training positives in shuffled mini-batches. Throws
// DomainError naming the epoch and batch if the loss becomes non-finite.
EpochReport TrainEpoch(TrainState& state, const SplitDataset& split,
                       const TrainConfig& config);

// Largest discrepancy between the analytic score gradient of one entry and
// central finite differences with step `epsilon`, relative to the larger
// of the two gradients' max-norms (0 when both vanish).
double GradientCheck(const LossConfig& config, const ScoredEntry& entry,
                     double epsilon = 1e-5);

struct DatasetOptions {
  std::filesystem::path path;
  InputFormat format;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 2023;
  SplitMode split_mode = SplitMode::kGlobal;
};

SplitDataset LoadSplit(const DatasetOptions& data);

struct TrainResult {
  EmbeddingTable params;
  EmbeddingTable final_embeddings;
  TrainReport report;
  RankingMetrics final_metrics;
};

// Trains on an already-split dataset, evaluating every eval_every epochs
// and after the last one.
TrainResult TrainOnSplit(const SplitDataset& split, const TrainConfig& config,
                         std::ostream* log = nullptr);

// parse -> implicit -> split -> init -> epochs. With a non-empty out_dir,
// writes checkpoint.bin, split.manifest, report.tsv, report.json and
// metrics.tsv there.
TrainResult RunTraining(const TrainConfig& config, const DatasetOptions& data,
                        const std::filesystem::path& out_dir = {},
                        std::ostream* log = nullptr);

void WriteReportTsv(std::ostream& os, const TrainReport& report);
void WriteReportJson(std::ostream& os, const TrainReport& report,
                     const TrainConfig& config,
                     const RankingMetrics& final_metrics);

}  // namespace dpl

#endif  // DPL_TRAINING_H_
