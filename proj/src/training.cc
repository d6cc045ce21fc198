#include "dpl/training.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "dpl/errors.h"
#include "json.hpp"

namespace dpl {

namespace {

constexpr std::uint64_t kSamplerSeedOffset = 1;

bool UsesExtraPositives(LossKind kind) {
  return kind == LossKind::kDpl || kind == LossKind::kDcl ||
         kind == LossKind::kHcl;
}

void SortUnique(std::vector<std::size_t>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

void Axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t k = 0; k < x.size(); ++k) y[k] += a * x[k];
}

void AdamStep(std::vector<double>& param, const std::vector<double>& grad,
              std::vector<double>& m, std::vector<double>& v, double lr,
              double c1, double c2, const OptimizerConfig& opt) {
  for (std::size_t k = 0; k < param.size(); ++k) {
    const double g = grad[k];
    m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g;
    v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g * g;
    const double m_hat = m[k] / c1;
    const double v_hat = v[k] / c2;
    param[k] -= lr * m_hat / (std::sqrt(v_hat) + opt.epsilon);
  }
}

}  // namespace

std::string_view OptimizerKindName(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

OptimizerKind ParseOptimizerKind(std::string_view name) {
  if (name == "sgd" || name == "SGD") return OptimizerKind::kSgd;
  if (name == "adam" || name == "Adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

void TrainConfig::Validate() const {
  loss.Validate();
  if (!(learning_rate >= 0.0)) {
    throw ConfigError("learning rate must be nonnegative");
  }
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (encoder.dim < 1) throw ConfigError("embedding dimension must be >= 1");
  if (encoder.score != ScoreKind::kDot) {
    throw ConfigError("training supports dot-product scores only");
  }
  if (optimizer.kind == OptimizerKind::kAdam &&
      !(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 &&
        optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0 &&
        optimizer.epsilon > 0.0)) {
    throw ConfigError("invalid Adam parameters");
  }
}

TrainState MakeTrainState(const SplitDataset& split,
                          const TrainConfig& config) {
  config.Validate();
  TrainState state;
  state.params =
      InitEmbeddings(split.num_users, split.num_items, config.encoder,
                     config.seed);
  if (config.encoder.kind == EncoderKind::kLightGcn) {
    state.graph = BipartiteGraph::FromAdjacency(split.num_items,
                                                split.train_pos);
  }
  state.rng.seed(config.seed + kSamplerSeedOffset);
  if (config.optimizer.kind == OptimizerKind::kAdam) {
    state.adam_m_user.assign(state.params.user_data().size(), 0.0);
    state.adam_v_user.assign(state.params.user_data().size(), 0.0);
    state.adam_m_item.assign(state.params.item_data().size(), 0.0);
    state.adam_v_item.assign(state.params.item_data().size(), 0.0);
  }
  return state;
}

EmbeddingTable FinalEmbeddings(const TrainState& state,
                               const TrainConfig& config) {
  if (config.encoder.kind == EncoderKind::kLightGcn) {
    return LightGcnPropagate(state.params, state.graph,
                             config.encoder.num_layers);
  }
  return state.params;
}

BatchObjective ComputeBatchObjective(const EmbeddingTable& params,
                                     std::span<const BatchEntry> batch,
                                     const TrainConfig& config,
                                     const BipartiteGraph* graph) {
  if (batch.empty()) throw ConfigError("empty mini-batch");
  const bool lightgcn = config.encoder.kind == EncoderKind::kLightGcn;
  if (lightgcn && graph == nullptr) {
    throw ConfigError("LightGCN objective needs the interaction graph");
  }

  EmbeddingTable propagated;
  if (lightgcn) {
    propagated = LightGcnPropagate(params, *graph, config.encoder.num_layers);
  }
  const EmbeddingTable& scoring = lightgcn ? propagated : params;

  BatchObjective out;
  EmbeddingTable score_grad(params.num_users(), params.num_items(),
                            params.dim());
  const double weight = 1.0 / static_cast<double>(batch.size());

  std::vector<double> extra, unl, g_extra, g_unl;
  for (const BatchEntry& e : batch) {
    const auto eu = scoring.user(e.user);
    const double anchor = Dot(eu, scoring.item(e.item));
    extra.resize(e.extra_pos.size());
    unl.resize(e.negs.size());
    g_extra.assign(e.extra_pos.size(), 0.0);
    g_unl.assign(e.negs.size(), 0.0);
    for (std::size_t m = 0; m < extra.size(); ++m) {
      extra[m] = Dot(eu, scoring.item(e.extra_pos[m]));
    }
    for (std::size_t n = 0; n < unl.size(); ++n) {
      unl[n] = Dot(eu, scoring.item(e.negs[n]));
    }
    EntryGradient g{0.0, g_extra, g_unl};
    const EntryLoss l =
        ComputeEntryLoss(EntryScores(anchor, extra, unl), config.loss, &g);
    out.data_loss += l.value * weight;
    if (l.clamped) ++out.clamped;

    // Chain rule through s = <e_u, e_x>.
    auto gu = score_grad.user(e.user);
    auto push = [&](std::size_t item, double ds) {
      if (ds == 0.0) return;
      Axpy(weight * ds, scoring.item(item), gu);
      Axpy(weight * ds, eu, score_grad.item(item));
    };
    push(e.item, g.anchor);
    for (std::size_t m = 0; m < extra.size(); ++m) {
      push(e.extra_pos[m], g_extra[m]);
    }
    for (std::size_t n = 0; n < unl.size(); ++n) push(e.negs[n], g_unl[n]);

    out.touched_users.push_back(e.user);
    out.touched_items.push_back(e.item);
    out.touched_items.insert(out.touched_items.end(), e.extra_pos.begin(),
                             e.extra_pos.end());
    out.touched_items.insert(out.touched_items.end(), e.negs.begin(),
                             e.negs.end());
  }
  SortUnique(out.touched_users);
  SortUnique(out.touched_items);

  out.grad = lightgcn ? LightGcnPropagate(score_grad, *graph,
                                          config.encoder.num_layers)
                      : std::move(score_grad);

  const double lambda = config.loss.lambda_reg;
  if (lambda > 0.0) {
    out.penalty =
        L2Penalty(params, out.touched_users, out.touched_items, lambda);
    for (std::size_t u : out.touched_users) {
      Axpy(2.0 * lambda, params.user(u), out.grad.user(u));
    }
    for (std::size_t i : out.touched_items) {
      Axpy(2.0 * lambda, params.item(i), out.grad.item(i));
    }
  }
  return out;
}

void ApplyUpdate(TrainState& state, const BatchObjective& objective,
                 const TrainConfig& config) {
  const double lr = config.learning_rate;
  ++state.step;
  if (config.optimizer.kind == OptimizerKind::kSgd) {
    if (config.encoder.kind == EncoderKind::kMf) {
      for (std::size_t u : objective.touched_users) {
        Axpy(-lr, objective.grad.user(u), state.params.user(u));
      }
      for (std::size_t i : objective.touched_items) {
        Axpy(-lr, objective.grad.item(i), state.params.item(i));
      }
    } else {
      Axpy(-lr, objective.grad.user_data(), state.params.user_data());
      Axpy(-lr, objective.grad.item_data(), state.params.item_data());
    }
    return;
  }
  const auto& opt = config.optimizer;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  AdamStep(state.params.user_data(), objective.grad.user_data(),
           state.adam_m_user, state.adam_v_user, lr, c1, c2, opt);
  AdamStep(state.params.item_data(), objective.grad.item_data(),
           state.adam_m_item, state.adam_v_item, lr, c1, c2, opt);
}

EpochReport TrainEpoch(TrainState& state, const SplitDataset& split,
                       const TrainConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t m =
      UsesExtraPositives(config.loss.kind) ? config.loss.m_extra_pos : 0;
  const auto entries = SampleEpoch(split, m, config.loss.n_neg, state.rng);
  if (entries.empty()) throw DataError("no trainable entries in the split");

  const BipartiteGraph* graph =
      config.encoder.kind == EncoderKind::kLightGcn ? &state.graph : nullptr;
  double loss_sum = 0.0;
  std::size_t clamped = 0;
  std::size_t batch_index = 0;
  for (std::size_t begin = 0; begin < entries.size();
       begin += config.batch_size, ++batch_index) {
    const std::size_t end = std::min(entries.size(), begin + config.batch_size);
    const std::span<const BatchEntry> batch(entries.data() + begin,
                                            end - begin);
    auto where = [&] {
      std::ostringstream msg;
      msg << "epoch " << state.epochs_done + 1 << ", batch " << batch_index
          << " (entries " << begin << ".." << end - 1 << ", first user "
          << batch.front().user << ")";
      return msg.str();
    };
    BatchObjective obj;
    try {
      obj = ComputeBatchObjective(state.params, batch, config, graph);
    } catch (const DomainError& e) {
      // Non-finite scores are rejected inside the loss.
      throw DomainError("non-finite loss at " + where() + ": " + e.what());
    }
    if (!std::isfinite(obj.total())) {
      throw DomainError("non-finite loss at " + where());
    }
    ApplyUpdate(state, obj, config);
    loss_sum += obj.data_loss * static_cast<double>(batch.size());
    clamped += obj.clamped;
  }
  ++state.epochs_done;

  EpochReport r;
  r.epoch = state.epochs_done;
  r.loss_mean = loss_sum / static_cast<double>(entries.size());
  r.clamp_rate =
      static_cast<double>(clamped) / static_cast<double>(entries.size());
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                            start)
                  .count();
  return r;
}

double GradientCheck(const LossConfig& config, const ScoredEntry& entry,
                     double epsilon) {
  std::vector<double> g_extra(entry.extra_pos_scores.size());
  std::vector<double> g_unl(entry.unlabeled_scores.size());
  EntryGradient grad{0.0, g_extra, g_unl};
  ComputeEntryLoss(entry, config, &grad);

  std::vector<double> analytic;
  analytic.push_back(grad.anchor);
  analytic.insert(analytic.end(), g_extra.begin(), g_extra.end());
  analytic.insert(analytic.end(), g_unl.begin(), g_unl.end());

  ScoredEntry probe = entry;
  std::vector<double*> coords;
  coords.push_back(&probe.anchor_pos_score);
  for (double& x : probe.extra_pos_scores) coords.push_back(&x);
  for (double& x : probe.unlabeled_scores) coords.push_back(&x);

  double max_diff = 0.0;
  double scale = 0.0;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const double saved = *coords[k];
    *coords[k] = saved + epsilon;
    const double up = ComputeEntryLoss(probe, config).value;
    *coords[k] = saved - epsilon;
    const double down = ComputeEntryLoss(probe, config).value;
    *coords[k] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    max_diff = std::max(max_diff, std::abs(numeric - analytic[k]));
    scale = std::max({scale, std::abs(numeric), std::abs(analytic[k])});
  }
  return scale == 0.0 ? 0.0 : max_diff / scale;
}

SplitDataset LoadSplit(const DatasetOptions& data) {
  const ParseResult parsed = ParseDataset(data.path, data.format);
  const ImplicitFeedback implicit = ToImplicit(parsed.interactions);
  return SplitHoldout(implicit, data.test_fraction, data.split_seed,
                      data.split_mode);
}

TrainResult TrainOnSplit(const SplitDataset& split, const TrainConfig& config,
                         std::ostream* log) {
  TrainState state = MakeTrainState(split, config);
  TrainResult result;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    EpochReport r = TrainEpoch(state, split, config);
    const bool last = e + 1 == config.epochs;
    if (last || (config.eval_every > 0 && r.epoch % config.eval_every == 0)) {
      r.metrics = Evaluate(FinalEmbeddings(state, config), split);
    }
    if (log != nullptr) {
      *log << "epoch " << r.epoch << " loss " << r.loss_mean << " clamp "
           << r.clamp_rate << " time " << r.seconds << "s";
      if (r.metrics) {
        *log << " P@5 " << r.metrics->precision.at(5) << " NDCG@5 "
             << r.metrics->ndcg.at(5);
      }
      *log << '\n';
    }
    result.report.epochs.push_back(std::move(r));
  }
  result.params = state.params;
  result.final_embeddings = FinalEmbeddings(state, config);
  if (!result.report.epochs.empty() && result.report.epochs.back().metrics) {
    result.final_metrics = *result.report.epochs.back().metrics;
  } else {
    result.final_metrics = Evaluate(result.final_embeddings, split);
  }
  return result;
}

TrainResult RunTraining(const TrainConfig& config, const DatasetOptions& data,
                        const std::filesystem::path& out_dir,
                        std::ostream* log) {
  config.Validate();
  const SplitDataset split = LoadSplit(data);
  TrainResult result = TrainOnSplit(split, config, log);
  if (out_dir.empty()) return result;

  std::filesystem::create_directories(out_dir);
  CheckpointHeader header;
  header.encoder = config.encoder.kind;
  header.num_layers = config.encoder.num_layers;
  header.seed = config.seed;
  SaveCheckpoint(out_dir / "checkpoint.bin", result.params, header);
  WriteSplitManifest(out_dir / "split.manifest",
                     MakeSplitManifest(split, data.split_seed,
                                       data.test_fraction, data.split_mode,
                                       data.path.string(), data.format));
  {
    std::ofstream os(out_dir / "report.tsv");
    WriteReportTsv(os, result.report);
  }
  {
    std::ofstream os(out_dir / "report.json");
    WriteReportJson(os, result.report, config, result.final_metrics);
  }
  {
    std::ofstream os(out_dir / "metrics.tsv");
    WriteMetricsTsv(os, result.final_metrics);
  }
  return result;
}

void WriteReportTsv(std::ostream& os, const TrainReport& report) {
  os << "epoch\tloss\tclamp_rate\tseconds\tP@5\tR@5\tNDCG@5\tP@10\tR@10\t"
        "NDCG@10\tP@20\tR@20\tNDCG@20\tAUC\n";
  os << std::setprecision(10);
  for (const EpochReport& r : report.epochs) {
    os << r.epoch << '\t' << r.loss_mean << '\t' << r.clamp_rate << '\t'
       << r.seconds;
    for (std::size_t k : {5, 10, 20}) {
      if (r.metrics && r.metrics->precision.contains(k)) {
        os << '\t' << r.metrics->precision.at(k) << '\t'
           << r.metrics->recall.at(k) << '\t' << r.metrics->ndcg.at(k);
      } else {
        os << "\t\t\t";
      }
    }
    os << '\t';
    if (r.metrics) os << r.metrics->auc;
    os << '\n';
  }
}

void WriteReportJson(std::ostream& os, const TrainReport& report,
                     const TrainConfig& config,
                     const RankingMetrics& final_metrics) {
  using nlohmann::json;
  json j;
  j["config"] = {
      {"loss", LossKindName(config.loss.kind)},
      {"tau_plus", config.loss.prior.tau_plus()},
      {"m", config.loss.m_extra_pos},
      {"n", config.loss.n_neg},
      {"beta", config.loss.beta},
      {"lambda", config.loss.lambda_reg},
      {"clamp_floor", config.loss.clamp_floor},
      {"encoder", EncoderKindName(config.encoder.kind)},
      {"dim", config.encoder.dim},
      {"layers", config.encoder.num_layers},
      {"init_scale", config.encoder.init_scale},
      {"epochs", config.epochs},
      {"batch_size", config.batch_size},
      {"learning_rate", config.learning_rate},
      {"optimizer", OptimizerKindName(config.optimizer.kind)},
      {"seed", config.seed},
  };
  json epochs = json::array();
  for (const EpochReport& r : report.epochs) {
    epochs.push_back({{"epoch", r.epoch},
                      {"loss", r.loss_mean},
                      {"clamp_rate", r.clamp_rate},
                      {"seconds", r.seconds}});
  }
  j["epochs"] = epochs;
  json metrics;
  for (const auto& [k, v] : final_metrics.precision) {
    const std::string suffix = "@" + std::to_string(k);
    metrics["P" + suffix] = v;
    metrics["R" + suffix] = final_metrics.recall.at(k);
    metrics["NDCG" + suffix] = final_metrics.ndcg.at(k);
  }
  metrics["AUC"] = final_metrics.auc;
  metrics["users_evaluated"] = final_metrics.users_evaluated;
  metrics["users_skipped"] = final_metrics.users_skipped;
  j["final_metrics"] = metrics;
  os << j.dump(2) << '\n';
}

}  // namespace dpl
