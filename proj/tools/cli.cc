#include "cli.h"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "dpl/data.h"
#include "dpl/encoders.h"
#include "dpl/errors.h"
#include "dpl/eval.h"
#include "dpl/synthbench.h"
#include "dpl/training.h"

#ifndef DPL_VERSION
#define DPL_VERSION "0.0.0"
#endif

namespace dpl::cli {

namespace {

namespace fs = std::filesystem;

constexpr std::size_t kMinTrials = 1000;

struct Options {
  std::string data;
  std::string format = "tab";
  double test_fraction = 0.2;
  std::optional<std::uint64_t> split_seed;
  std::string split_mode = "global";

  std::string model = "mf";
  std::size_t layers = 2;
  std::size_t dim = 64;
  double init_scale = 0.1;

  std::string loss = "dpl";
  double tau = 0.1;
  std::size_t m = 3;
  std::size_t n = 3;
  double beta = 1.0;
  double lambda = 1e-4;
  double clamp_floor = 1e-7;

  std::size_t epochs = 50;
  std::size_t batch = 1024;
  std::optional<double> lr;
  std::string optimizer = "adam";
  std::uint64_t seed = 7;
  std::size_t eval_every = 0;

  std::string out;
  std::vector<std::size_t> topk = {5, 10, 20};
  std::string run;
  std::string checkpoint;
  std::string split;

  std::string lemma = "all";
  std::optional<std::size_t> trials;
  std::size_t worlds = 20;
  std::optional<std::size_t> lemma_n;
  std::optional<std::size_t> lemma_m;
  std::optional<double> lemma_tau;

  std::vector<std::string> grid;
  bool quiet = false;
};

std::string FormatNumber(double x) {
  std::ostringstream os;
  os << std::setprecision(12) << x;
  return os.str();
}

std::uint64_t SplitSeed(const Options& o) {
  return o.split_seed ? *o.split_seed : o.seed;
}

TrainConfig MakeTrainConfig(const Options& o) {
  TrainConfig c;
  c.loss.kind = ParseLossKind(o.loss);
  c.loss.prior = ClassPrior(o.tau);
  c.loss.m_extra_pos = o.m;
  c.loss.n_neg = o.n;
  c.loss.beta = o.beta;
  c.loss.lambda_reg = o.lambda;
  c.loss.clamp_floor = o.clamp_floor;
  c.encoder.kind = ParseEncoderKind(o.model);
  c.encoder.num_layers = o.layers;
  c.encoder.dim = o.dim;
  c.encoder.init_scale = o.init_scale;
  c.epochs = o.epochs;
  c.batch_size = o.batch;
  c.optimizer.kind = ParseOptimizerKind(o.optimizer);
  c.learning_rate =
      o.lr ? *o.lr : (c.optimizer.kind == OptimizerKind::kSgd ? 0.01 : 0.001);
  c.seed = o.seed;
  c.eval_every = o.eval_every;
  c.Validate();
  return c;
}

DatasetOptions MakeDatasetOptions(const Options& o) {
  DatasetOptions d;
  d.path = ResolveDataPath(o.data);
  d.format = InputFormat::Parse(o.format);
  d.test_fraction = o.test_fraction;
  d.split_seed = SplitSeed(o);
  d.split_mode = ParseSplitMode(o.split_mode);
  return d;
}

// Keys are the long flag names, so `--config run.manifest` replays a run.
void WriteRunManifest(const fs::path& path, const std::string& command,
                      const Options& o, const TrainConfig& c,
                      const DatasetOptions& d,
                      const std::vector<std::string>& artifacts) {
  const FileFingerprint fp = FingerprintFile(d.path);
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "# dpl run manifest\n"
     << "command=" << command << '\n'
     << "data=" << fs::absolute(d.path).string() << '\n'
     << "format=" << d.format.Name() << '\n'
     << "test-fraction=" << FormatNumber(d.test_fraction) << '\n'
     << "split-seed=" << d.split_seed << '\n'
     << "split-mode=" << SplitModeName(d.split_mode) << '\n'
     << "model=" << EncoderKindName(c.encoder.kind) << '\n'
     << "layers=" << c.encoder.num_layers << '\n'
     << "dim=" << c.encoder.dim << '\n'
     << "init-scale=" << FormatNumber(c.encoder.init_scale) << '\n'
     << "loss=" << LossKindName(c.loss.kind) << '\n'
     << "tau=" << FormatNumber(c.loss.prior.tau_plus()) << '\n'
     << "m=" << c.loss.m_extra_pos << '\n'
     << "n=" << c.loss.n_neg << '\n'
     << "beta=" << FormatNumber(c.loss.beta) << '\n'
     << "lambda=" << FormatNumber(c.loss.lambda_reg) << '\n'
     << "clamp-floor=" << FormatNumber(c.loss.clamp_floor) << '\n'
     << "epochs=" << c.epochs << '\n'
     << "batch=" << c.batch_size << '\n'
     << "lr=" << FormatNumber(c.learning_rate) << '\n'
     << "optimizer=" << OptimizerKindName(c.optimizer.kind) << '\n'
     << "seed=" << c.seed << '\n'
     << "eval-every=" << c.eval_every << '\n';
  if (!o.grid.empty()) {
    os << "grid=[";
    for (std::size_t i = 0; i < o.grid.size(); ++i) {
      os << (i ? "," : "") << '"' << o.grid[i] << '"';
    }
    os << "]\n";
  }
  os << "data_lines=" << fp.lines << '\n'
     << "data_checksum=" << std::hex << std::setw(16) << std::setfill('0')
     << fp.checksum << std::dec << '\n';
  for (std::size_t i = 0; i < artifacts.size(); ++i) {
    os << "artifact_" << i << '=' << artifacts[i] << '\n';
  }
  os << "dpl_version=" << DPL_VERSION << '\n'
     << "compiler=" << __VERSION__ << '\n';
}

int CmdTrain(const Options& o, std::ostream& out, std::ostream& err) {
  const TrainConfig config = MakeTrainConfig(o);
  const DatasetOptions data = MakeDatasetOptions(o);
  std::ostream* log = o.quiet ? nullptr : &err;
  const TrainResult result = RunTraining(config, data, o.out, log);
  if (!o.out.empty()) {
    WriteRunManifest(fs::path(o.out) / "run.manifest", "train", o, config,
                     data,
                     {"checkpoint.bin", "split.manifest", "report.tsv",
                      "report.json", "metrics.tsv"});
  }
  WriteMetricsTsv(out, result.final_metrics);
  return kOk;
}

int CmdEvaluate(const Options& o, std::ostream& out) {
  fs::path ckpt = o.checkpoint, manifest_path = o.split;
  if (!o.run.empty()) {
    if (ckpt.empty()) ckpt = fs::path(o.run) / "checkpoint.bin";
    if (manifest_path.empty()) manifest_path = fs::path(o.run) / "split.manifest";
  }
  if (ckpt.empty() || manifest_path.empty()) {
    throw ConfigError("evaluate needs --run DIR or --checkpoint and --split");
  }
  const SplitManifest manifest = ReadSplitManifest(manifest_path);
  DatasetOptions data;
  data.path = ResolveDataPath(o.data.empty() ? manifest.data_path : o.data);
  data.format = InputFormat::Parse(manifest.format);
  data.test_fraction = manifest.test_fraction;
  data.split_seed = manifest.seed;
  data.split_mode = manifest.mode;
  const SplitDataset split = LoadSplit(data);
  if (split.num_users != manifest.num_users ||
      split.num_items != manifest.num_items ||
      split.num_train() != manifest.num_train ||
      split.num_test() != manifest.num_test) {
    throw DataError("dataset " + data.path.string() +
                    " does not reproduce the split in " +
                    manifest_path.string());
  }
  auto [table, header] = LoadCheckpoint(ckpt);
  if (table.num_users() != split.num_users ||
      table.num_items() != split.num_items) {
    std::ostringstream os;
    os << "incompatible checkpoint: catalog " << table.num_users() << " users x "
       << table.num_items() << " items, dataset has " << split.num_users
       << " x " << split.num_items;
    throw ConfigError(os.str());
  }
  if (header.encoder == EncoderKind::kLightGcn) {
    const auto graph = BipartiteGraph::FromAdjacency(split.num_items,
                                                     split.train_pos);
    table = LightGcnPropagate(table, graph, header.num_layers);
  }
  EvalOptions eval;
  eval.ks = o.topk;
  const RankingMetrics metrics = Evaluate(table, split, eval);
  WriteMetricsTsv(out, metrics);
  if (!o.out.empty()) {
    std::ofstream os(o.out);
    if (!os) throw DataError("cannot write " + o.out);
    WriteMetricsTsv(os, metrics);
  }
  return kOk;
}

void EmitSuite(const std::string& name, const SuiteResult& r,
               const std::string& out_dir, std::ostream& out,
               std::ostream& err) {
  out << name << '\t' << (r.passed() ? "PASS" : "FAIL") << '\t'
      << r.rows.size() << " cells\n";
  for (const auto& f : r.failures) err << name << " failed: " << f << '\n';
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream os(fs::path(out_dir) / (name + ".tsv"));
    if (!os) throw DataError("cannot write into " + out_dir);
    WriteSynthTsv(os, r.rows);
  }
}

int CmdVerify(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.trials && *o.trials < kMinTrials) {
    throw ConfigError("--trials must be at least " +
                      std::to_string(kMinTrials));
  }
  const std::set<std::string> valid = {"1", "2", "3", "all"};
  if (!valid.contains(o.lemma)) {
    throw ConfigError("--lemma must be 1, 2, 3 or all");
  }
  const bool all = o.lemma == "all";
  bool ok = true;
  if (all || o.lemma == "1") {
    const auto r =
        VerifyUnbiasedness(o.worlds, o.trials.value_or(100000), o.seed);
    EmitSuite("lemma1", r, o.out, out, err);
    ok = ok && r.passed();
  }
  if (all || o.lemma == "2") {
    const auto r = VerifyConsistency(o.worlds, 20, o.seed + 1);
    EmitSuite("lemma2", r, o.out, out, err);
    ok = ok && r.passed();
  }
  if (all || o.lemma == "3") {
    const std::size_t trials = o.trials.value_or(2000);
    if (o.lemma_n || o.lemma_m || o.lemma_tau) {
      // Single cell: report the observed gap against the bound.
      const std::size_t n = o.lemma_n.value_or(100);
      const std::size_t m = o.lemma_m.value_or(n);
      const double tau = o.lemma_tau.value_or(0.0);
      SuiteResult r;
      std::mt19937_64 rng(o.seed + 2);
      for (std::size_t w = 0; w < 3; ++w) {
        const SyntheticPU world =
            RandomWorld(rng(), 6, 10, 0.0, 1.0, ClassPrior(tau));
        const auto b = BoundCheckExperiment(world, m, n, trials, rng());
        const std::string name = "w" + std::to_string(w);
        r.rows.push_back({name, tau, m, n, b.mean_gap, b.p99_gap, b.p99_gap,
                          b.bound});
        out << name << "\ttau=" << tau << "\tM=" << m << "\tN=" << n
            << "\tmean_gap=" << b.mean_gap << "\tp99_gap=" << b.p99_gap
            << "\tmax_gap=" << b.max_gap << "\tbound=" << b.bound << '\n';
        if (!(b.p99_gap <= b.bound)) {
          r.failures.push_back(name + ": p99 gap above bound");
        }
      }
      EmitSuite("lemma3", r, o.out, out, err);
      ok = ok && r.passed();
    } else {
      BoundGrid grid;
      grid.trials = trials;
      const auto r = VerifyBound(grid, o.seed + 2);
      EmitSuite("lemma3", r, o.out, out, err);
      ok = ok && r.passed();
    }
  }
  return ok ? kOk : kVerifyFailed;
}

void ApplyCell(const std::map<std::string, std::string>& cell, Options& o) {
  for (const auto& [key, value] : cell) {
    try {
      if (key == "loss") {
        o.loss = value;
      } else if (key == "m") {
        o.m = std::stoul(value);
      } else if (key == "n") {
        o.n = std::stoul(value);
      } else if (key == "tau") {
        o.tau = std::stod(value);
      } else if (key == "beta") {
        o.beta = std::stod(value);
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad grid value " + key + "=" + value);
    }
  }
}

int CmdSweep(const Options& o, std::ostream& out, std::ostream& err) {
  const auto cells = ExpandGrid(ParseGrid(o.grid));
  // Resolve every cell before spending time on training.
  std::vector<TrainConfig> configs;
  for (const auto& cell : cells) {
    Options co = o;
    ApplyCell(cell, co);
    // No extra positives means no correction term.
    if (co.m == 0 && co.tau > 0.0) co.tau = 0.0;
    configs.push_back(MakeTrainConfig(co));
  }
  const DatasetOptions data = MakeDatasetOptions(o);
  const SplitDataset split = LoadSplit(data);

  std::ofstream file;
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    file.open(fs::path(o.out) / "sweep.tsv");
    if (!file) throw DataError("cannot write into " + o.out);
  }
  auto emit = [&](const std::string& line) {
    out << line;
    if (file.is_open()) file << line;
  };
  emit("cell\tloss\tm\tn\ttau\tbeta\tmetric\tvalue\n");
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const TrainConfig& c = configs[i];
    if (!o.quiet) {
      err << "cell " << i << ": loss=" << LossKindName(c.loss.kind)
          << " m=" << c.loss.m_extra_pos << " n=" << c.loss.n_neg
          << " tau=" << c.loss.prior.tau_plus() << " beta=" << c.loss.beta
          << '\n';
    }
    const TrainResult r = TrainOnSplit(split, c, o.quiet ? nullptr : &err);
    std::ostringstream prefix;
    prefix << i << '\t' << LossKindName(c.loss.kind) << '\t'
           << c.loss.m_extra_pos << '\t' << c.loss.n_neg << '\t'
           << FormatNumber(c.loss.prior.tau_plus()) << '\t'
           << FormatNumber(c.loss.beta) << '\t';
    std::ostringstream rows;
    rows << std::setprecision(10);
    const RankingMetrics& mt = r.final_metrics;
    for (const auto& [k, v] : mt.precision) {
      rows << prefix.str() << "P@" << k << '\t' << v << '\n';
      rows << prefix.str() << "R@" << k << '\t' << mt.recall.at(k) << '\n';
      rows << prefix.str() << "NDCG@" << k << '\t' << mt.ndcg.at(k) << '\n';
    }
    rows << prefix.str() << "AUC\t" << mt.auc << '\n';
    emit(rows.str());
  }
  if (!o.out.empty()) {
    WriteRunManifest(fs::path(o.out) / "run.manifest", "sweep", o,
                     MakeTrainConfig(o), data, {"sweep.tsv"});
  }
  return kOk;
}

std::vector<std::string> ExpandRange(const std::string& key,
                                     const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ':')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::logic_error&) {
      throw ConfigError("bad range '" + text + "' for " + key);
    }
  }
  if (parts.size() != 3 || !(parts[2] > 0.0) || parts[1] < parts[0]) {
    throw ConfigError("range for " + key + " must be lo:hi:step with step > 0");
  }
  const double lo = parts[0], hi = parts[1], step = parts[2];
  const auto count =
      static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) {
    // Round away accumulated binary error (0.1 * 3 -> 0.3).
    const double v = std::round((lo + static_cast<double>(i) * step) * 1e10) /
                     1e10;
    out.push_back(FormatNumber(v));
  }
  return out;
}

}  // namespace

std::vector<GridAxis> ParseGrid(const std::vector<std::string>& specs) {
  static const std::set<std::string> kKeys = {"loss", "m", "n", "tau", "beta"};
  if (specs.empty()) throw ConfigError("empty grid: pass --grid key=values");
  std::vector<GridAxis> axes;
  std::set<std::string> seen;
  for (const auto& spec : specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("grid entry '" + spec + "' is not key=values");
    }
    GridAxis axis;
    axis.key = spec.substr(0, eq);
    if (!kKeys.contains(axis.key)) {
      throw ConfigError("cannot sweep '" + axis.key +
                        "' (expected loss, m, n, tau or beta)");
    }
    if (!seen.insert(axis.key).second) {
      throw ConfigError("grid key '" + axis.key + "' given twice");
    }
    const std::string rhs = spec.substr(eq + 1);
    if (rhs.find(':') != std::string::npos) {
      axis.values = ExpandRange(axis.key, rhs);
    } else {
      std::stringstream ss(rhs);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) axis.values.push_back(tok);
      }
    }
    if (axis.values.empty()) {
      throw ConfigError("empty grid for '" + axis.key + "'");
    }
    axes.push_back(std::move(axis));
  }
  return axes;
}

std::vector<std::map<std::string, std::string>> ExpandGrid(
    const std::vector<GridAxis>& axes) {
  std::vector<std::map<std::string, std::string>> cells = {{}};
  for (const auto& axis : axes) {
    std::vector<std::map<std::string, std::string>> next;
    for (const auto& cell : cells) {
      for (const auto& v : axis.values) {
        auto c = cell;
        c[axis.key] = v;
        next.push_back(std::move(c));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

fs::path ResolveDataPath(const std::string& flag) {
  const char* env = std::getenv("DPL_DATA_DIR");
  if (flag.empty()) {
    if (env != nullptr && *env != '\0') {
      return fs::path(env) / "ml-100k" / "u.data";
    }
    return fs::path("data") / "ml-100k" / "u.data";
  }
  fs::path p(flag);
  if (p.is_relative() && !fs::exists(p) && env != nullptr && *env != '\0') {
    const fs::path alt = fs::path(env) / p;
    if (fs::exists(alt)) return alt;
  }
  return p;
}

int RunCli(int argc, const char* const* argv, std::ostream& out,
           std::ostream& err) {
  Options o;
  CLI::App app{"Debiased pairwise loss toolkit for implicit-feedback "
               "recommendation"};
  app.name("dpl");
  app.set_version_flag("--version", DPL_VERSION);
  app.set_config("--config", "", "key=value file; command-line flags win");
  app.allow_config_extras(CLI::config_extras_mode::ignore);
  app.require_subcommand(1);

  app.add_option("--data", o.data,
                 "Interaction file (default $DPL_DATA_DIR/ml-100k/u.data)");
  app.add_option("--format", o.format, "tab | double-colon | comma | <delim>")
      ->capture_default_str();
  app.add_option("--test-fraction", o.test_fraction, "Holdout fraction")
      ->capture_default_str();
  app.add_option("--split-seed", o.split_seed, "Split seed (default --seed)");
  app.add_option("--split-mode", o.split_mode, "global | per-user")
      ->capture_default_str();
  app.add_option("--model", o.model, "mf | lightgcn")->capture_default_str();
  app.add_option("--layers", o.layers, "LightGCN layers")
      ->capture_default_str();
  app.add_option("--dim", o.dim, "Embedding size")->capture_default_str();
  app.add_option("--init-scale", o.init_scale, "Init standard deviation")
      ->capture_default_str();
  app.add_option("--loss", o.loss, "bpr | infonce | dcl | hcl | dpl")
      ->capture_default_str();
  app.add_option("--tau", o.tau, "Positive class prior tau+ (verify: lemma 3)")
      ->capture_default_str();
  app.add_option("--m", o.m, "Extra positives per entry (verify: lemma 3 M)")
      ->capture_default_str();
  app.add_option("--n", o.n, "Unlabeled samples per entry (verify: lemma 3 N)")
      ->capture_default_str();
  app.add_option("--beta", o.beta, "HCL hardness")->capture_default_str();
  app.add_option("--lambda", o.lambda, "L2 weight")->capture_default_str();
  app.add_option("--clamp-floor", o.clamp_floor, "Probability floor")
      ->capture_default_str();
  app.add_option("--epochs", o.epochs, "Epochs")->capture_default_str();
  app.add_option("--batch", o.batch, "Mini-batch size")->capture_default_str();
  app.add_option("--lr", o.lr, "Learning rate (default 0.001 adam, 0.01 sgd)");
  app.add_option("--optimizer", o.optimizer, "adam | sgd")
      ->capture_default_str();
  app.add_option("--seed", o.seed, "Seed for every random stream")
      ->capture_default_str();
  app.add_option("--eval-every", o.eval_every,
                 "Evaluate every k epochs (0: last only)")
      ->capture_default_str();
  app.add_option("--out", o.out, "Output directory (evaluate: TSV file)");
  app.add_option("--topk", o.topk, "Cut-offs, e.g. 5,10,20")
      ->delimiter(',')
      ->capture_default_str();
  app.add_option("--run", o.run, "Run directory written by train");
  app.add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  app.add_option("--split", o.split, "Split manifest file");
  app.add_option("--lemma", o.lemma, "1 | 2 | 3 | all")->capture_default_str();
  app.add_option("--trials", o.trials, "Monte-Carlo trials (>= 1000)");
  app.add_option("--worlds", o.worlds, "Synthetic worlds for lemmas 1-2")
      ->capture_default_str();
  app.add_option("--grid", o.grid,
                 "Sweep axis key=v1,v2 or key=lo:hi:step; repeatable");
  app.add_flag("--quiet", o.quiet, "No progress log on stderr");

  auto* train = app.add_subcommand("train", "Train and write a run directory");
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint");
  auto* verify = app.add_subcommand("verify", "Monte-Carlo estimator checks");
  auto* sweep = app.add_subcommand("sweep", "Train over a hyperparameter grid");
  for (auto* sub : {train, evaluate, verify, sweep}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kConfigError;
  }

  // In `verify`, --n/--m/--tau pick a single lemma 3 cell.
  if (verify->parsed()) {
    if (app.count("--n") > 0) o.lemma_n = o.n;
    if (app.count("--m") > 0) o.lemma_m = o.m;
    if (app.count("--tau") > 0) o.lemma_tau = o.tau;
  }

  try {
    if (train->parsed()) return CmdTrain(o, out, err);
    if (evaluate->parsed()) return CmdEvaluate(o, out);
    if (verify->parsed()) return CmdVerify(o, out, err);
    return CmdSweep(o, out, err);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DomainError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  }
}

}  // namespace dpl::cli
