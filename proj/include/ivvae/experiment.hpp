#pragma once

// Run configuration, training loop with best-validation selection,
// evaluation, and the append-only run ledger (JSON lines + metrics CSV).

#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivvae/data.hpp"
#include "ivvae/metrics.hpp"
#include "ivvae/model.hpp"
#include "ivvae/objectives.hpp"

namespace ivvae::experiment {

using metrics::kDefaultBins;
using metrics::LatentCodes;
using metrics::mi_matrix_csv;
using metrics::mi_report;
using metrics::MIReport;
using metrics::to_json;

struct RunConfig {
  std::string dataset = "mnist";
  ModelVariant variant = ModelVariant::iv_vae_1;
  LossWeights weights;
  data::BatchSpec batch;
  double label_fraction = 0.02;
  uint64_t seed = 0;        // weight init, batch order and sampling noise
  uint64_t split_seed = 0;  // train/val/test partition and labeled subset
  int64_t epochs = 200;
  double learning_rate = 1e-3;
  double temperature = 0.67;
  int z_dims = 10;
  std::string out_dir = "run";
  std::string data_path;       // dataset file or directory; empty means look under $IVVAE_DATA_ROOT
  std::string split_manifest;  // reuse a saved split instead of drawing one
  bool strict_data = true;
  int64_t max_train_rows = 0;  // smoke runs: restrict the split, 0 keeps everything
  int64_t max_eval_rows = 0;
  int eval_bins = kDefaultBins;
  int64_t eval_batch = 1000;
  int threads = 0;  // 0 leaves torch's default

  /// Per-dataset defaults.
  static RunConfig preset(const std::string& dataset) {
    RunConfig c;
    c.dataset = dataset;
    c.batch = data::BatchSpec::for_dataset(dataset);
    if (dataset == "dsprites") {
      c.epochs = 100;
      c.temperature = 0.75;
      c.z_dims = 6;
      c.weights.alpha = 51.0;
    } else if (dataset == "mnist") {
      c.epochs = 200;
      c.temperature = 0.67;
      c.z_dims = 10;
      c.weights.alpha = 5.1;
    } else if (dataset == "fashion") {
      c.epochs = 200;
      c.temperature = 0.75;
      c.z_dims = 10;
      c.weights.alpha = 40.8;
    } else {
      throw ConfigError("unknown dataset '" + dataset + "'");
    }
    return c;
  }

  void validate() const {
    if (dataset != "dsprites" && dataset != "mnist" && dataset != "fashion") {
      throw ConfigError("RunConfig: unknown dataset '" + dataset + "'");
    }
    batch.validate();
    if (!(label_fraction > 0.0 && label_fraction <= 1.0)) throw ConfigError("RunConfig: label fraction must be in (0, 1]");
    if (epochs < 1) throw ConfigError("RunConfig: epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("RunConfig: learning rate must be positive");
    if (!(temperature > 0.0)) throw ConfigError("RunConfig: temperature must be positive");
    if (z_dims < 1) throw ConfigError("RunConfig: z_dims must be >= 1");
    if (eval_bins < 2) throw ConfigError("RunConfig: eval_bins must be >= 2");
    if (eval_batch < 2) throw ConfigError("RunConfig: eval_batch must be >= 2");
    if (max_train_rows < 0 || max_eval_rows < 0) throw ConfigError("RunConfig: row limits must be nonnegative");
    // variant/weight compatibility; sizes only matter for alpha, and joint_vae
    // gets its default capacity schedule at training time
    LossWeights w = weights;
    if (variant == ModelVariant::joint_vae && !w.capacity) w.capacity = CapacitySchedule::default_for(2, 2);
    resolve_weights(w, variant, 1, 1);
  }

  nlohmann::json to_json() const {
    return {{"dataset", dataset},
            {"variant", to_string(variant)},
            {"weights", weights.to_json()},
            {"batch_total", batch.total},
            {"batch_labeled", batch.labeled},
            {"label_fraction", label_fraction},
            {"seed", seed},
            {"split_seed", split_seed},
            {"epochs", epochs},
            {"learning_rate", learning_rate},
            {"temperature", temperature},
            {"z_dims", z_dims},
            {"out_dir", out_dir},
            {"data_path", data_path},
            {"split_manifest", split_manifest},
            {"strict_data", strict_data},
            {"max_train_rows", max_train_rows},
            {"max_eval_rows", max_eval_rows},
            {"eval_bins", eval_bins},
            {"eval_batch", eval_batch}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    try {
      RunConfig c = preset(j.at("dataset").get<std::string>());
      c.variant = parse_variant(j.at("variant").get<std::string>());
      c.weights = LossWeights::from_json(j.at("weights"));
      c.batch = {j.at("batch_total").get<int64_t>(), j.at("batch_labeled").get<int64_t>()};
      c.label_fraction = j.at("label_fraction").get<double>();
      c.seed = j.at("seed").get<uint64_t>();
      c.split_seed = j.value("split_seed", uint64_t{0});
      c.epochs = j.at("epochs").get<int64_t>();
      c.learning_rate = j.at("learning_rate").get<double>();
      c.temperature = j.at("temperature").get<double>();
      c.z_dims = j.at("z_dims").get<int>();
      c.out_dir = j.value("out_dir", c.out_dir);
      c.data_path = j.value("data_path", std::string());
      c.split_manifest = j.value("split_manifest", std::string());
      c.strict_data = j.value("strict_data", true);
      c.max_train_rows = j.value("max_train_rows", int64_t{0});
      c.max_eval_rows = j.value("max_eval_rows", int64_t{0});
      c.eval_bins = j.value("eval_bins", kDefaultBins);
      c.eval_batch = j.value("eval_batch", int64_t{1000});
      return c;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("RunConfig: ") + e.what());
    }
  }

  /// FNV-1a over the canonical JSON of everything that affects results.
  std::string hash() const {
    auto j = to_json();
    j.erase("out_dir");
    const std::string text = j.dump();
    uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) h = (h ^ ch) * 1099511628211ull;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

// ---------------------------------------------------------------------------
// Ledger

inline const std::vector<std::string>& metrics_csv_columns() {
  static const std::vector<std::string> c{"epoch",   "split", "recon",  "cls",       "vec_idp", "tc_z",
                                          "tc_yz",   "reg_y", "reg_z",  "total",     "elbo",    "mig_all",
                                          "mig_class", "mig_style", "i_y_t", "i_z_t", "cls_error"};
  return c;
}

/// Append-only JSON-lines ledger plus the per-epoch metrics CSV.
class RunLedger {
 public:
  explicit RunLedger(const std::string& dir)
      : jsonl_path_((std::filesystem::path(dir) / "ledger.jsonl").string()),
        csv_path_((std::filesystem::path(dir) / "metrics.csv").string()) {
    std::filesystem::create_directories(dir);
    const bool fresh_csv = !std::filesystem::exists(csv_path_);
    jsonl_.open(jsonl_path_, std::ios::app);
    csv_.open(csv_path_, std::ios::app);
    if (!jsonl_ || !csv_) throw ConfigError("RunLedger: cannot write to " + dir);
    if (fresh_csv) {
      std::string header;
      for (const auto& c : metrics_csv_columns()) header += (header.empty() ? "" : ",") + c;
      csv_ << header << '\n' << std::flush;
    }
  }

  const std::string& jsonl_path() const { return jsonl_path_; }
  const std::string& csv_path() const { return csv_path_; }

  void append(const nlohmann::json& record) {
    std::lock_guard<std::mutex> lock(mu_);
    jsonl_ << record.dump() << '\n' << std::flush;
  }

  void append_metrics(int64_t epoch, const std::string& split, const ObjectiveBreakdown& b,
                      const std::optional<MIReport>& report) {
    auto cell = [](double v) {
      if (!std::isfinite(v)) return std::string();
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.10g", v);
      return std::string(buf);
    };
    const double nan = std::nan("");
    const std::vector<double> values{b.recon_l + b.recon_u,
                                     b.cls,
                                     b.vec_idp,
                                     b.tc_z,
                                     b.tc_yz,
                                     b.reg_y,
                                     b.reg_z,
                                     b.total,
                                     b.elbo_eval,
                                     report ? report->mig_all : nan,
                                     report ? report->mig_class : nan,
                                     report ? report->mig_style : nan,
                                     report ? report->i_y_t : nan,
                                     report ? report->i_z_t : nan,
                                     report ? report->cls_error : nan};
    std::string line = std::to_string(epoch) + "," + split;
    for (double v : values) line += "," + cell(v);
    std::lock_guard<std::mutex> lock(mu_);
    csv_ << line << '\n' << std::flush;
  }

 private:
  std::string jsonl_path_, csv_path_;
  std::ofstream jsonl_, csv_;
  std::mutex mu_;
};

inline std::vector<nlohmann::json> read_ledger(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("ledger: cannot open " + path);
  std::vector<nlohmann::json> out;
  std::string line;
  int64_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("ledger: line " + std::to_string(n) + " of " + path + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  ObjectiveBreakdown breakdown;  // averaged over fixed-composition chunks, elbo_eval filled
  MIReport report;
  LatentCodes codes;
};

struct EvalOptions {
  int bins = kDefaultBins;
  int64_t chunk = 1000;      // rows per objective chunk and per encode call
  double labeled_share = 0.5;  // labeled rows per objective chunk
  double temperature = 0.67;
  uint64_t noise_seed = 0;
};

namespace detail {

inline std::vector<std::pair<int64_t, int64_t>> chunks(int64_t n, int64_t size) {
  // equal-ish chunks, none smaller than two rows
  const int64_t k = std::max<int64_t>(1, n / std::max<int64_t>(size, 2));
  std::vector<std::pair<int64_t, int64_t>> out;
  for (int64_t c = 0; c < k; ++c) out.emplace_back(n * c / k, n * (c + 1) / k);
  return out;
}

inline torch::Generator generator(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

}  // namespace detail

/// Posterior means of z and class probabilities with the ground-truth factors.
inline LatentCodes encode_codes(ModelState& state, const data::Dataset& ds, const std::vector<int64_t>& rows,
                                int64_t chunk = 1000) {
  torch::NoGradGuard no_grad;
  state.train(false);
  LatentCodes codes;
  codes.num_samples = rows.size();
  codes.z_dims = state.arch.z_dims;
  codes.classes = state.arch.classes;
  codes.factor_names = ds.factors.names;
  codes.class_factor = static_cast<std::size_t>(ds.factors.class_factor);
  codes.factors.assign(ds.factors.names.size(), std::vector<int>(rows.size()));
  codes.z_means.reserve(rows.size() * codes.z_dims);
  codes.y_probs.reserve(rows.size() * codes.classes);
  for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(chunk)) {
    const std::vector<int64_t> part(rows.begin() + start,
                                    rows.begin() + std::min(rows.size(), start + static_cast<std::size_t>(chunk)));
    const auto post = encode(state, ds.images.gather(part));
    const auto mu = post.gaussian.mean.to(torch::kFloat64).contiguous();
    const auto psi = post.categorical.probs.to(torch::kFloat64).contiguous();
    codes.z_means.insert(codes.z_means.end(), mu.data_ptr<double>(), mu.data_ptr<double>() + mu.numel());
    codes.y_probs.insert(codes.y_probs.end(), psi.data_ptr<double>(), psi.data_ptr<double>() + psi.numel());
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int k = 0; k < ds.factors.num_factors(); ++k) codes.factors[k][i] = ds.factors.at(rows[i], k);
  }
  state.train(true);
  return codes;
}

/// Objective breakdown, evaluation ELBO and MI report on `rows`. All noise
/// comes from a generator seeded by `opt.noise_seed`, so repeated calls agree.
inline EvalResult evaluate(ModelState& state, const data::Dataset& ds, const std::vector<int64_t>& rows,
                           const ResolvedWeights& weights, const EvalOptions& opt = {}) {
  if (rows.size() < 2) throw ValidationError("evaluate: need at least two rows");
  torch::NoGradGuard no_grad;
  state.train(false);
  auto gen = detail::generator(opt.noise_seed);
  const SamplerConfig sampler{opt.temperature, false};
  const auto n = static_cast<int64_t>(rows.size());
  ObjectiveBreakdown sum;
  double elbo_sum = 0.0;
  const auto parts = detail::chunks(n, opt.chunk);
  for (const auto& [a, b] : parts) {
    const std::vector<int64_t> part(rows.begin() + a, rows.begin() + b);
    const int64_t m = b - a;
    int64_t n_l = std::llround(opt.labeled_share * static_cast<double>(m));
    if (weights.alpha > 0.0) n_l = std::max<int64_t>(n_l, 1);
    n_l = std::min(n_l, m);
    const std::vector<int64_t> lab(part.begin(), part.begin() + n_l), unl(part.begin() + n_l, part.end());
    data::SemiSupervisedBatch sb{lab, unl, 0, 0};
    const auto t = data::materialize(ds, sb);
    const auto out =
        assemble_total(state, {t.labeled_images, t.labels}, t.unlabeled_images, weights, {n, 0, sampler, &gen});
    sum += out.breakdown.scaled(static_cast<double>(m));
    elbo_sum += elbo_eval(state, ds.images.gather(part), gen, sampler).item<double>() * static_cast<double>(m);
  }
  EvalResult r;
  r.breakdown = sum.scaled(1.0 / static_cast<double>(n));
  r.breakdown.elbo_eval = elbo_sum / static_cast<double>(n);
  state.train(true);
  r.codes = encode_codes(state, ds, rows, opt.chunk);
  r.report = mi_report(r.codes, opt.bins);
  return r;
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  int64_t best_epoch = -1;
  double best_val_total = -std::numeric_limits<double>::infinity();
  std::string best_checkpoint;
  std::string last_checkpoint;
  EvalResult test;
  ObjectiveBreakdown first_batch;
  std::vector<ObjectiveBreakdown> train_epochs, val_epochs;
  ResolvedWeights weights;
};

/// Dataset named by the config: explicit path, or the standard layout under
/// $IVVAE_DATA_ROOT.
inline data::Dataset load_config_dataset(const RunConfig& cfg) {
  std::string path = cfg.data_path;
  if (path.empty()) {
    const auto root = data::data_root_from_env();
    if (!root) throw IngestionError("no dataset path given and IVVAE_DATA_ROOT is not set");
    const auto found = data::locate_dataset(*root, cfg.dataset);
    if (!found) throw IngestionError(cfg.dataset + " not found under " + *root);
    path = *found;
  }
  return data::load_dataset(cfg.dataset, path, cfg.strict_data);
}

inline data::SslSplit config_split(const RunConfig& cfg, const data::Dataset& ds) {
  data::SslSplit split;
  if (!cfg.split_manifest.empty()) {
    split = data::load_manifest(cfg.split_manifest);
    if (split.dataset != ds.name) throw ConfigError("split manifest is for '" + split.dataset + "'");
    split.validate(ds);
  } else {
    split = data::make_split(ds, data::SplitProtocol::for_dataset(ds), cfg.label_fraction, cfg.split_seed);
  }
  if (cfg.max_train_rows > 0 || cfg.max_eval_rows > 0) {
    split = data::restrict_split(ds, split, cfg.max_train_rows, cfg.max_eval_rows, cfg.split_seed);
  }
  return split;
}

inline ArchitectureDescriptor config_architecture(const RunConfig& cfg, const data::Dataset& ds) {
  return ArchitectureDescriptor::for_images(ds.images.size, cfg.z_dims, ds.classes);
}

inline ResolvedWeights config_weights(const RunConfig& cfg, const data::SslSplit& split, int classes,
                                      int64_t total_steps) {
  LossWeights w = cfg.weights;
  if (cfg.variant == ModelVariant::joint_vae && !w.capacity) w.capacity = CapacitySchedule::default_for(classes, total_steps);
  return resolve_weights(w, cfg.variant, static_cast<int64_t>(split.labeled.size()),
                         static_cast<int64_t>(split.train.size()));
}

/// Adam on -total, validation every epoch, checkpoint of the best validation
/// total, test evaluation of that checkpoint at the end.
inline TrainResult train(const RunConfig& cfg, const data::Dataset& ds, const data::SslSplit& split,
                         std::optional<ArchitectureDescriptor> arch_override = std::nullopt) {
  cfg.validate();
  if (cfg.threads > 0) torch::set_num_threads(cfg.threads);
  split.validate(ds);
  namespace fs = std::filesystem;
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  RunLedger ledger(cfg.out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  auto seconds = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  const auto arch = arch_override.value_or(config_architecture(cfg, ds));
  ModelState state(arch, cfg.seed);
  data::BatchStream stream(split, cfg.batch, cfg.seed);
  const int64_t steps = stream.steps_per_epoch();
  TrainResult result;
  result.weights = config_weights(cfg, split, ds.classes, steps * cfg.epochs);
  const auto& w = result.weights;
  const SamplerConfig sampler{cfg.temperature, false};
  const auto n_train = static_cast<int64_t>(split.train.size());
  EvalOptions eval_opt{cfg.eval_bins, cfg.eval_batch,
                       static_cast<double>(cfg.batch.labeled) / static_cast<double>(cfg.batch.total), cfg.temperature,
                       cfg.seed + 7};

  const auto manifest_path = (out / "split.json").string();
  data::save_manifest(split, manifest_path);
  result.best_checkpoint = (out / "best.ckpt").string();
  result.last_checkpoint = (out / "last.ckpt").string();
  ledger.append({{"type", "run_start"},
                 {"config", cfg.to_json()},
                 {"config_hash", cfg.hash()},
                 {"weights", w.to_json()},
                 {"jboth_batch", "pooled"},
                 {"architecture", arch.to_json()},
                 {"parameter_count", state.parameter_count()},
                 {"n_train", n_train},
                 {"n_labeled", split.labeled.size()},
                 {"n_val", split.val.size()},
                 {"n_test", split.test.size()},
                 {"steps_per_epoch", steps},
                 {"split_manifest", manifest_path}});

  torch::optim::Adam opt(state.parameters(),
                         torch::optim::AdamOptions(cfg.learning_rate).betas({0.9, 0.999}).eps(1e-8));
  auto gen = detail::generator(cfg.seed + 1);
  int64_t global_step = 0;
  ObjectiveBreakdown last;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    ObjectiveBreakdown sum;
    for (int64_t k = 0; k < steps; ++k, ++global_step) {
      const auto t = data::materialize(ds, stream.next());
      auto diverged = [&](const ObjectiveBreakdown& b, const std::string& why) {
        const nlohmann::json dump{{"type", "divergence"}, {"epoch", epoch}, {"step", global_step},
                                  {"reason", why}, {"breakdown", b.to_json()}};
        ledger.append(dump);
        std::ofstream(out / "divergence.json") << dump.dump(2) << '\n';
        throw DivergenceError("divergence at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(global_step) + " (" + why + "), last breakdown " + b.to_json().dump());
      };
      ObjectiveOutput o;
      try {
        o = assemble_total(state, {t.labeled_images, t.labels}, t.unlabeled_images, w,
                           {n_train, global_step, sampler, &gen});
      } catch (const NumericError& e) {
        diverged(last, e.what());
      }
      if (!std::isfinite(o.breakdown.total)) diverged(o.breakdown, "non-finite objective");
      last = o.breakdown;
      if (global_step == 0) {
        result.first_batch = o.breakdown;
        ledger.append({{"type", "first_batch"}, {"breakdown", o.breakdown.to_json()}});
      }
      opt.zero_grad();
      (-o.total).backward();
      opt.step();
      sum += o.breakdown;
    }
    const auto train_bd = sum.scaled(1.0 / static_cast<double>(steps));
    result.train_epochs.push_back(train_bd);
    ledger.append({{"type", "epoch"}, {"split", "train"}, {"epoch", epoch}, {"breakdown", train_bd.to_json()},
                   {"wall_seconds", seconds()}});
    ledger.append_metrics(epoch, "train", train_bd, std::nullopt);

    state.epoch = epoch;
    const auto val = evaluate(state, ds, split.val, w, eval_opt);
    result.val_epochs.push_back(val.breakdown);
    const bool best = val.breakdown.total > result.best_val_total;
    ledger.append({{"type", "epoch"},
                   {"split", "val"},
                   {"epoch", epoch},
                   {"breakdown", val.breakdown.to_json()},
                   {"report", to_json(val.report)},
                   {"is_best", best},
                   {"wall_seconds", seconds()}});
    ledger.append_metrics(epoch, "val", val.breakdown, val.report);
    const nlohmann::json meta{{"config", cfg.to_json()}, {"weights", w.to_json()}, {"val_total", val.breakdown.total}};
    save_checkpoint(state, result.last_checkpoint, meta);
    if (best) {
      result.best_epoch = epoch;
      result.best_val_total = val.breakdown.total;
      save_checkpoint(state, result.best_checkpoint, meta);
      ledger.append({{"type", "checkpoint"}, {"epoch", epoch}, {"path", result.best_checkpoint}, {"role", "best"}});
    }
  }

  auto best = load_checkpoint(result.best_checkpoint);
  result.test = evaluate(best.state, ds, split.test, w, eval_opt);
  ledger.append({{"type", "test"},
                 {"checkpoint_epoch", best.state.epoch},
                 {"best_epoch", result.best_epoch},
                 {"checkpoint", result.best_checkpoint},
                 {"breakdown", result.test.breakdown.to_json()},
                 {"report", to_json(result.test.report)}});
  ledger.append_metrics(best.state.epoch, "test", result.test.breakdown, result.test.report);
  std::ofstream(out / "test_report.json") << to_json(result.test.report).dump(2) << '\n';
  std::ofstream(out / "test_mi_matrix.csv") << mi_matrix_csv(result.test.report);
  ledger.append({{"type", "run_end"},
                 {"best_epoch", result.best_epoch},
                 {"best_val_total", result.best_val_total},
                 {"checkpoints", {result.best_checkpoint, result.last_checkpoint}},
                 {"wall_seconds", seconds()}});
  return result;
}

inline TrainResult train(const RunConfig& cfg) {
  const auto ds = load_config_dataset(cfg);
  return train(cfg, ds, config_split(cfg, ds));
}

/// Re-evaluates a checkpoint written by train() on the given rows.
inline EvalResult evaluate_checkpoint(const std::string& checkpoint, const data::Dataset& ds,
                                      const std::vector<int64_t>& rows,
                                      std::optional<uint64_t> noise_seed = std::nullopt) {
  auto ck = load_checkpoint(checkpoint);
  const auto& meta = ck.metadata;
  if (!meta.contains("config") || !meta.contains("weights")) {
    throw FormatError("checkpoint " + checkpoint + " carries no run configuration");
  }
  const auto cfg = RunConfig::from_json(meta.at("config"));
  if (cfg.dataset != ds.name) throw ConfigError("checkpoint was trained on '" + cfg.dataset + "'");
  const auto& wj = meta.at("weights");
  auto lw = LossWeights::from_json(wj);
  auto w = resolve_weights(lw, parse_variant(wj.at("variant").get<std::string>()), 1, 1);
  EvalOptions opt{cfg.eval_bins, cfg.eval_batch,
                  static_cast<double>(cfg.batch.labeled) / static_cast<double>(cfg.batch.total), cfg.temperature,
                  noise_seed.value_or(cfg.seed + 7)};
  return evaluate(ck.state, ds, rows, w, opt);
}

}  // namespace ivvae::experiment
