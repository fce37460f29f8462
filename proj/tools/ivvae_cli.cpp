#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivvae/experiment.hpp"
#include "ivvae/oracle_check.hpp"
#include "ivvae/report.hpp"

namespace fs = std::filesystem;
using namespace ivvae;
using experiment::RunConfig;

namespace {

enum ExitCode { kOk = 0, kCheckFailed = 1, kConfig = 2, kData = 3, kDiverged = 4, kInternal = 5 };

struct TrainArgs {
  std::string dataset = "mnist";
  std::string variant = "ivvae1";
  std::optional<double> label_fraction, lambda, beta, beta_z, gamma_y, gamma_z, rho, alpha, delta;
  std::optional<double> lr, temperature;
  std::optional<uint64_t> seed, split_seed;
  std::optional<int64_t> epochs, batch, batch_labeled, max_train_rows, max_eval_rows, eval_batch;
  std::optional<int> z_dims, threads, bins;
  std::string out = "run";
  std::string data, manifest;
  bool lenient = false;
};

RunConfig build_config(const TrainArgs& a) {
  auto c = RunConfig::preset(a.dataset);
  c.variant = parse_variant(a.variant);
  auto& w = c.weights;
  if (a.rho) {
    w.rho = *a.rho;
    w.alpha.reset();
  }
  if (a.alpha) w.alpha = *a.alpha;
  if (a.lambda) w.lambda = *a.lambda;
  if (a.beta) w.beta = *a.beta;
  if (a.beta_z) w.beta_z = *a.beta_z;
  if (a.gamma_y) w.gamma_y = *a.gamma_y;
  if (a.gamma_z) w.gamma_z = *a.gamma_z;
  if (a.delta) w.delta = *a.delta;
  if (a.label_fraction) c.label_fraction = *a.label_fraction;
  if (a.seed) c.seed = *a.seed;
  if (a.split_seed) c.split_seed = *a.split_seed;
  if (a.epochs) c.epochs = *a.epochs;
  if (a.lr) c.learning_rate = *a.lr;
  if (a.temperature) c.temperature = *a.temperature;
  if (a.batch) c.batch.total = *a.batch;
  if (a.batch_labeled) c.batch.labeled = *a.batch_labeled;
  if (a.z_dims) c.z_dims = *a.z_dims;
  if (a.max_train_rows) c.max_train_rows = *a.max_train_rows;
  if (a.max_eval_rows) c.max_eval_rows = *a.max_eval_rows;
  if (a.eval_batch) c.eval_batch = *a.eval_batch;
  if (a.bins) c.eval_bins = *a.bins;
  if (a.threads) c.threads = *a.threads;
  c.out_dir = a.out;
  c.data_path = a.data;
  c.split_manifest = a.manifest;
  c.strict_data = !a.lenient;
  c.validate();
  return c;
}

int run_train(const TrainArgs& a) {
  const auto cfg = build_config(a);
  const auto res = experiment::train(cfg);
  nlohmann::json out{{"out_dir", cfg.out_dir},
                     {"config_hash", cfg.hash()},
                     {"best_epoch", res.best_epoch},
                     {"best_val_total", res.best_val_total},
                     {"best_checkpoint", res.best_checkpoint},
                     {"test", metrics::to_json(res.test.report)}};
  std::cout << out.dump(2) << '\n';
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, manifest, data, split = "test", out = "eval";
  std::optional<uint64_t> noise_seed;
  bool lenient = false;
};

RunConfig checkpoint_config(const std::string& path) {
  const auto ck = load_checkpoint(path);
  if (!ck.metadata.contains("config")) throw FormatError("checkpoint " + path + " carries no run configuration");
  return RunConfig::from_json(ck.metadata.at("config"));
}

int run_evaluate(const EvalArgs& a) {
  auto cfg = checkpoint_config(a.checkpoint);
  if (!a.data.empty()) cfg.data_path = a.data;
  if (a.lenient) cfg.strict_data = false;
  const auto manifest = a.manifest.empty() ? (fs::path(a.checkpoint).parent_path() / "split.json").string() : a.manifest;
  const auto split = data::load_manifest(manifest);
  const auto ds = experiment::load_config_dataset(cfg);
  if (split.dataset != ds.name) throw ConfigError("split manifest is for '" + split.dataset + "'");
  split.validate(ds);
  const std::vector<int64_t>* rows = nullptr;
  if (a.split == "test") rows = &split.test;
  else if (a.split == "val") rows = &split.val;
  else if (a.split == "train") rows = &split.train;
  else throw ConfigError("unknown split '" + a.split + "'");
  const auto res = experiment::evaluate_checkpoint(a.checkpoint, ds, *rows, a.noise_seed);
  fs::create_directories(a.out);
  auto report = metrics::to_json(res.report);
  std::ofstream(fs::path(a.out) / "mi_report.json") << report.dump(2) << '\n';
  std::ofstream(fs::path(a.out) / "mi_matrix.csv") << metrics::mi_matrix_csv(res.report);
  std::ofstream(fs::path(a.out) / "breakdown.json") << res.breakdown.to_json().dump(2) << '\n';
  std::cout << nlohmann::json{{"split", a.split}, {"rows", rows->size()}, {"report", report},
                              {"breakdown", res.breakdown.to_json()}}
                   .dump(2)
            << '\n';
  return kOk;
}

struct ReportArgs {
  std::vector<std::string> ledgers, metrics;
  std::string out = "report", x_key = "lambda";
  std::string checkpoint, data, manifest;
  int images = 4;
  int cols = 11;
};

int run_report(const ReportArgs& a) {
  report::ReportOptions opt;
  opt.x_key = a.x_key;
  if (!a.metrics.empty()) opt.metrics = a.metrics;
  auto files = a.ledgers.empty() ? std::vector<std::string>{} : report::write_report(a.ledgers, a.out, opt);
  if (!a.checkpoint.empty()) {
    auto cfg = checkpoint_config(a.checkpoint);
    if (!a.data.empty()) cfg.data_path = a.data;
    const auto ds = experiment::load_config_dataset(cfg);
    const auto manifest =
        a.manifest.empty() ? (fs::path(a.checkpoint).parent_path() / "split.json").string() : a.manifest;
    const auto split = data::load_manifest(manifest);
    if (split.dataset != ds.name) throw ConfigError("split manifest is for '" + split.dataset + "'");
    const auto n = std::min<int64_t>(a.images, static_cast<int64_t>(split.test.size()));
    if (n < 1) throw ConfigError("report: need at least one test image");
    const std::vector<int64_t> rows(split.test.begin(), split.test.begin() + n);
    auto ck = load_checkpoint(a.checkpoint);
    const auto more = report::write_generation_figures(ck.state, ds.images.gather(rows), a.out, a.cols);
    files.insert(files.end(), more.begin(), more.end());
  }
  if (files.empty()) throw ConfigError("report: give ledgers, a checkpoint, or both");
  for (const auto& f : files) std::cout << f << '\n';
  return kOk;
}

struct OracleArgs {
  oracle::OracleCheckOptions opt;
  std::string out;
};

int run_oracle_check(const OracleArgs& a) {
  const auto rep = oracle::run_oracle_check(a.opt);
  const auto text = rep.to_json().dump(2);
  if (!a.out.empty()) std::ofstream(a.out) << text << '\n';
  std::cout << text << '\n';
  return rep.pass() ? kOk : kCheckFailed;
}

// Fills options not given on the command line from a key=value (INI) file.
void apply_config_file(CLI::App& sub, const std::string& path) {
  for (const auto& item : CLI::ConfigINI().from_file(path)) {
    if (item.name == "++" || item.name == "--") continue;
    auto* opt = sub.get_option_no_throw("--" + item.name);
    if (opt == nullptr || item.name == "config") throw CLI::ConfigError::Extras(item.fullname());
    if (opt->count() > 0) continue;
    opt->add_result(item.inputs);
    opt->run_callback();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised disentangling VAEs: training, evaluation, figures and oracle checks"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train one model and write its ledger, checkpoints and test report");
  std::string config_file;
  train->add_option("--config", config_file, "key=value file; command-line flags take precedence")
      ->check(CLI::ExistingFile);
  train->add_option("--dataset", ta.dataset)->check(CLI::IsMember({"dsprites", "mnist", "fashion"}));
  train->add_option("--variant", ta.variant,
                    "vae|beta-vae|beta-tcvae1|beta-tcvae2|jointvae|ivvae1|ivvae2");
  train->add_option("--label-fraction", ta.label_fraction);
  train->add_option("--lambda", ta.lambda);
  train->add_option("--beta", ta.beta);
  train->add_option("--beta-z", ta.beta_z);
  train->add_option("--gamma-y", ta.gamma_y);
  train->add_option("--gamma-z", ta.gamma_z);
  train->add_option("--delta", ta.delta);
  auto* rho = train->add_option("--rho", ta.rho, "alpha = rho (N_L + N_U) / N_L");
  train->add_option("--alpha", ta.alpha, "classification weight, overrides the preset")->excludes(rho);
  train->add_option("--seed", ta.seed);
  train->add_option("--split-seed", ta.split_seed);
  train->add_option("--epochs", ta.epochs);
  train->add_option("--lr", ta.lr);
  train->add_option("--temperature", ta.temperature);
  train->add_option("--batch", ta.batch, "total batch size");
  train->add_option("--batch-labeled", ta.batch_labeled, "labeled samples per batch");
  train->add_option("--z-dims", ta.z_dims);
  train->add_option("--max-train-rows", ta.max_train_rows, "restrict the split (smoke runs)");
  train->add_option("--max-eval-rows", ta.max_eval_rows);
  train->add_option("--eval-batch", ta.eval_batch);
  train->add_option("--bins", ta.bins, "histogram bins for the MI metrics");
  train->add_option("--threads", ta.threads);
  train->add_option("--out", ta.out);
  train->add_option("--data", ta.data, "dataset file or directory (default: under $IVVAE_DATA_ROOT)");
  train->add_option("--manifest", ta.manifest, "reuse a saved split manifest");
  train->add_flag("--lenient", ta.lenient, "skip dataset consistency checks");

  EvalArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a split and write MIReport JSON and CSV");
  evaluate->add_option("checkpoint", ea.checkpoint)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--manifest", ea.manifest, "split manifest (default: split.json next to the checkpoint)");
  evaluate->add_option("--split", ea.split)->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_option("--data", ea.data);
  evaluate->add_option("--noise-seed", ea.noise_seed);
  evaluate->add_option("--out", ea.out);
  evaluate->add_flag("--lenient", ea.lenient);

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "Curves over seeds, MI heatmaps, traversals and style grids");
  report->add_option("ledgers", ra.ledgers, "ledger.jsonl files");
  report->add_option("--out", ra.out);
  report->add_option("--x", ra.x_key, "weight on the horizontal axis");
  report->add_option("--metric", ra.metrics, "metrics to plot (repeatable)");
  report->add_option("--checkpoint", ra.checkpoint, "also draw traversals and style grids")->check(CLI::ExistingFile);
  report->add_option("--data", ra.data);
  report->add_option("--manifest", ra.manifest);
  report->add_option("--images", ra.images)->check(CLI::PositiveNumber);
  report->add_option("--cols", ra.cols)->check(CLI::Range(2, 101));

  OracleArgs oa;
  auto* oc = app.add_subcommand("oracle-check", "Exact-enumeration identities and estimator calibration");
  oc->add_option("--seed", oa.opt.seed);
  oc->add_option("--joints", oa.opt.random_joints)->check(CLI::PositiveNumber);
  oc->add_option("--samples", oa.opt.calibration_samples)->check(CLI::PositiveNumber);
  oc->add_option("--calibration-seeds", oa.opt.calibration_seeds)->check(CLI::PositiveNumber);
  oc->add_option("--tolerance", oa.opt.calibration_tolerance);
  oc->add_option("--out", oa.out, "also write the JSON report here");

  CLI11_PARSE(app, argc, argv);
  if (!config_file.empty()) {
    try {
      apply_config_file(*train, config_file);
    } catch (const CLI::Error& e) {
      return app.exit(e);
    }
  }

  try {
    if (*train) return run_train(ta);
    if (*evaluate) return run_evaluate(ea);
    if (*report) return run_report(ra);
    if (*oc) return run_oracle_check(oa);
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IngestionError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternal;
  }
  return kOk;
}
