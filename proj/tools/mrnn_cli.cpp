// Command-line front end: generate / mask / train / impute / benchmark.
// Every subcommand echoes its resolved configuration to a manifest whose
// key=value lines can be replayed through --config.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mrnn/baselines.hpp"
#include "mrnn/dataset.hpp"
#include "mrnn/evaluation.hpp"
#include "mrnn/masking.hpp"
#include "mrnn/model.hpp"
#include "mrnn/synthetic.hpp"
#include "mrnn/train.hpp"

namespace {

namespace fs = std::filesystem;

std::string quote_if_needed(const std::string& v) {
  if (v.find_first_of(", \t") == std::string::npos) return v;
  return "\"" + v + "\"";
}

struct Manifest {
  std::vector<std::pair<std::string, std::string>> entries;

  void add(const std::string& key, const std::string& value) {
    entries.emplace_back(key, quote_if_needed(value));
  }
  void add(const std::string& key, double value) {
    entries.emplace_back(key, mrnn::detail::format_double(value));
  }
  void add(const std::string& key, long long value) {
    entries.emplace_back(key, std::to_string(value));
  }

  void write(const std::string& path, const std::string& subcommand) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest '" + path + "'");
    out << "# mrnn " << subcommand << " manifest; replay with: mrnn " << subcommand
        << " --config " << path << "\n";
    for (const auto& [k, v] : entries) out << k << '=' << v << '\n';
  }
};

std::vector<double> parse_label_weights(const std::string& text, int n_streams) {
  std::vector<double> w;
  if (text.empty()) return w;
  if (text == "auto") {
    w.resize(n_streams);
    for (int d = 0; d < n_streams; ++d) w[d] = d % 2 == 0 ? 1.5 : -1.5;
    return w;
  }
  std::istringstream is(text);
  std::string tok;
  while (std::getline(is, tok, ',')) w.push_back(std::stod(tok));
  if (static_cast<int>(w.size()) != n_streams)
    throw CLI::ValidationError("--label-weights must list one weight per stream or 'auto'");
  return w;
}

std::vector<std::string> parse_method_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

std::string draw_path(const std::string& base, int draw) {
  const fs::path p(base);
  fs::path out = p.parent_path() / p.stem();
  out += "_k" + std::to_string(draw);
  out += p.extension();
  return out.string();
}

struct GenerateArgs {
  std::string out;
  int patients = 100, streams = 5, max_len = 20;
  double intra = 0.5, inter = 0.2, gap_mean = 1.0, noise_std = 0.4;
  std::string label_weights;
  std::uint64_t seed = 0;
};

int run_generate(const GenerateArgs& a) {
  mrnn::SyntheticConfig cfg;
  cfg.n_patients = a.patients;
  cfg.n_streams = a.streams;
  cfg.max_len = a.max_len;
  cfg.intra_corr = a.intra;
  cfg.inter_corr = a.inter;
  cfg.gap_mean = a.gap_mean;
  cfg.noise_std = a.noise_std;
  cfg.label_weights = parse_label_weights(a.label_weights, a.streams);
  const auto ds = mrnn::generate_synthetic(cfg, mrnn::Rng(a.seed));
  mrnn::write_csv(ds, a.out);

  Manifest m;
  m.add("out", a.out);
  m.add("patients", static_cast<long long>(a.patients));
  m.add("streams", static_cast<long long>(a.streams));
  m.add("max-len", static_cast<long long>(a.max_len));
  m.add("intra", a.intra);
  m.add("inter", a.inter);
  m.add("gap-mean", a.gap_mean);
  m.add("noise-std", a.noise_std);
  if (!a.label_weights.empty()) m.add("label-weights", a.label_weights);
  m.add("seed", static_cast<long long>(a.seed));
  m.write(a.out + ".manifest", "generate");
  std::cout << "wrote " << a.out << " (" << ds.size() << " patients, " << ds.streams()
            << " streams)\n";
  return 0;
}

struct MaskArgs {
  std::string in, out, plan;
  std::string setting = "mcar";
  double rate = 0.3;
  int topk = 4;
  int keep = 0;
  std::uint64_t seed = 0;
};

int run_mask(const MaskArgs& a) {
  const auto ds = mrnn::parse_csv(a.in);
  mrnn::TemporalDataset degraded;
  mrnn::MaskPlan plan;
  std::vector<std::string> warnings;
  const mrnn::Rng rng(a.seed);
  if (a.setting == "mcar") {
    auto res = mrnn::mcar_remove(ds, a.rate, rng);
    degraded = std::move(res.data);
    plan = std::move(res.plan);
    warnings = std::move(res.warnings);
  } else if (a.setting == "correlated") {
    auto res = mrnn::correlated_remove(ds, a.rate, a.topk, rng);
    degraded = std::move(res.data);
    plan = std::move(res.plan);
    warnings = std::move(res.warnings);
  } else if (a.setting == "stream-subset") {
    degraded = mrnn::subsample_streams(ds, a.keep, rng);
    plan.seed = a.seed;
    plan.setting = mrnn::MaskSetting::StreamSubset;
  } else if (a.setting == "sample-subset") {
    degraded = mrnn::subsample_patients(ds, a.keep, rng);
    plan.seed = a.seed;
    plan.setting = mrnn::MaskSetting::SampleSubset;
  } else if (a.setting == "length-truncate") {
    degraded = mrnn::truncate_length(ds, a.keep);
    plan.seed = a.seed;
    plan.setting = mrnn::MaskSetting::LengthTruncate;
  } else {
    throw CLI::ValidationError("unknown --setting '" + a.setting + "'");
  }
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  mrnn::write_csv(degraded, a.out);
  mrnn::write_plan(plan, a.plan);

  Manifest m;
  m.add("in", a.in);
  m.add("out", a.out);
  m.add("plan", a.plan);
  m.add("setting", a.setting);
  m.add("rate", a.rate);
  m.add("topk", static_cast<long long>(a.topk));
  m.add("keep", static_cast<long long>(a.keep));
  m.add("seed", static_cast<long long>(a.seed));
  m.write(a.out + ".manifest", "mask");
  std::cout << "wrote " << a.out << " and " << a.plan << " (" << plan.cells.size()
            << " removed cells)\n";
  return 0;
}

struct TrainArgs {
  std::string in, model_out, history;
  std::string loss = "mse", ablation = "full", optimizer = "sgd";
  int hidden = 8, epochs = 300, batch = 32, predictor_hidden = 8;
  double lr = 0.01, keep_p = 1.0, hide_p = 0.25;
  std::uint64_t seed = 0;
};

mrnn::MRnnConfig to_config(const TrainArgs& a) {
  mrnn::MRnnConfig cfg;
  cfg.hidden = a.hidden;
  cfg.keep_p = a.keep_p;
  cfg.hide_p = a.hide_p;
  cfg.learning_rate = a.lr;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.seed = a.seed;
  cfg.loss_mode = mrnn::loss_mode_from_string(a.loss);
  cfg.ablation = mrnn::ablation_from_string(a.ablation);
  cfg.optimizer = a.optimizer == "adam" ? mrnn::OptimizerKind::Adam : mrnn::OptimizerKind::Sgd;
  cfg.predictor_hidden = a.predictor_hidden;
  return cfg;
}

int run_train(const TrainArgs& a) {
  const auto raw = mrnn::parse_csv(a.in);
  const auto ds = mrnn::normalize_minmax(raw);
  auto outcome = mrnn::train_mrnn(ds, to_config(a));
  outcome.model.set_normalization(ds.normalization);
  outcome.model.save(a.model_out);

  if (!a.history.empty()) {
    std::ofstream h(a.history);
    if (!h) throw std::runtime_error("cannot write '" + a.history + "'");
    h << "epoch,loss\n";
    for (std::size_t e = 0; e < outcome.loss_history.size(); ++e)
      h << e << ',' << mrnn::detail::format_double(outcome.loss_history[e]) << '\n';
  }

  Manifest m;
  m.add("in", a.in);
  m.add("model-out", a.model_out);
  if (!a.history.empty()) m.add("history", a.history);
  m.add("loss", a.loss);
  m.add("ablation", a.ablation);
  m.add("optimizer", a.optimizer);
  m.add("hidden", static_cast<long long>(a.hidden));
  m.add("epochs", static_cast<long long>(a.epochs));
  m.add("batch", static_cast<long long>(a.batch));
  m.add("predictor-hidden", static_cast<long long>(a.predictor_hidden));
  m.add("lr", a.lr);
  m.add("keep-p", a.keep_p);
  m.add("hide-p", a.hide_p);
  m.add("seed", static_cast<long long>(a.seed));
  m.write(a.model_out + ".manifest", "train");
  const double final_loss = outcome.loss_history.empty() ? 0.0 : outcome.loss_history.back();
  std::cout << "trained " << a.model_out << " (final loss "
            << mrnn::detail::format_double(final_loss) << ")\n";
  return 0;
}

struct ImputeArgs {
  std::string in, model, out;
  std::string mode = "single";
  int draws = 5;
  std::uint64_t seed = 0;
};

int run_impute(const ImputeArgs& a) {
  const auto model = mrnn::MRnnModel::load(a.model);
  const auto raw = mrnn::parse_csv(a.in);
  if (raw.streams() != model.streams())
    throw std::runtime_error("dataset has " + std::to_string(raw.streams()) +
                             " streams but model expects " + std::to_string(model.streams()));
  const bool normalized = !model.normalization().empty();
  const auto ds = normalized ? mrnn::apply_normalization(raw, model.normalization()) : raw;

  Manifest m;
  m.add("in", a.in);
  m.add("model", a.model);
  m.add("out", a.out);
  m.add("mode", a.mode);
  m.add("draws", static_cast<long long>(a.draws));
  m.add("seed", static_cast<long long>(a.seed));

  if (a.mode == "single") {
    auto res = mrnn::impute_single(model, ds);
    mrnn::write_csv(normalized ? mrnn::denormalize(res.data) : res.data, a.out);
    std::cout << "wrote " << a.out << '\n';
  } else if (a.mode == "multi") {
    auto draws = mrnn::impute_multiple(model, ds, a.draws, mrnn::Rng(a.seed));
    for (const auto& res : draws) {
      const std::string path = draw_path(a.out, res.draw);
      mrnn::write_csv(normalized ? mrnn::denormalize(res.data) : res.data, path);
      std::cout << "wrote " << path << '\n';
    }
  } else {
    throw CLI::ValidationError("--mode must be single or multi");
  }
  m.write(a.out + ".manifest", "impute");
  return 0;
}

struct BenchmarkArgs {
  std::string in, out_dir;
  std::string methods = "mrnn,mean,locf,linear,spline,zero";
  std::string setting = "mcar";
  double rate = 0.3;
  int topk = 4, folds = 5;
  bool with_auroc = false, with_congeniality = false;
  double reg = 0.01;
  std::string reference = "mrnn";
  TrainArgs train;  // mrnn arm hyper-parameters
  std::uint64_t seed = 0;
};

int run_benchmark(const BenchmarkArgs& a) {
  const auto ds = mrnn::parse_csv(a.in);
  mrnn::DegradationSpec spec;
  spec.setting = a.setting == "correlated" ? mrnn::MaskSetting::Correlated
                                           : mrnn::MaskSetting::Mcar;
  spec.rate = a.rate;
  spec.top_k = a.topk;

  mrnn::BenchmarkOptions opt;
  opt.k_folds = a.folds;
  opt.with_auroc = a.with_auroc;
  opt.with_congeniality = a.with_congeniality;
  opt.logistic_regularization = a.reg;
  opt.reference = a.reference;
  opt.mrnn = to_config(a.train);
  opt.predictor = opt.mrnn;

  const auto report =
      mrnn::benchmark_run(ds, parse_method_list(a.methods), spec, opt, mrnn::Rng(a.seed));
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';

  fs::create_directories(a.out_dir);
  {
    std::ofstream f(fs::path(a.out_dir) / "folds.csv");
    if (!f) throw std::runtime_error("cannot write folds.csv");
    report.write_fold_csv(f);
  }
  {
    std::ofstream f(fs::path(a.out_dir) / "summary.csv");
    if (!f) throw std::runtime_error("cannot write summary.csv");
    report.write_summary_csv(f);
  }

  Manifest m;
  m.add("in", a.in);
  m.add("out-dir", a.out_dir);
  m.add("methods", a.methods);
  m.add("setting", a.setting);
  m.add("rate", a.rate);
  m.add("topk", static_cast<long long>(a.topk));
  m.add("folds", static_cast<long long>(a.folds));
  m.add("auroc", static_cast<long long>(a.with_auroc ? 1 : 0));
  m.add("congeniality", static_cast<long long>(a.with_congeniality ? 1 : 0));
  m.add("reg", a.reg);
  m.add("reference", a.reference);
  m.add("hidden", static_cast<long long>(a.train.hidden));
  m.add("epochs", static_cast<long long>(a.train.epochs));
  m.add("batch", static_cast<long long>(a.train.batch));
  m.add("lr", a.train.lr);
  m.add("keep-p", a.train.keep_p);
  m.add("hide-p", a.train.hide_p);
  m.add("optimizer", a.train.optimizer);
  m.add("seed", static_cast<long long>(a.seed));
  m.write((fs::path(a.out_dir) / "benchmark.manifest").string(), "benchmark");
  std::cout << "wrote " << (fs::path(a.out_dir) / "summary.csv").string() << '\n';
  return 0;
}

void add_train_flags(CLI::App* cmd, TrainArgs& t, bool with_io) {
  if (with_io) {
    cmd->add_option("--in", t.in, "input dataset CSV")->required();
    cmd->add_option("--model-out", t.model_out, "model archive path")->required();
    cmd->add_option("--history", t.history, "loss history CSV path");
    cmd->add_option("--loss", t.loss, "mse | cross-entropy");
    cmd->add_option("--ablation", t.ablation, "full | interp-only | impute-only");
  }
  cmd->add_option("--hidden", t.hidden, "interpolation hidden size");
  cmd->add_option("--epochs", t.epochs, "training epochs");
  cmd->add_option("--batch", t.batch, "mini-batch size");
  cmd->add_option("--lr", t.lr, "learning rate");
  cmd->add_option("--keep-p", t.keep_p, "dropout keep probability in (0,1]");
  cmd->add_option("--hide-p", t.hide_p, "training input-hiding probability in [0,1)");
  cmd->add_option("--optimizer", t.optimizer, "sgd | adam");
  cmd->add_option("--predictor-hidden", t.predictor_hidden, "predictor hidden size");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"M-RNN time-series imputation toolkit"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* cmd_gen = app.add_subcommand("generate", "write a synthetic dataset CSV");
  cmd_gen->set_config("--config");
  cmd_gen->add_option("--out", gen.out, "output CSV path")->required();
  cmd_gen->add_option("--patients", gen.patients, "number of patients");
  cmd_gen->add_option("--streams", gen.streams, "number of streams");
  cmd_gen->add_option("--max-len", gen.max_len, "maximum record length");
  cmd_gen->add_option("--intra", gen.intra, "within-stream lag-1 coefficient [0,1)");
  cmd_gen->add_option("--inter", gen.inter, "cross-stream coupling [0,1)");
  cmd_gen->add_option("--gap-mean", gen.gap_mean, "mean exponential stamp gap");
  cmd_gen->add_option("--noise-std", gen.noise_std, "innovation noise std");
  cmd_gen->add_option("--label-weights", gen.label_weights,
                      "comma list of logistic weights, or 'auto'");
  cmd_gen->add_option("--seed", gen.seed, "rng seed");

  MaskArgs mask;
  auto* cmd_mask = app.add_subcommand("mask", "degrade a dataset and record the plan");
  cmd_mask->set_config("--config");
  cmd_mask->add_option("--in", mask.in, "input dataset CSV")->required();
  cmd_mask->add_option("--out", mask.out, "degraded CSV path")->required();
  cmd_mask->add_option("--plan", mask.plan, "mask plan CSV path")->required();
  cmd_mask->add_option("--setting", mask.setting,
                       "mcar | correlated | stream-subset | sample-subset | length-truncate");
  cmd_mask->add_option("--rate", mask.rate, "removal rate in (0,1)");
  cmd_mask->add_option("--topk", mask.topk, "streams targeted by correlated removal");
  cmd_mask->add_option("--keep", mask.keep, "keep count for subset/truncate settings");
  cmd_mask->add_option("--seed", mask.seed, "rng seed");

  TrainArgs train;
  auto* cmd_train = app.add_subcommand("train", "train an M-RNN and persist the archive");
  cmd_train->set_config("--config");
  add_train_flags(cmd_train, train, true);
  cmd_train->add_option("--seed", train.seed, "rng seed");

  ImputeArgs imp;
  auto* cmd_imp = app.add_subcommand("impute", "complete a dataset with a trained model");
  cmd_imp->set_config("--config");
  cmd_imp->add_option("--in", imp.in, "input dataset CSV")->required();
  cmd_imp->add_option("--model", imp.model, "model archive")->required();
  cmd_imp->add_option("--out", imp.out, "output CSV path")->required();
  cmd_imp->add_option("--mode", imp.mode, "single | multi");
  cmd_imp->add_option("--draws", imp.draws, "number of multiple-imputation draws");
  cmd_imp->add_option("--seed", imp.seed, "rng seed for dropout draws");

  BenchmarkArgs bench;
  auto* cmd_bench = app.add_subcommand("benchmark", "cross-validated method comparison");
  cmd_bench->set_config("--config");
  cmd_bench->add_option("--in", bench.in, "input dataset CSV")->required();
  cmd_bench->add_option("--out-dir", bench.out_dir, "report output directory")->required();
  cmd_bench->add_option("--methods", bench.methods, "comma list: mrnn,mean,locf,linear,spline,zero");
  cmd_bench->add_option("--setting", bench.setting, "mcar | correlated");
  cmd_bench->add_option("--rate", bench.rate, "removal rate in (0,1)");
  cmd_bench->add_option("--topk", bench.topk, "streams targeted by correlated removal");
  cmd_bench->add_option("--folds", bench.folds, "cross-validation folds");
  cmd_bench->add_flag("--auroc", bench.with_auroc, "also score downstream AUROC");
  cmd_bench->add_flag("--congeniality", bench.with_congeniality,
                      "also score logistic-weight congeniality");
  cmd_bench->add_option("--reg", bench.reg, "logistic regularization");
  cmd_bench->add_option("--reference", bench.reference, "reference method for % gain");
  add_train_flags(cmd_bench, bench.train, false);
  cmd_bench->add_option("--seed", bench.seed, "rng seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_gen) return run_generate(gen);
    if (*cmd_mask) return run_mask(mask);
    if (*cmd_train) return run_train(train);
    if (*cmd_imp) return run_impute(imp);
    if (*cmd_bench) {
      bench.train.seed = bench.seed;
      return run_benchmark(bench);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
