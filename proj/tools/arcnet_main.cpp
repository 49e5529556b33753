// Command line entry point: dataset preparation, training, evaluation and
// the analysis experiments behind one binary. Settings come from built-in
// defaults, then an optional config file, then flags, highest wins.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric failure. Every error prints one machine-parsable line.
#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "arcnet/checkpoint.hpp"
#include "arcnet/dataset.hpp"
#include "arcnet/errors.hpp"
#include "arcnet/experiments.hpp"
#include "arcnet/gradcheck.hpp"
#include "arcnet/metrics.hpp"
#include "arcnet/model.hpp"
#include "arcnet/pamap2.hpp"
#include "arcnet/realworld.hpp"
#include "arcnet/train.hpp"

namespace {

using namespace arcnet;

// Every tunable of every subcommand. Config file keys use the same names.
struct RunConfig {
  std::string dataset = "synth";  // pamap2 | realworld | synth
  std::string raw_dir;
  std::string data;
  std::string out;
  std::uint64_t seed = 1;
  int threads = 1;
  bool deterministic = true;
  int epochs = 200;
  int batch_size = 64;
  int routing_iters = -1;  // -1 picks the per-dataset default
  double eta = -1.0;       // same
  int ensemble_k = 5;
  double tol = 1e-3;
  double initial_lr = 1e-3;
  double lr_decay = 0.98;
  int d_out = 16;
  double probability = 1.0;   // corruption probability
  std::string aggregate = "mean";  // priors aggregation: mean | max
  int synth_imus = 2;
  int synth_classes = 4;
  int windows_per_class = 50;
};

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

long long parse_int(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size()) throw ConfigError("config key '" + key + "': not an integer: " + value);
  return v;
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size()) throw ConfigError("config key '" + key + "': not a number: " + value);
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ConfigError("config key '" + key + "': expected 0/1/true/false, got " + value);
}

void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "dataset") cfg.dataset = value;
  else if (key == "raw_dir") cfg.raw_dir = value;
  else if (key == "data") cfg.data = value;
  else if (key == "out") cfg.out = value;
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "threads") cfg.threads = static_cast<int>(parse_int(key, value));
  else if (key == "deterministic") cfg.deterministic = parse_bool(key, value);
  else if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(key, value));
  else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, value));
  else if (key == "routing_iters") cfg.routing_iters = static_cast<int>(parse_int(key, value));
  else if (key == "eta") cfg.eta = parse_double(key, value);
  else if (key == "ensemble_k") cfg.ensemble_k = static_cast<int>(parse_int(key, value));
  else if (key == "tol") cfg.tol = parse_double(key, value);
  else if (key == "initial_lr") cfg.initial_lr = parse_double(key, value);
  else if (key == "lr_decay") cfg.lr_decay = parse_double(key, value);
  else if (key == "d_out") cfg.d_out = static_cast<int>(parse_int(key, value));
  else if (key == "probability") cfg.probability = parse_double(key, value);
  else if (key == "aggregate") cfg.aggregate = value;
  else if (key == "synth_imus") cfg.synth_imus = static_cast<int>(parse_int(key, value));
  else if (key == "synth_classes") cfg.synth_classes = static_cast<int>(parse_int(key, value));
  else if (key == "windows_per_class")
    cfg.windows_per_class = static_cast<int>(parse_int(key, value));
  else
    throw ConfigError("unknown config key '" + key + "'");
}

// One `key = value` per line, '#' starts a comment, later lines win.
void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    apply_config_key(cfg, key, value);
  }
}

void validate_common(const RunConfig& cfg) {
  if (cfg.dataset != "pamap2" && cfg.dataset != "realworld" && cfg.dataset != "synth")
    throw ConfigError("dataset must be pamap2, realworld or synth, got '" + cfg.dataset + "'");
  if (cfg.aggregate != "mean" && cfg.aggregate != "max")
    throw ConfigError("aggregate must be mean or max, got '" + cfg.aggregate + "'");
}

int default_r(const RunConfig& cfg) {
  if (cfg.routing_iters >= 0) return cfg.routing_iters;
  return cfg.dataset == "realworld" ? 7 : 3;
}

float default_eta(const RunConfig& cfg) {
  if (cfg.eta >= 0.0) return static_cast<float>(cfg.eta);
  return cfg.dataset == "realworld" ? 0.01f : 0.1f;
}

void holdout_subjects(const std::string& dataset, int& validation, int& test) {
  if (dataset == "pamap2") {
    validation = kPamap2ValidationSubject;
    test = kPamap2TestSubject;
  } else if (dataset == "realworld") {
    validation = kRealWorldValidationSubject;
    test = kRealWorldTestSubject;
  } else {
    validation = 8;
    test = 9;
  }
}

std::vector<std::string> imu_names_for(const std::string& dataset, int n_imu) {
  if (dataset == "pamap2" && n_imu == kPamap2Imus) return {"hand", "chest", "ankle"};
  if (dataset == "realworld" && n_imu == kRealWorldImus) return realworld_positions();
  std::vector<std::string> names;
  for (int i = 0; i < n_imu; ++i) names.push_back("imu" + std::to_string(i));
  return names;
}

DatasetSplit load_split(const RunConfig& cfg) {
  if (cfg.data.empty()) throw ConfigError("missing --data (dataset container path)");
  const auto file = load_arcd(cfg.data);
  int validation = 0, test = 0;
  holdout_subjects(cfg.dataset, validation, test);
  return split_subjects(file.windows, file.class_names, validation, test);
}

std::vector<Checkpoint> load_checkpoints(const std::vector<std::string>& paths) {
  std::vector<Checkpoint> out;
  for (const auto& p : paths) out.push_back(load_checkpoint(p));
  return out;
}

int cmd_prepare(const RunConfig& cfg) {
  if (cfg.raw_dir.empty()) throw ConfigError("prepare requires --raw-dir");
  if (cfg.dataset == "synth")
    throw ConfigError("prepare reads recorded datasets; use the synth subcommand instead");
  const auto out = cfg.out.empty() ? cfg.dataset + ".arcd" : cfg.out;

  std::vector<LabeledStream> streams;
  std::vector<std::string> warnings;
  std::vector<std::string> class_names;
  int n_imu = 0;
  if (cfg.dataset == "pamap2") {
    for (auto& s : parse_pamap2(cfg.raw_dir)) streams.push_back(resample_decimate(s));
    class_names = pamap2_class_names();
    n_imu = kPamap2Imus;
  } else {
    streams = parse_realworld(cfg.raw_dir, &warnings);
    class_names = realworld_class_names();
    n_imu = kRealWorldImus;
  }
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  std::vector<ImuWindow> windows;
  WindowingReport report;
  for (const auto& s : streams) {
    const auto part = make_windows(s, &report);
    windows.insert(windows.end(), part.begin(), part.end());
  }
  if (windows.empty()) throw DataError("no windows produced from " + cfg.raw_dir);
  save_arcd(out, n_imu, class_names, windows);
  std::cout << "wrote " << out << ": " << windows.size() << " windows, " << class_names.size()
            << " classes, " << report.skipped_segments << " short segments skipped\n";
  return 0;
}

int cmd_synth(const RunConfig& cfg) {
  const auto out = cfg.out.empty() ? std::string("synth.arcd") : cfg.out;
  const auto spec =
      SyntheticSpec::defaults(cfg.synth_imus, cfg.synth_classes, cfg.windows_per_class, cfg.seed);
  const auto windows = synth_windows(spec);
  save_arcd(out, spec.n_imu, synth_class_names(spec.n_classes), windows);
  std::cout << "wrote " << out << ": " << windows.size() << " windows, " << spec.n_classes
            << " classes\n";
  return 0;
}

TrainConfig train_config_from(const RunConfig& cfg) {
  TrainConfig tc;
  tc.dataset = cfg.dataset;
  tc.batch_size = cfg.batch_size;
  tc.epochs = cfg.epochs;
  tc.initial_lr = cfg.initial_lr;
  tc.lr_decay = cfg.lr_decay;
  tc.r = default_r(cfg);
  tc.eta = default_eta(cfg);
  tc.d_out = cfg.d_out;
  tc.seed = cfg.seed;
  tc.ensemble_k = cfg.ensemble_k;
  tc.threads = cfg.threads;
  tc.deterministic = cfg.deterministic;
  return tc;
}

int cmd_train(const RunConfig& cfg) {
  const auto split = load_split(cfg);
  const auto out = cfg.out.empty() ? std::string("run") : cfg.out;
  const auto tc = train_config_from(cfg);
  const auto result = train(tc, split, out);
  for (const auto& e : result.history)
    std::cout << "epoch " << e.epoch << ": train_loss " << e.train_loss << " val_loss "
              << e.val_loss << " val_acc " << e.val_acc << " lr " << e.lr << "\n";
  std::cout << "kept " << result.checkpoints.size() << " checkpoints in " << out
            << ", metrics in " << result.metrics_path << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::vector<std::string>& checkpoint_paths) {
  const auto split = load_split(cfg);
  const auto checkpoints = load_checkpoints(checkpoint_paths);
  const auto report = evaluate(checkpoints, split.test, split.class_names);
  std::cout << "accuracy " << report.accuracy << " weighted_f1 " << report.weighted_f1
            << " samples " << report.samples << "\n";
  if (!cfg.out.empty()) {
    write_report_csv(report, cfg.out);
    std::cout << "wrote " << cfg.out << "\n";
  }
  return 0;
}

int cmd_corrupt(const RunConfig& cfg, const std::vector<std::string>& checkpoint_paths) {
  const auto split = load_split(cfg);
  const auto ckpt = load_checkpoint(checkpoint_paths.front());
  const auto result =
      run_corruption_test(ckpt, split.test, split.class_names, cfg.seed, cfg.probability);
  std::cout << "delta_accuracy_points " << result.delta_accuracy_points << " delta_wf1_points "
            << result.delta_wf1_points << "\n";
  if (!cfg.out.empty()) {
    write_corruption_csv(cfg.out, result);
    std::cout << "wrote " << cfg.out << "\n";
  }
  return 0;
}

int cmd_priors(const RunConfig& cfg, const std::vector<std::string>& checkpoint_paths) {
  const auto ckpt = load_checkpoint(checkpoint_paths.front());
  std::vector<std::string> class_names;
  if (!cfg.data.empty()) {
    class_names = load_arcd(cfg.data).class_names;
  } else {
    for (int c = 0; c < ckpt.config.n_classes; ++c)
      class_names.push_back("class" + std::to_string(c));
  }
  const auto aggregate =
      cfg.aggregate == "max" ? HeatmapAggregate::kMax : HeatmapAggregate::kMean;
  const auto map = prior_heatmap(ckpt, imu_names_for(cfg.dataset, ckpt.config.n_imu),
                                 class_names, aggregate);
  const auto base = cfg.out.empty() ? std::string("priors") : cfg.out;
  write_heatmap_csv(base + ".csv", map);
  write_heatmap_pgm(base + ".pgm", map);
  std::cout << "wrote " << base << ".csv and " << base << ".pgm\n";
  return 0;
}

// Finite-difference audit of the full forward pass plus loss on a small
// architecture (2 IMUs, 4 classes, d_out 8), one round per routing depth.
int cmd_gradcheck(const RunConfig& cfg) {
  Rng rng(cfg.seed);
  double worst = 0.0;
  for (const int r : {1, 3}) {
    ModelConfig mc;
    mc.n_imu = 2;
    mc.n_classes = 4;
    mc.d_out = 8;
    mc.r = r;
    mc.eta = 0.1f;
    const auto params = ModelParams::init(mc, rng);

    std::vector<TensorT<double>> inputs;
    TensorT<double> sample({mc.n_imu, kImuRows, kWindowLen});
    for (auto& v : sample.data) v = rng.uniform(-1.0, 1.0);
    inputs.push_back(std::move(sample));
    for (const auto& [name, tensor] : params.named_tensors())
      inputs.push_back(tensor->template cast<double>());

    GradCheckOptions opt;
    opt.tol = cfg.tol;
    opt.max_entries_per_input = 6;
    // Small step: the hidden ReLU kinks must stay on one side of the
    // central difference.
    opt.step = 1e-5;
    opt.seed = cfg.seed;
    const auto report = grad_check(
        [&mc](auto& t, const auto& xs) {
          EncoderNodesT<typename std::decay_t<decltype(t)>::Scalar> enc{xs[1], xs[2], xs[3],
                                                                        xs[4], xs[5], xs[6]};
          CapsuleNodesT<typename std::decay_t<decltype(t)>::Scalar> caps{xs[7], xs[8]};
          const auto v = ops::model_forward(t, xs[0], {enc, caps}, mc);
          return ops::margin_loss(t, ops::row_norms(t, v), 1);
        },
        inputs, opt);
    std::cout << "gradcheck r=" << r << ": max_rel_err " << report.max_rel_err << " over "
              << report.checked << " entries\n";
    worst = std::max(worst, report.max_rel_err);
    if (!report.ok)
      throw NumericError("gradient check failed at r=" + std::to_string(r) + ": max_rel_err " +
                         std::to_string(report.max_rel_err) + " exceeds tol " +
                         std::to_string(cfg.tol));
  }
  std::cout << "gradcheck passed: max_rel_err " << worst << " within tol " << cfg.tol << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"activity recognition with routed capsules over IMU windows"};
  app.require_subcommand(1);

  std::string config_path;
  RunConfig flags;
  std::vector<std::string> checkpoint_paths;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file, one key = value per line");
    sub->add_option("--dataset", flags.dataset, "pamap2 | realworld | synth");
    sub->add_option("--raw-dir", flags.raw_dir, "raw dataset directory");
    sub->add_option("--data", flags.data, "dataset container (.arcd)");
    sub->add_option("--out", flags.out, "output path");
    sub->add_option("--seed", flags.seed, "PRNG seed");
    sub->add_option("--threads", flags.threads, "worker threads (1 = reference mode)");
    sub->add_flag("--deterministic,!--no-deterministic", flags.deterministic,
                  "force single-threaded deterministic kernels");
    sub->add_option("--epochs", flags.epochs, "training epochs");
    sub->add_option("--batch-size", flags.batch_size, "minibatch size");
    sub->add_option("--routing-iters", flags.routing_iters, "routing iterations");
    sub->add_option("--eta", flags.eta, "soft-update coefficient");
    sub->add_option("--ensemble-k", flags.ensemble_k, "checkpoints kept for the ensemble");
    sub->add_option("--tol", flags.tol, "gradient check tolerance");
    sub->add_option("--initial-lr", flags.initial_lr, "initial learning rate");
    sub->add_option("--lr-decay", flags.lr_decay, "per-epoch learning rate factor");
    sub->add_option("--d-out", flags.d_out, "output capsule dimension");
    sub->add_option("--probability", flags.probability, "corruption probability");
    sub->add_option("--aggregate", flags.aggregate, "prior heatmap aggregation: mean | max");
    sub->add_option("--synth-imus", flags.synth_imus, "synthetic IMU count");
    sub->add_option("--synth-classes", flags.synth_classes, "synthetic class count");
    sub->add_option("--windows-per-class", flags.windows_per_class,
                    "synthetic windows per class");
    return sub;
  };

  auto* prepare = add_common(app.add_subcommand("prepare", "raw recordings to .arcd container"));
  auto* synth = add_common(app.add_subcommand("synth", "generate a synthetic .arcd container"));
  auto* train_cmd = add_common(app.add_subcommand("train", "train a model on a container"));
  auto* evaluate_cmd =
      add_common(app.add_subcommand("evaluate", "score checkpoints on the test split"));
  evaluate_cmd->add_option("checkpoints", checkpoint_paths, "checkpoint files (.arcc)")
      ->expected(-1);
  auto* corrupt =
      add_common(app.add_subcommand("corrupt", "clean versus corrupted-modality comparison"));
  corrupt->add_option("checkpoints", checkpoint_paths, "checkpoint file (.arcc)")->expected(1);
  auto* priors = add_common(app.add_subcommand("priors", "export the learned prior heatmap"));
  priors->add_option("checkpoints", checkpoint_paths, "checkpoint file (.arcc)")->expected(1);
  auto* gradcheck_cmd =
      add_common(app.add_subcommand("gradcheck", "finite-difference gradient audit"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();

    RunConfig cfg;
    if (sub->count("--config")) apply_config_file(cfg, config_path);
    if (sub->count("--dataset")) cfg.dataset = flags.dataset;
    if (sub->count("--raw-dir")) cfg.raw_dir = flags.raw_dir;
    if (sub->count("--data")) cfg.data = flags.data;
    if (sub->count("--out")) cfg.out = flags.out;
    if (sub->count("--seed")) cfg.seed = flags.seed;
    if (sub->count("--threads")) cfg.threads = flags.threads;
    if (sub->count("--deterministic") || sub->count("--no-deterministic"))
      cfg.deterministic = flags.deterministic;
    if (sub->count("--epochs")) cfg.epochs = flags.epochs;
    if (sub->count("--batch-size")) cfg.batch_size = flags.batch_size;
    if (sub->count("--routing-iters")) cfg.routing_iters = flags.routing_iters;
    if (sub->count("--eta")) cfg.eta = flags.eta;
    if (sub->count("--ensemble-k")) cfg.ensemble_k = flags.ensemble_k;
    if (sub->count("--tol")) cfg.tol = flags.tol;
    if (sub->count("--initial-lr")) cfg.initial_lr = flags.initial_lr;
    if (sub->count("--lr-decay")) cfg.lr_decay = flags.lr_decay;
    if (sub->count("--d-out")) cfg.d_out = flags.d_out;
    if (sub->count("--probability")) cfg.probability = flags.probability;
    if (sub->count("--aggregate")) cfg.aggregate = flags.aggregate;
    if (sub->count("--synth-imus")) cfg.synth_imus = flags.synth_imus;
    if (sub->count("--synth-classes")) cfg.synth_classes = flags.synth_classes;
    if (sub->count("--windows-per-class")) cfg.windows_per_class = flags.windows_per_class;
    validate_common(cfg);

    if (sub == prepare) return cmd_prepare(cfg);
    if (sub == synth) return cmd_synth(cfg);
    if (sub == train_cmd) return cmd_train(cfg);
    if (sub == evaluate_cmd) {
      if (checkpoint_paths.empty()) throw ConfigError("evaluate requires checkpoint paths");
      return cmd_evaluate(cfg, checkpoint_paths);
    }
    if (sub == corrupt) return cmd_corrupt(cfg, checkpoint_paths);
    if (sub == priors) return cmd_priors(cfg, checkpoint_paths);
    if (sub == gradcheck_cmd) return cmd_gradcheck(cfg);
    throw ConfigError("unhandled subcommand");
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
