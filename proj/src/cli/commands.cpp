#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "tml/checkpoint.hpp"
#include "tml/cli.hpp"
#include "tml/eval.hpp"
#include "tml/gradcheck_suite.hpp"
#include "tml/trainer.hpp"

#ifndef TML_VERSION
#define TML_VERSION "unknown"
#endif

namespace tml {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

// Resolved config, seed, version, output directory, timestamps and the
// artifacts of one command. Written last; every listed artifact must exist.
class RunManifest {
 public:
  RunManifest(std::string command, int argc, const char* const* argv, fs::path out_dir)
      : out_dir_(std::move(out_dir)) {
    j_["command"] = std::move(command);
    json args = json::array();
    for (int i = 0; i < argc; ++i) args.push_back(argv[i]);
    j_["argv"] = args;
    j_["version"] = TML_VERSION;
    j_["output_dir"] = out_dir_.string();
    j_["started_at"] = utc_now();
  }
  void set(const std::string& key, json value) { j_[key] = std::move(value); }
  void artifact(const fs::path& path) { artifacts_.push_back(fs::relative(path, out_dir_).generic_string()); }
  void write() {
    for (const auto& a : artifacts_) {
      if (!fs::exists(out_dir_ / a)) throw IntegrityError("run manifest lists missing artifact " + a);
    }
    j_["artifacts"] = artifacts_;
    j_["finished_at"] = utc_now();
    write_text(out_dir_ / "run_manifest.json", j_.dump(2) + "\n");
  }

 private:
  fs::path out_dir_;
  json j_;
  std::vector<std::string> artifacts_;
};

// Flags shared by train and ablate; unset flags leave the config untouched.
struct Overrides {
  std::string config_path;
  std::string data;
  std::optional<double> alpha;
  std::string loss, head_variant, pe, combine_mode;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> batch_size;
  std::optional<int> verify_every;
  bool deterministic = false;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--data", data, "Dataset root (one subdirectory per identity)");
    app->add_option("--alpha", alpha, "Loss balancing factor in (0, 1)");
    app->add_option("--loss", loss, "softmax|cosface|arcface|adaface");
    app->add_option("--head-variant", head_variant, "linear|metric");
    app->add_option("--pe", pe, "none|learned");
    app->add_option("--combine-mode", combine_mode, "weighted|summed_logits|metric_only");
    app->add_option("--epochs", epochs);
    app->add_option("--seed", seed);
    app->add_option("--batch-size", batch_size);
    app->add_option("--verify-every", verify_every, "Epochs between holdout verifications (0 disables)");
    app->add_flag("--deterministic", deterministic, "Reproducible outputs (zero wallclock column)");
  }

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (!data.empty()) c.data.root = data;
    if (alpha) c.train.alpha = *alpha;
    if (!loss.empty()) c.head.loss = parse_loss_kind(loss);
    if (!head_variant.empty()) c.head.variant = parse_head_variant(head_variant);
    if (!pe.empty()) c.encoder.positional_encoding = parse_positional_encoding(pe);
    if (!combine_mode.empty()) c.train.combine_mode = parse_combine_mode(combine_mode);
    if (epochs) c.train.epochs = *epochs;
    if (seed) c.train.seed = *seed;
    if (batch_size) c.train.batch_size = *batch_size;
    if (verify_every) c.train.verify_every = *verify_every;
    if (deterministic) c.train.deterministic = true;
    if (c.train.combine_mode == CombineMode::weighted && !(c.train.alpha > 0.0 && c.train.alpha < 1.0)) {
      throw UsageError("--alpha must lie in (0, 1) in weighted mode, got " + std::to_string(c.train.alpha));
    }
    c.validate();
    if (c.data.root.empty()) throw UsageError("no dataset: pass --data or set data.root in the config");
    return c;
  }
};

data::LabeledDataset load_dataset(const RunConfig& c, std::ostream& err) {
  const fs::path root = c.data.root;
  if (!fs::is_directory(root)) throw UsageError("dataset root " + root.string() + " is not a directory");
  auto report = data::load_folder(root);
  for (const auto& s : report.skipped) err << "warning: skipped " << s << "\n";
  auto& ds = report.dataset;
  for (auto& img : ds.images) {
    if (img.height != c.backbone.input_height || img.width != c.backbone.input_width) {
      img = data::resize_bilinear(img, c.backbone.input_height, c.backbone.input_width);
    }
  }
  return std::move(ds);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<double> parse_alphas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  std::set<std::string> seen;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw UsageError("--alphas: '" + item + "' is not a number");
    }
    if (used != item.size()) throw UsageError("--alphas: '" + item + "' is not a number");
    if (!seen.insert(format_double(v)).second) throw UsageError("--alphas: duplicate value " + item);
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--alphas needs at least one value");
  return out;
}

std::string method_label(const RunConfig& c) {
  std::string kind(to_string(c.head.loss));
  if (kind == "arcface") kind = "ArcFace";
  else if (kind == "cosface") kind = "CosFace";
  else if (kind == "adaface") kind = "AdaFace";
  else kind = "Softmax";
  switch (c.train.combine_mode) {
    case CombineMode::metric_only:
      return kind;
    case CombineMode::summed_logits:
      return "Transformer-" + kind + " (summed logits)";
    case CombineMode::weighted:
      return "Transformer-" + kind + " (alpha=" + format_double(c.train.alpha) + ")";
  }
  return kind;
}

int cmd_synth(int classes, int per_class, int size, std::uint64_t seed, const fs::path& out_dir, bool force,
              int argc, const char* const* argv, std::ostream& out) {
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!force) throw UsageError("output directory " + out_dir.string() + " is not empty (use --force)");
    fs::remove_all(out_dir);
  }
  auto ds = data::synth_generate(classes, per_class, size, seed);
  data::export_folder(ds, out_dir);
  RunManifest manifest("synth", argc, argv, out_dir);
  manifest.set("seed", seed);
  manifest.set("config", {{"classes", classes}, {"per_class", per_class}, {"size", size}});
  for (const auto& name : ds.names) manifest.artifact(out_dir / name);
  manifest.write();
  out << "wrote " << ds.size() << " images in " << ds.class_count() << " classes to " << out_dir.string() << "\n";
  return 0;
}

TrainResult run_training(const RunConfig& c, const fs::path& out_dir, RunManifest& manifest, std::ostream& err) {
  const auto ds = load_dataset(c, err);
  const auto split = data::split_holdout(ds, c.data.holdout_fraction);
  fs::create_directories(out_dir);
  write_text(out_dir / "config.json", to_json(c).dump(2) + "\n");
  auto result = train(split.train, split.holdout, c, out_dir, &err);
  manifest.set("config", to_json(c));
  manifest.set("seed", c.train.seed);
  manifest.set("initial_checkpoint_sha256", result.initial_hash);
  manifest.artifact(out_dir / "config.json");
  manifest.artifact(out_dir / "train_log.csv");
  if (fs::exists(out_dir / "verification_log.csv")) manifest.artifact(out_dir / "verification_log.csv");
  for (const auto& p : result.checkpoints) manifest.artifact(p);
  return result;
}

int cmd_train(const Overrides& o, const fs::path& out_dir, int argc, const char* const* argv, std::ostream& out,
              std::ostream& err) {
  const RunConfig c = o.resolve();
  fs::create_directories(out_dir);
  RunManifest manifest("train", argc, argv, out_dir);
  auto result = run_training(c, out_dir, manifest, err);
  manifest.write();
  if (!result.log.empty()) {
    out << "final loss " << format_double(result.log.back().loss_total) << " (epoch 1: "
        << format_double(result.log.front().loss_total) << ")\n";
  }
  if (!result.verification.empty()) {
    out << "holdout verification accuracy " << format_double(result.verification.back().accuracy) << "\n";
  }
  return 0;
}

int cmd_ablate(const Overrides& o, const std::string& alphas_text, const fs::path& out_dir, int argc,
               const char* const* argv, std::ostream& out, std::ostream& err) {
  const auto alphas = parse_alphas(alphas_text);
  Overrides base = o;
  base.alpha.reset();
  RunConfig c = base.resolve();
  if (c.train.combine_mode != CombineMode::weighted) throw UsageError("ablate sweeps alpha in weighted mode only");
  if (c.train.verify_every == 0) c.train.verify_every = 1;
  for (double a : alphas) {
    if (!(a > 0.0 && a < 1.0)) throw UsageError("--alphas: " + format_double(a) + " is outside (0, 1)");
  }
  fs::create_directories(out_dir);
  RunManifest manifest("ablate", argc, argv, out_dir);
  std::string summary = "epoch,alpha,loss_total,accuracy\n";
  json hashes = json::object();
  for (double a : alphas) {
    RunConfig run = c;
    run.train.alpha = a;
    const fs::path dir = out_dir / ("alpha_" + format_double(a));
    err << "alpha " << format_double(a) << "\n";
    RunManifest sub("ablate-run", argc, argv, dir);
    fs::create_directories(dir);
    auto result = run_training(run, dir, sub, err);
    sub.write();
    manifest.artifact(dir / "run_manifest.json");
    hashes[format_double(a)] = result.initial_hash;
    std::map<int, double> accuracy;
    for (const auto& v : result.verification) accuracy[v.epoch] = v.accuracy;
    for (const auto& r : result.log) {
      summary += std::to_string(r.epoch) + "," + format_double(a) + "," + format_double(r.loss_total) + ",";
      if (accuracy.contains(r.epoch)) summary += format_double(accuracy[r.epoch]);
      summary += "\n";
    }
  }
  write_text(out_dir / "ablation_summary.csv", summary);
  manifest.artifact(out_dir / "ablation_summary.csv");
  manifest.set("config", to_json(c));
  manifest.set("seed", c.train.seed);
  manifest.set("initial_checkpoint_sha256", hashes);
  manifest.write();
  out << "wrote " << (out_dir / "ablation_summary.csv").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& config_path, const std::string& data_root,
             const std::string& pairs_path, int folds, const fs::path& out_dir, int argc, const char* const* argv,
             std::ostream& out, std::ostream& err) {
  if (!fs::exists(checkpoint_path)) throw UsageError("checkpoint " + checkpoint_path + " does not exist");
  if (!pairs_path.empty() && !fs::exists(pairs_path)) throw UsageError("pair file " + pairs_path + " does not exist");
  const Checkpoint ck = read_checkpoint(checkpoint_path);
  RunConfig c = config_path.empty() ? config_from_json(ck.config) : load_config(config_path);
  if (!data_root.empty()) c.data.root = data_root;
  if (c.data.root.empty()) throw UsageError("no dataset: pass --data or set data.root in the config");
  c.validate();

  std::int64_t num_classes = 0;
  for (const auto& t : ck.tensors) {
    if (t.name == "metric.class_weights") num_classes = t.shape.at(0);
  }
  if (num_classes < 2) throw IntegrityError("checkpoint " + checkpoint_path + " has no metric.class_weights");
  Model<float> model(c.model(num_classes), c.train.seed);
  restore(model, ck);

  const auto ds = load_dataset(c, err);
  data::LabeledDataset eval_set;
  data::PairList pairs;
  if (!pairs_path.empty()) {
    eval_set = ds;
    pairs = data::read_pair_file(pairs_path, ds);
  } else {
    eval_set = data::split_holdout(ds, c.data.holdout_fraction).holdout;
    const int n = c.train.verification_pairs > 0 ? c.train.verification_pairs : 500;
    pairs = data::make_pairs(eval_set, static_cast<std::size_t>(n / 2), static_cast<std::size_t>(n - n / 2),
                             c.train.seed);
  }
  const auto embeddings = eval::embed_dataset(model.backbone(), eval_set);
  const auto report = eval::verification_accuracy(pairs, embeddings, folds);
  const auto variance = eval::variance_report(embeddings);
  for (int cls : variance.excluded_classes) {
    err << "warning: class " << eval_set.class_names.at(static_cast<std::size_t>(cls))
        << " has a single sample and is excluded from the variance report\n";
  }
  const std::vector<std::pair<std::string, eval::VarianceReport>> rows{{method_label(c), variance}};

  fs::create_directories(out_dir);
  RunManifest manifest("eval", argc, argv, out_dir);
  write_text(out_dir / "verification.csv", eval::verification_csv(report));
  write_text(out_dir / "roc.csv", eval::roc_csv(report));
  write_text(out_dir / "variance.csv", eval::variance_csv(rows));
  write_text(out_dir / "variance.txt", eval::render_variance_table(rows));
  for (const char* f : {"verification.csv", "roc.csv", "variance.csv", "variance.txt"}) manifest.artifact(out_dir / f);
  manifest.set("config", to_json(c));
  manifest.set("seed", c.train.seed);
  manifest.set("checkpoint", checkpoint_path);
  manifest.set("checkpoint_sha256", tensors_sha256(ck.tensors));
  manifest.write();
  out << "verification accuracy " << format_double(report.accuracy) << " +- " << format_double(report.accuracy_std)
      << " over " << pairs.size() << " pairs\n"
      << eval::render_variance_table(rows);
  return 0;
}

int cmd_gradcheck(const std::vector<std::string>& only, std::ostream& out) {
  auto suite = gradcheck_suite();
  if (!only.empty()) {
    std::set<std::string> wanted(only.begin(), only.end());
    std::vector<GradCheckItem> picked;
    for (auto& item : suite) {
      if (wanted.erase(item.name)) picked.push_back(std::move(item));
    }
    if (!wanted.empty()) throw UsageError("--only: unknown item '" + *wanted.begin() + "'");
    suite = std::move(picked);
  }
  int failures = 0;
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %-10s %-12s %-10s %s\n", "item", "group", "max_rel_err", "tolerance",
                "result");
  out << line;
  for (const auto& item : suite) {
    const auto r = item.run();
    const bool ok = r.max_rel_error < item.tolerance;
    failures += !ok;
    std::snprintf(line, sizeof line, "%-22s %-10s %-12.3e %-10.0e %s\n", item.name.c_str(), item.group.c_str(),
                  r.max_rel_error, item.tolerance, ok ? "PASS" : "FAIL");
    out << line;
  }
  out << suite.size() - static_cast<std::size_t>(failures) << "/" << suite.size() << " passed\n";
  return failures == 0 ? 0 : exit_code_for(ErrorKind::numerical);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transformer-metric loss training and evaluation"};
  app.set_version_flag("--version", TML_VERSION);
  app.require_subcommand(1);

  int classes = 10, per_class = 200, size = 32;
  std::uint64_t synth_seed = 7;
  std::string synth_out;
  bool force = false;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic face-like dataset as an image folder");
  synth->add_option("--classes", classes);
  synth->add_option("--per-class", per_class);
  synth->add_option("--size", size);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--out", synth_out)->required();
  synth->add_flag("--force", force, "Replace a non-empty output directory");

  Overrides train_opts;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "Train backbone and both loss branches");
  train_opts.add_to(train_cmd);
  train_cmd->add_option("--out", train_out)->required();

  Overrides ablate_opts;
  std::string ablate_out, alphas = "0.3,0.4,0.5,0.6";
  auto* ablate = app.add_subcommand("ablate", "Sweep the loss balancing factor");
  ablate_opts.add_to(ablate);
  ablate->add_option("--alphas", alphas, "Comma-separated alpha values");
  ablate->add_option("--out", ablate_out)->required();

  std::string ck_path, eval_config, eval_data, pairs_path, eval_out;
  int folds = 10;
  auto* eval_cmd = app.add_subcommand("eval", "Verification and variance reports for a checkpoint");
  eval_cmd->add_option("--checkpoint", ck_path)->required();
  eval_cmd->add_option("--config", eval_config, "Config overriding the one stored in the checkpoint");
  eval_cmd->add_option("--data", eval_data);
  eval_cmd->add_option("--pairs", pairs_path, "Pair file; default samples pairs from the holdout split");
  eval_cmd->add_option("--folds", folds);
  eval_cmd->add_option("--out", eval_out)->required();

  std::vector<std::string> only;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--only", only, "Restrict to the named items")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : exit_code_for(ErrorKind::usage);
  }

  try {
    if (*synth) return cmd_synth(classes, per_class, size, synth_seed, synth_out, force, argc, argv, out);
    if (*train_cmd) return cmd_train(train_opts, train_out, argc, argv, out, err);
    if (*ablate) return cmd_ablate(ablate_opts, alphas, ablate_out, argc, argv, out, err);
    if (*eval_cmd) {
      return cmd_eval(ck_path, eval_config, eval_data, pairs_path, folds, eval_out, argc, argv, out, err);
    }
    if (*gradcheck) return cmd_gradcheck(only, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(ErrorKind::data);
  }
  return exit_code_for(ErrorKind::usage);
}

}  // namespace tml
