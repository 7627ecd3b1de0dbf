#include "fewfed/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "fewfed/config.hpp"
#include "fewfed/error.hpp"
#include "fewfed/experiment.hpp"

namespace fewfed {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path resolve_output(const fs::path& path) {
  const char* root = std::getenv("FEWFED_OUTPUT_ROOT");
  if (path.is_absolute() || root == nullptr || *root == '\0') return path;
  return fs::path(root) / path;
}

namespace {

std::size_t env_jobs() {
  const char* value = std::getenv("FEWFED_JOBS");
  if (value == nullptr || *value == '\0') return 1;
  char* end = nullptr;
  const unsigned long jobs = std::strtoul(value, &end, 10);
  if (*end != '\0' || jobs == 0) throw ConfigError("FEWFED_JOBS must be a positive integer");
  return jobs;
}

/// Optional flag values that patch a JSON config at a fixed path.
class Overrides {
 public:
  template <typename T>
  void add(CLI::App* app, const std::string& flag, std::vector<std::string> path, const std::string& help) {
    auto slot = std::make_shared<std::optional<T>>();
    app->add_option(flag, *slot, help);
    appliers_.push_back([slot, path](json& j) {
      if (!*slot) return;
      json* node = &j;
      for (const std::string& key : path) node = &(*node)[key];
      *node = **slot;
    });
  }
  void add_switch(CLI::App* app, const std::string& flag, std::vector<std::string> path, const std::string& help) {
    auto slot = std::make_shared<std::optional<bool>>();
    app->add_flag(flag, *slot, help);
    appliers_.push_back([slot, path](json& j) {
      if (!*slot) return;
      json* node = &j;
      for (const std::string& key : path) node = &(*node)[key];
      *node = **slot;
    });
  }
  void apply(json& j) const {
    for (const auto& f : appliers_) f(j);
  }

 private:
  std::vector<std::function<void(json&)>> appliers_;
};

/// A run config file, or a run manifest whose resolved config is reused.
json load_config_json(const std::string& path) {
  if (path.empty()) return json::object();
  if (!fs::exists(path)) throw ConfigError("config not found: " + path);
  json j = read_json_file(path);
  if (j.contains("resolved_config")) return j.at("resolved_config");
  return j;
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(item);
  return out;
}

/// Label names from --labels, or from the manifest next to the dataset.
std::vector<std::string> dataset_labels(const std::string& dataset, const std::string& labels) {
  if (!labels.empty()) return split_csv(labels);
  const fs::path manifest = fs::path(dataset).parent_path() / "manifest.json";
  if (fs::exists(manifest)) {
    const json m = read_json_file(manifest);
    if (m.contains("label_names")) return m.at("label_names").get<std::vector<std::string>>();
  }
  throw ConfigError("label names unknown: pass --labels or keep manifest.json beside the dataset");
}

void add_model_overrides(CLI::App* app, Overrides& o) {
  o.add<std::size_t>(app, "--d-model", {"model", "d_model"}, "Hidden width");
  o.add<std::size_t>(app, "--layers", {"model", "num_layers"}, "Encoder layers");
  o.add<std::size_t>(app, "--heads", {"model", "num_heads"}, "Attention heads");
  o.add<std::size_t>(app, "--ffn", {"model", "d_ffn"}, "Feed-forward width");
  o.add<std::size_t>(app, "--max-len", {"model", "max_seq_len"}, "Sequence budget");
}

void add_run_overrides(CLI::App* app, Overrides& o) {
  o.add<std::string>(app, "--mode", {"mode"}, "fedprompt or fedcls");
  o.add<std::size_t>(app, "--n-labeled", {"partition", "n_labeled"}, "Labeled examples n");
  o.add<double>(app, "--gamma", {"partition", "gamma"}, "Label skew concentration");
  o.add<std::size_t>(app, "--xi", {"partition", "xi"}, "Clients holding labels");
  o.add<std::size_t>(app, "--clients", {"partition", "num_clients"}, "Number of clients");
  o.add<std::size_t>(app, "--max-rounds", {"max_rounds"}, "Round limit");
  o.add<std::size_t>(app, "--patience", {"patience"}, "Rounds without improvement before stopping (0 = off)");
  o.add<double>(app, "--lr", {"learning_rate"}, "Local learning rate");
  o.add<std::vector<std::uint64_t>>(app, "--seeds", {"seeds"}, "Session seeds");
  o.add_switch(app, "--augment,!--no-augment", {"augmentation", "enabled"}, "Pseudo-label unlabeled pools");
  o.add<double>(app, "--threshold", {"augmentation", "threshold"}, "Pseudo-label confidence threshold");
  o.add<std::string>(app, "--checkpoint", {"pretrain", "checkpoint"}, "Start from this checkpoint");
  add_model_overrides(app, o);
}

int cmd_synth(const SynthSpec& spec, std::size_t sentences, double seen_fraction, const fs::path& dir,
              std::ostream& out) {
  spec.validate();
  if (!(seen_fraction > 0.0 && seen_fraction <= 1.0)) throw ConfigError("--seen-fraction must be in (0, 1]");
  const Dataset dataset = synth_generate(spec);
  const Dataset corpus = synth_pretraining_corpus(spec, sentences, seen_fraction);
  fs::create_directories(dir);
  write_jsonl(dataset, dir / "dataset.jsonl");
  write_jsonl(corpus, dir / "pretrain.jsonl");
  json manifest = dataset_manifest(dataset);
  manifest["synth"] = {{"num_classes", spec.num_classes},
                       {"examples_per_class", spec.examples_per_class},
                       {"keywords_per_class", spec.keywords_per_class},
                       {"noise_word_count", spec.noise_word_count},
                       {"pair_mode", spec.pair_mode},
                       {"seed", spec.seed},
                       {"pretrain_sentences", sentences},
                       {"seen_fraction", seen_fraction}};
  manifest["version"] = FEWFED_VERSION;
  write_json_file(manifest, dir / "manifest.json");
  out << "wrote " << dataset.size() << " examples and " << corpus.size() << " pretraining sentences to "
      << dir.string() << '\n';
  return 0;
}

int cmd_partition(const std::string& dataset_path, const std::string& labels, PartitionSpec spec,
                  const fs::path& dir, std::ostream& out) {
  if (!fs::exists(dataset_path)) throw ConfigError("dataset not found: " + dataset_path);
  spec.validate();
  const Dataset dataset = load_jsonl(dataset_path, dataset_labels(dataset_path, labels));
  const Partition partition = make_partition(dataset, spec);
  fs::create_directories(dir);
  emit_heatmap(partition.matrix, dir / "heatmap.csv");
  json manifest = partition_manifest(partition, spec);
  manifest["dataset"] = dataset_path;
  manifest["version"] = FEWFED_VERSION;
  write_json_file(manifest, dir / "partition.json");
  out << "placed " << partition.matrix.total() << " labels on " << spec.xi << " clients\n";
  return 0;
}

int cmd_pretrain(const json& config_json, const fs::path& checkpoint_path, std::ostream& out) {
  const RunConfig config = RunConfig::from_json(config_json);
  const Dataset dataset = load_data(config.data);
  Checkpoint checkpoint = pretrain_checkpoint(config, dataset);
  if (checkpoint_path.has_parent_path()) fs::create_directories(checkpoint_path.parent_path());
  save_checkpoint(checkpoint, checkpoint_path);
  out << "wrote " << checkpoint.params.flat.size() << " parameters to " << checkpoint_path.string() << '\n';
  return 0;
}

int cmd_run(const json& config_json, const fs::path& dir, std::ostream& out) {
  const RunConfig config = RunConfig::from_json(config_json);
  const Experiment ex = prepare_experiment(config);
  const RunOutputs result = run_to_directory(ex, config, dir);
  out << config.name << ": mean best accuracy " << format_real(result.summary.mean_accuracy) << " +- "
      << format_real(result.summary.std_accuracy) << " over " << config.seeds.size() << " seeds\n";
  return 0;
}

int cmd_sweep(const json& config_json, const fs::path& dir, std::size_t jobs, std::ostream& out) {
  const RunConfig base = RunConfig::from_json(config_json);
  const SweepGrid grid = SweepGrid::from_json(config_json.value("grid", json()), base);
  SweepOptions options;
  options.jobs = jobs;
  options.log = [&out](const std::string& line) { out << line << '\n' << std::flush; };
  const auto rows = run_sweep(base, grid, dir, options);
  out << "wrote " << rows.size() << " summary rows to " << (dir / "summary.csv").string() << '\n';
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated few-shot prompt learning simulator", "fewfed"};
  app.set_version_flag("--version", FEWFED_VERSION);
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate the synthetic classification task and its pretraining corpus");
  SynthSpec synth_spec;
  std::size_t synth_sentences = 4000;
  double seen_fraction = 0.5;
  std::string synth_out;
  synth->add_option("--classes", synth_spec.num_classes, "Number of classes")->capture_default_str();
  synth->add_option("--per-class", synth_spec.examples_per_class, "Examples per class")->capture_default_str();
  synth->add_option("--keywords", synth_spec.keywords_per_class, "Keywords per class")->capture_default_str();
  synth->add_option("--noise", synth_spec.noise_word_count, "Shared noise vocabulary size")->capture_default_str();
  synth->add_flag("--pair", synth_spec.pair_mode, "Emit a second text field");
  synth->add_option("--seed", synth_spec.seed, "Generator seed")->capture_default_str();
  synth->add_option("--sentences", synth_sentences, "Pretraining corpus size")->capture_default_str();
  synth->add_option("--seen-fraction", seen_fraction, "Share of each class's keywords in the pretraining corpus")
      ->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  // partition
  auto* part = app.add_subcommand("partition", "Split a dataset over clients and place n labels with skew gamma");
  PartitionSpec part_spec;
  std::string part_dataset, part_labels, part_out;
  part->add_option("--dataset", part_dataset, "JSONL dataset")->required();
  part->add_option("--labels", part_labels, "Comma-separated label names (default: manifest.json beside dataset)");
  part->add_option("--clients", part_spec.num_clients, "Number of clients")->capture_default_str();
  part->add_option("--n", part_spec.n_labeled, "Labeled examples to place")->capture_default_str();
  part->add_option("--gamma", part_spec.gamma, "Dirichlet concentration of label quotas")->capture_default_str();
  part->add_option("--xi", part_spec.xi, "Clients holding labels")->capture_default_str();
  part->add_option("--alpha", part_spec.alpha, "Feature skew concentration")->capture_default_str();
  part->add_flag("--random-xi", part_spec.random_xi, "Draw the label holders at random");
  part->add_option("--seed", part_spec.seed, "Partition seed")->capture_default_str();
  part->add_option("--out", part_out, "Output directory")->required();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "MLM-pretrain the toy model and write a checkpoint");
  std::string pre_config, pre_dataset, pre_labels, pre_out;
  Overrides pre_overrides;
  pre->add_option("--config", pre_config, "Run config supplying data, model and pretraining settings");
  pre->add_option("--dataset", pre_dataset, "JSONL dataset the vocabulary is built from");
  pre->add_option("--labels", pre_labels, "Comma-separated label names (default: manifest.json beside dataset)");
  pre_overrides.add<std::string>(pre, "--corpus", {"pretrain", "corpus"}, "JSONL pretraining corpus");
  pre_overrides.add<std::size_t>(pre, "--steps", {"pretrain", "steps"}, "Optimizer steps");
  pre_overrides.add<std::size_t>(pre, "--batch-size", {"pretrain", "batch_size"}, "Sequences per step");
  pre_overrides.add<double>(pre, "--lr", {"pretrain", "learning_rate"}, "Adam learning rate");
  pre_overrides.add<std::uint64_t>(pre, "--seed", {"pretrain", "seed"}, "Initialization and masking seed");
  add_model_overrides(pre, pre_overrides);
  pre->add_option("--out", pre_out, "Checkpoint path")->required();

  // run
  auto* run = app.add_subcommand("run", "Run a federated session per seed");
  std::string run_config, run_out;
  Overrides run_overrides;
  run->add_option("config", run_config, "Run config (JSON) or a run manifest")->required();
  run->add_option("--out", run_out, "Output directory (default: runs/<name>)");
  add_run_overrides(run, run_overrides);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Run the n x gamma x mode grid, one directory per cell");
  std::string sweep_config, sweep_out;
  std::size_t sweep_jobs = 0;
  Overrides sweep_overrides;
  sweep->add_option("config", sweep_config, "Run config with a \"grid\" section")->required();
  sweep->add_option("--out", sweep_out, "Output directory (default: sweeps/<name>)");
  sweep->add_option("--jobs", sweep_jobs, "Cells run concurrently (default: FEWFED_JOBS or 1)");
  add_run_overrides(sweep, sweep_overrides);

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? 0 : 2;
    }

    if (synth->parsed()) return cmd_synth(synth_spec, synth_sentences, seen_fraction, resolve_output(synth_out), out);
    if (part->parsed()) return cmd_partition(part_dataset, part_labels, part_spec, resolve_output(part_out), out);
    if (pre->parsed()) {
      json j = load_config_json(pre_config);
      if (!pre_dataset.empty()) {
        if (!fs::exists(pre_dataset)) throw ConfigError("dataset not found: " + pre_dataset);
        j["data"]["path"] = pre_dataset;
        j["data"]["label_names"] = dataset_labels(pre_dataset, pre_labels);
      }
      pre_overrides.apply(j);
      return cmd_pretrain(j, resolve_output(pre_out), out);
    }
    if (run->parsed()) {
      json j = load_config_json(run_config);
      run_overrides.apply(j);
      const std::string name = j.value("name", std::string("run"));
      return cmd_run(j, resolve_output(run_out.empty() ? fs::path("runs") / name : fs::path(run_out)), out);
    }
    if (sweep->parsed()) {
      json j = load_config_json(sweep_config);
      sweep_overrides.apply(j);
      const std::string name = j.value("name", std::string("sweep"));
      const std::size_t jobs = sweep_jobs > 0 ? sweep_jobs : env_jobs();
      return cmd_sweep(j, resolve_output(sweep_out.empty() ? fs::path("sweeps") / name : fs::path(sweep_out)), jobs,
                       out);
    }
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace fewfed
