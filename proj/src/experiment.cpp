#include "fewfed/experiment.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>
#include <thread>

#include "fewfed/error.hpp"

namespace fewfed {

namespace fs = std::filesystem;
using nlohmann::json;

Dataset load_data(const DataConfig& data) {
  if (!data.path) return synth_generate(data.synth);
  if (!fs::exists(*data.path)) throw ConfigError("dataset not found: " + *data.path);
  return load_jsonl(*data.path, data.label_names);
}

Dataset load_pretraining_corpus(const RunConfig& config, const Dataset& dataset) {
  if (config.pretrain.corpus) {
    if (!fs::exists(*config.pretrain.corpus)) throw ConfigError("pretraining corpus not found: " + *config.pretrain.corpus);
    return load_jsonl(*config.pretrain.corpus, dataset.label_names);
  }
  if (config.data.path) return dataset;
  return synth_pretraining_corpus(config.data.synth, config.pretrain.corpus_sentences, config.pretrain.seen_fraction);
}

Checkpoint pretrain_checkpoint(const RunConfig& config, const Dataset& dataset) {
  const Dataset corpus = load_pretraining_corpus(config, dataset);
  const Pvp pvp = Pvp::from_json(config.pvp, dataset.label_names);
  Checkpoint out;
  out.vocab = build_vocab({&dataset, &corpus}, pvp.verbalizer);

  ModelConfig model = config.model;
  model.vocab_size = out.vocab.size();
  model.num_labels = dataset.num_classes();
  model.validate();
  out.params = pretrain_mlm(init_params(model, config.pretrain.options.seed), corpus, out.vocab,
                            config.pretrain.options);
  out.extra = json{{"steps", config.pretrain.options.steps},
                   {"batch_size", config.pretrain.options.batch_size},
                   {"learning_rate", config.pretrain.options.learning_rate},
                   {"seed", config.pretrain.options.seed},
                   {"corpus_size", corpus.size()}};
  return out;
}

Experiment prepare_experiment(const RunConfig& config) {
  config.validate();
  Experiment ex;
  ex.dataset = load_data(config.data);
  ex.dataset.validate();
  ex.split = split(ex.dataset, config.data.test_fraction, config.data.validation_fraction, config.data.split_seed);
  ex.pvp = Pvp::from_json(config.pvp, ex.dataset.label_names);

  Checkpoint checkpoint;
  if (config.pretrain.checkpoint) {
    if (!fs::exists(*config.pretrain.checkpoint))
      throw ConfigError("checkpoint not found: " + *config.pretrain.checkpoint);
    checkpoint = load_checkpoint(*config.pretrain.checkpoint);
    if (checkpoint.params.config.num_labels != ex.dataset.num_classes())
      throw ConfigError("checkpoint has " + std::to_string(checkpoint.params.config.num_labels) +
                        " labels, dataset has " + std::to_string(ex.dataset.num_classes()));
    ex.pretrain_info = json{{"checkpoint", *config.pretrain.checkpoint}, {"extra", checkpoint.extra}};
  } else {
    checkpoint = pretrain_checkpoint(config, ex.dataset);
    ex.pretrain_info = checkpoint.extra;
  }
  ex.vocab = std::move(checkpoint.vocab);
  ex.pretrained = std::move(checkpoint.params);
  ex.pvp.validate(ex.vocab, ex.dataset.num_classes());
  return ex;
}

SessionResult run_seed(const Experiment& ex, const RunConfig& config, std::uint64_t seed) {
  PartitionSpec spec = config.partition;
  spec.seed = seed;
  Partition partition = make_partition(ex.split.train, spec);
  const Task task(config.mode, ex.pvp, ex.vocab, ex.pretrained.config.max_seq_len);

  SessionInputs in;
  in.train = &ex.split.train;
  in.test = &ex.split.test;
  in.validation = &ex.split.validation;
  in.task = &task;
  in.shards = std::move(partition.shards);
  in.initial = ex.pretrained;
  in.round = config.round;
  in.augment = config.augment;
  in.seed = seed;
  in.n_labeled = spec.n_labeled;
  in.gamma = spec.gamma;
  return run_session(std::move(in));
}

json run_manifest(const RunConfig& config) {
  const json resolved = config.to_json();
  return json{{"resolved_config", resolved},
              {"config_digest", config_digest(resolved)},
              {"version", FEWFED_VERSION},
              {"seeds", config.seeds}};
}

RunOutputs run_to_directory(const Experiment& ex, const RunConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  fs::remove(dir / "manifest.json");
  RunOutputs out;
  for (std::uint64_t seed : config.seeds) {
    const fs::path history_path = dir / ("history_seed" + std::to_string(seed) + ".csv");
    try {
      SessionResult result = run_seed(ex, config, seed);
      write_history_csv(result.history, history_path);
      out.histories.push_back(std::move(result.history));
    } catch (const SessionAborted& e) {
      write_history_csv(e.partial_history(), history_path);
      throw;
    }
  }
  const SeedAggregate agg = aggregate_seeds(out.histories);
  out.summary.n_labeled = config.partition.n_labeled;
  out.summary.gamma = config.partition.gamma;
  out.summary.mode = config.mode;
  out.summary.augmentation = config.round.augmentation_enabled;
  out.summary.seeds = config.seeds.size();
  out.summary.mean_accuracy = agg.mean;
  out.summary.std_accuracy = agg.std;
  write_summary_csv(std::span<const SummaryRow>(&out.summary, 1), dir / "summary.csv");
  write_json_file(run_manifest(config), dir / "manifest.json");
  return out;
}

RunConfig cell_config(const RunConfig& base, std::size_t n_labeled, double gamma, Mode mode, bool augmentation) {
  RunConfig c = base;
  c.partition.n_labeled = n_labeled;
  c.partition.gamma = gamma;
  c.mode = mode;
  c.round.augmentation_enabled = augmentation;
  c.name = base.name + "/" + cell_name(n_labeled, gamma, mode, augmentation);
  return c;
}

RunConfig fullset_config(const RunConfig& base, const Experiment& ex, Mode mode) {
  std::size_t labeled = 0;
  for (const Example& e : ex.split.train.examples) labeled += e.gold_label.has_value();
  RunConfig c = cell_config(base, labeled, 1e6, mode, false);
  c.partition.xi = c.partition.num_clients;
  c.name = base.name + "/fullset_" + to_string(mode);
  return c;
}

std::string cell_name(std::size_t n_labeled, double gamma, Mode mode, bool augmentation) {
  char g[32];
  std::snprintf(g, sizeof g, "%g", gamma);
  return "n" + std::to_string(n_labeled) + "_g" + g + "_" + to_string(mode) + (augmentation ? "_aug" : "");
}

namespace {

/// A cell is done when its manifest exists and describes the same config.
bool cell_complete(const fs::path& dir, const RunConfig& config) {
  const fs::path manifest = dir / "manifest.json";
  if (!fs::exists(manifest) || !fs::exists(dir / "summary.csv")) return false;
  try {
    return read_json_file(manifest).value("config_digest", "") == config_digest(config.to_json());
  } catch (const Error&) {
    return false;
  }
}

}  // namespace

std::vector<SummaryRow> run_sweep(const RunConfig& base, const SweepGrid& grid, const fs::path& dir,
                                  const SweepOptions& options) {
  fs::create_directories(dir);
  auto log = [&](const std::string& line) {
    if (options.log) options.log(line);
  };
  const Experiment ex = prepare_experiment(base);

  struct Cell {
    RunConfig config;
    fs::path dir;
    SummaryRow row;
  };
  std::vector<Cell> cells;
  for (std::size_t n : grid.n_labeled)
    for (double gamma : grid.gamma)
      for (Mode mode : grid.modes)
        for (bool aug : grid.augmentation)
          cells.push_back({cell_config(base, n, gamma, mode, aug), dir / cell_name(n, gamma, mode, aug), {}});
  std::vector<Cell> references;
  if (grid.fullset)
    for (Mode mode : grid.modes)
      references.push_back({fullset_config(base, ex, mode), dir / ("fullset_" + to_string(mode)), {}});

  std::vector<Cell*> queue;
  for (Cell& c : references) queue.push_back(&c);
  for (Cell& c : cells) queue.push_back(&c);

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < queue.size(); i = next++) {
      Cell& cell = *queue[i];
      try {
        if (cell_complete(cell.dir, cell.config)) {
          cell.row = read_summary_csv(cell.dir / "summary.csv").at(0);
          std::lock_guard lock(log_mutex);
          log("skip " + cell.dir.filename().string() + " (complete)");
          continue;
        }
        cell.row = run_to_directory(ex, cell.config, cell.dir).summary;
        std::lock_guard lock(log_mutex);
        log("done " + cell.dir.filename().string() + " mean " + format_real(cell.row.mean_accuracy));
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!failure) failure = std::current_exception();
        next = queue.size();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, queue.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < jobs; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);

  std::vector<SummaryRow> rows;
  for (const Cell& c : cells) {
    SummaryRow row = c.row;
    for (const Cell& r : references) {
      if (r.config.mode != row.mode) continue;
      row.fullset_accuracy = r.row.mean_accuracy;
      row.relative_performance = relative_performance(row.mean_accuracy, r.row.mean_accuracy);
    }
    rows.push_back(row);
  }
  fill_gains(rows);
  write_summary_csv(rows, dir / "summary.csv");
  write_json_file(json{{"base", run_manifest(base)}, {"grid", grid.to_json()}}, dir / "sweep.json");
  return rows;
}

}  // namespace fewfed
