#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>

#include "fewfed/config.hpp"
#include "fewfed/metrics.hpp"

namespace fewfed {

/// Everything a run shares across seeds: the split data, the vocabulary and
/// the pretrained starting point.
struct Experiment {
  Dataset dataset;
  DatasetSplit split;
  Vocab vocab;
  Pvp pvp;
  ModelParams pretrained;
  nlohmann::json pretrain_info = nlohmann::json::object();
};

Dataset load_data(const DataConfig& data);
/// The pretraining corpus named by the config, or the synthetic one.
Dataset load_pretraining_corpus(const RunConfig& config, const Dataset& dataset);
/// Vocabulary and freshly pretrained parameters for `config`.
Checkpoint pretrain_checkpoint(const RunConfig& config, const Dataset& dataset);

Experiment prepare_experiment(const RunConfig& config);

/// The config's partition and session for one seed.
SessionResult run_seed(const Experiment& experiment, const RunConfig& config, std::uint64_t seed);

struct RunOutputs {
  std::vector<History> histories;
  SummaryRow summary;
};

/// Runs every seed and writes history_seed<s>.csv, summary.csv and
/// manifest.json into `dir`. The manifest is written last, so its presence
/// marks a finished run. A failing seed leaves its partial history behind and
/// rethrows.
RunOutputs run_to_directory(const Experiment& experiment, const RunConfig& config, const std::filesystem::path& dir);

nlohmann::json run_manifest(const RunConfig& config);

/// The copy of `config` a sweep cell runs.
RunConfig cell_config(const RunConfig& base, std::size_t n_labeled, double gamma, Mode mode, bool augmentation);
/// The full-label reference run for `mode`: every labeled training example
/// revealed, spread evenly over all clients.
RunConfig fullset_config(const RunConfig& base, const Experiment& experiment, Mode mode);
std::string cell_name(std::size_t n_labeled, double gamma, Mode mode, bool augmentation);

struct SweepOptions {
  std::size_t jobs = 1;
  std::function<void(const std::string&)> log;
};

/// Runs the grid into one directory per cell, skipping cells whose manifest
/// already matches, and writes the combined summary.csv.
std::vector<SummaryRow> run_sweep(const RunConfig& base, const SweepGrid& grid, const std::filesystem::path& dir,
                                  const SweepOptions& options);

}  // namespace fewfed
