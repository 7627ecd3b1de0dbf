#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fewfed/corpus.hpp"
#include "fewfed/model.hpp"
#include "fewfed/task.hpp"

namespace fewfed {

struct RoundRecord {
  std::uint64_t seed = 0;
  std::size_t round = 0;
  Mode mode = Mode::fedprompt;
  std::size_t n_labeled = 0;
  double gamma = 0.0;
  double test_accuracy = 0.0;
  std::vector<std::size_t> participants;
  std::size_t scanned = 0;
  std::size_t kept = 0;
  std::optional<double> precision;  // of kept pseudo labels; absent when nothing was kept
  double mean_confidence = 0.0;
  bool gate_open = false;
  double wall_time = 0.0;
};

using History = std::vector<RoundRecord>;

struct SummaryRow {
  std::size_t n_labeled = 0;
  double gamma = 0.0;
  Mode mode = Mode::fedprompt;
  bool augmentation = false;
  std::size_t seeds = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  std::optional<double> fullset_accuracy;
  std::optional<double> relative_performance;
  std::optional<double> gain;  // fedprompt mean minus fedcls mean for the same cell
};

/// Fraction of examples whose argmax prediction equals the gold label.
double evaluate(const ModelParams& params, const Dataset& test, const Task& task);

/// Best test accuracy over trained rounds; the zero-shot record only counts
/// when no round was trained.
double best_accuracy(const History& history);

struct SeedAggregate {
  double mean = 0.0;
  double std = 0.0;  // population
};

SeedAggregate aggregate_accuracies(std::span<const double> accuracies);
SeedAggregate aggregate_seeds(std::span<const History> histories);

/// accuracy / fullset_accuracy; absent when the reference accuracy is zero.
std::optional<double> relative_performance(double accuracy, double fullset_accuracy);

/// Fills `gain` on every row whose (n_labeled, gamma, augmentation) cell has
/// both modes.
void fill_gains(std::vector<SummaryRow>& rows);

std::string history_csv_header();
std::string summary_csv_header();
void write_history_csv(const History& history, const std::filesystem::path& path);
History read_history_csv(const std::filesystem::path& path);
void write_summary_csv(std::span<const SummaryRow> rows, const std::filesystem::path& path);
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);

/// Fixed six-decimal rendering used by every CSV writer.
std::string format_real(double value);

}  // namespace fewfed
