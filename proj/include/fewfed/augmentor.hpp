#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fewfed/corpus.hpp"
#include "fewfed/model.hpp"
#include "fewfed/partitioner.hpp"
#include "fewfed/rng.hpp"
#include "fewfed/task.hpp"

namespace fewfed {

struct AugmentConfig {
  double confidence_threshold = 0.9;
  std::size_t per_client_budget = 100;
  bool cumulative = false;
  bool capacity_check = true;
  bool full_scan = false;  // ignore the budget and label the whole pool

  void validate() const;
};

/// Counts over one or more pseudo-labeling passes. Correctness is measured
/// against hidden gold labels and is reported only.
struct AugmentStats {
  std::size_t scanned = 0;
  std::size_t kept = 0;
  std::size_t kept_correct = 0;
  std::size_t scanned_correct = 0;
  double kept_confidence_sum = 0.0;

  std::optional<double> precision() const;
  std::optional<double> scanned_precision() const;
  double mean_confidence() const;
  void merge(const AugmentStats& other);
};

/// Open iff the model's validation accuracy is at least the zero-shot one.
bool capacity_gate(const ModelParams& params, double zero_shot_accuracy, const Dataset& validation,
                   const Task& task);

struct PseudoLabelResult {
  std::vector<PseudoLabel> pseudo;
  AugmentStats stats;
};

/// Scores up to per_client_budget uniformly sampled unlabeled examples of
/// the client and keeps those whose confidence reaches the threshold.
PseudoLabelResult pseudo_label(const ModelParams& params, const Task& task, const ClientShard& client,
                               const Dataset& train, const AugmentConfig& config, Rng& rng);

/// Re-labels the participants' pools. A closed gate leaves every shard as is.
AugmentStats refresh_pseudo(std::vector<ClientShard>& shards, std::span<const std::size_t> participants,
                            const ModelParams& params, const Task& task, const Dataset& train,
                            const AugmentConfig& config, std::size_t round, std::uint64_t seed,
                            bool gate_open = true);

/// Merges fresh pseudo labels into a cumulative list, keeping the most
/// confident entry per example id. Result is sorted by id.
std::vector<PseudoLabel> merge_pseudo(std::vector<PseudoLabel> existing, std::span<const PseudoLabel> fresh);

}  // namespace fewfed
