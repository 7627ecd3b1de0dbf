#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fewfed/augmentor.hpp"
#include "fewfed/corpus.hpp"
#include "fewfed/error.hpp"
#include "fewfed/metrics.hpp"
#include "fewfed/model.hpp"
#include "fewfed/partitioner.hpp"
#include "fewfed/task.hpp"

namespace fewfed {

struct RoundConfig {
  std::size_t participants_per_round = 5;
  std::size_t local_iterations = 1;
  std::size_t batch_size = 4;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  bool augmentation_enabled = false;
  std::size_t max_rounds = 30;
  std::size_t convergence_patience = 10;  // 0 disables early stopping
  bool record_wall_time = false;

  void validate() const;
};

/// k distinct ids drawn uniformly from `eligible`, returned ascending.
std::vector<std::size_t> select_clients(std::span<const std::size_t> eligible, std::size_t k, Rng& rng);

struct LocalUpdate {
  std::size_t client_id = 0;
  ModelParams params;
  double weight = 0.0;  // effective local example count
};

/// Labeled examples with gold labels followed by pseudo-labeled ones with
/// their pseudo labels.
std::vector<LabeledExample> effective_examples(const ClientShard& client, const Dataset& train);

LocalUpdate local_train(const ModelParams& global, const ClientShard& client, const Dataset& train,
                        const Task& task, const RoundConfig& config, std::size_t round, std::uint64_t seed);

/// Example-count weighted mean of client parameters, accumulated in
/// ascending client-id order.
ModelParams fedavg(std::span<const LocalUpdate> updates);

struct SessionInputs {
  const Dataset* train = nullptr;
  const Dataset* test = nullptr;
  const Dataset* validation = nullptr;
  const Task* task = nullptr;
  std::vector<ClientShard> shards;
  ModelParams initial;
  RoundConfig round;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  std::size_t n_labeled = 0;  // reported in records
  double gamma = 0.0;         // reported in records
};

struct SessionResult {
  History history;
  ModelParams final_params;
  double zero_shot_validation = 0.0;
  std::vector<ClientShard> shards;
};

/// Thrown when a round fails; carries every record completed before it.
class SessionAborted : public Error {
 public:
  SessionAborted(const std::string& what, History partial) : Error(what), partial_(std::move(partial)) {}
  const History& partial_history() const noexcept { return partial_; }

 private:
  History partial_;
};

SessionResult run_session(SessionInputs inputs);

}  // namespace fewfed
