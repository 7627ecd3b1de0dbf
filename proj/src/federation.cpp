#include "fewfed/federation.hpp"

#include <algorithm>
#include <chrono>

namespace fewfed {

void RoundConfig::validate() const {
  if (participants_per_round < 1) throw ConfigError("participants_per_round must be >= 1");
  if (local_iterations < 1) throw ConfigError("local_iterations must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
}

std::vector<std::size_t> select_clients(std::span<const std::size_t> eligible, std::size_t k, Rng& rng) {
  if (k > eligible.size())
    throw ConfigError("cannot select " + std::to_string(k) + " participants from " +
                      std::to_string(eligible.size()) + " eligible clients");
  auto chosen = sample_without_replacement<std::size_t>(eligible, k, rng);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<LabeledExample> effective_examples(const ClientShard& client, const Dataset& train) {
  std::vector<LabeledExample> out;
  out.reserve(client.effective_size());
  for (std::size_t id : client.labeled_ids) {
    const Example& ex = train[id];
    require(ex.gold_label.has_value(), "labeled example without gold label");
    out.push_back({&ex, *ex.gold_label});
  }
  for (const PseudoLabel& p : client.pseudo) out.push_back({&train[p.id], p.label});
  return out;
}

LocalUpdate local_train(const ModelParams& global, const ClientShard& client, const Dataset& train,
                        const Task& task, const RoundConfig& config, std::size_t round, std::uint64_t seed) {
  auto examples = effective_examples(client, train);
  require(!examples.empty(), "local_train: client has no effective training examples");

  LocalUpdate update{client.client_id, global, static_cast<double>(examples.size())};
  OptState opt = config.optimizer == OptimizerKind::adam ? OptState::adam(config.learning_rate, global.flat.size())
                                                         : OptState::sgd(config.learning_rate);
  Rng rng = make_rng(seed, {6, round, client.client_id});
  for (std::size_t epoch = 0; epoch < config.local_iterations; ++epoch) {
    shuffle_in_place<LabeledExample>(examples, rng);
    for (std::size_t start = 0; start < examples.size(); start += config.batch_size) {
      const std::size_t end = std::min(examples.size(), start + config.batch_size);
      const Batch batch = task.make_batch(std::span<const LabeledExample>(examples).subspan(start, end - start));
      const LossAndGrad lg = loss_and_grad(update.params, batch, task.objective());
      step(update.params, opt, lg.grad);
    }
  }
  return update;
}

ModelParams fedavg(std::span<const LocalUpdate> updates) {
  require(!updates.empty(), "fedavg: no updates");
  std::vector<const LocalUpdate*> ordered;
  for (const LocalUpdate& u : updates) {
    require(u.weight > 0.0, "fedavg: weights must be positive");
    require(u.params.flat.size() == updates.front().params.flat.size(), "fedavg: parameter length mismatch");
    ordered.push_back(&u);
  }
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const LocalUpdate* a, const LocalUpdate* b) { return a->client_id < b->client_id; });

  // Running weighted mean: identical inputs reproduce themselves exactly.
  ModelParams out = ordered.front()->params;
  double total = ordered.front()->weight;
  for (std::size_t k = 1; k < ordered.size(); ++k) {
    total += ordered[k]->weight;
    const double share = ordered[k]->weight / total;
    const auto& incoming = ordered[k]->params.flat;
    for (std::size_t i = 0; i < out.flat.size(); ++i) out.flat[i] += share * (incoming[i] - out.flat[i]);
  }
  return out;
}

namespace {

std::vector<std::size_t> eligible_clients(const std::vector<ClientShard>& shards, bool augmentation) {
  std::vector<std::size_t> out;
  for (const ClientShard& s : shards)
    if (s.effective_size() > 0 || (augmentation && !s.unlabeled_ids.empty())) out.push_back(s.client_id);
  return out;
}

}  // namespace

SessionResult run_session(SessionInputs in) {
  require(in.train && in.test && in.task, "run_session: train, test and task are required");
  in.round.validate();
  in.augment.validate();
  const bool augmenting = in.round.augmentation_enabled;
  if (augmenting && in.augment.capacity_check)
    require(in.validation != nullptr && !in.validation->empty(), "run_session: capacity check needs validation data");

  using Clock = std::chrono::steady_clock;
  SessionResult out;
  out.final_params = std::move(in.initial);
  ModelParams& global = out.final_params;

  auto make_record = [&](std::size_t round, double accuracy) {
    RoundRecord r;
    r.seed = in.seed;
    r.round = round;
    r.mode = in.task->mode();
    r.n_labeled = in.n_labeled;
    r.gamma = in.gamma;
    r.test_accuracy = accuracy;
    return r;
  };

  try {
    out.zero_shot_validation =
        (in.validation && !in.validation->empty()) ? evaluate(global, *in.validation, *in.task) : 0.0;
    RoundRecord zero = make_record(0, evaluate(global, *in.test, *in.task));
    out.history.push_back(zero);
  } catch (const std::exception& e) {
    throw SessionAborted(std::string("zero-shot evaluation failed: ") + e.what(), out.history);
  }

  double best = out.history.front().test_accuracy;
  std::size_t stale = 0;
  for (std::size_t round = 1; round <= in.round.max_rounds; ++round) {
    try {
      const auto round_start = Clock::now();
      const auto eligible = eligible_clients(in.shards, augmenting);
      const std::size_t k = std::min(in.round.participants_per_round, eligible.size());
      Rng select_rng = make_rng(in.seed, {5, round});
      const auto participants = select_clients(eligible, k, select_rng);

      RoundRecord record = make_record(round, 0.0);
      record.participants = participants;
      if (augmenting) {
        const bool open = !in.augment.capacity_check ||
                          capacity_gate(global, out.zero_shot_validation, *in.validation, *in.task);
        const AugmentStats stats = refresh_pseudo(in.shards, participants, global, *in.task, *in.train, in.augment,
                                                  round, in.seed, open);
        record.gate_open = open;
        record.scanned = stats.scanned;
        record.kept = stats.kept;
        record.precision = stats.precision();
        record.mean_confidence = stats.mean_confidence();
      }

      std::vector<LocalUpdate> updates;
      for (std::size_t id : participants) {
        const ClientShard& shard = in.shards.at(id);
        if (shard.effective_size() == 0) continue;
        updates.push_back(local_train(global, shard, *in.train, *in.task, in.round, round, in.seed));
      }
      if (!updates.empty()) global = fedavg(updates);

      record.test_accuracy = evaluate(global, *in.test, *in.task);
      if (in.round.record_wall_time)
        record.wall_time = std::chrono::duration<double>(Clock::now() - round_start).count();
      out.history.push_back(record);

      if (record.test_accuracy > best) {
        best = record.test_accuracy;
        stale = 0;
      } else if (in.round.convergence_patience > 0 && ++stale >= in.round.convergence_patience) {
        break;
      }
    } catch (const std::exception& e) {
      throw SessionAborted("round " + std::to_string(round) + " failed: " + e.what(), out.history);
    }
  }
  out.shards = std::move(in.shards);
  return out;
}

}  // namespace fewfed
