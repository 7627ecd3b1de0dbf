#include "fewfed/augmentor.hpp"

#include <algorithm>
#include <map>

#include "fewfed/error.hpp"
#include "fewfed/metrics.hpp"

namespace fewfed {

void AugmentConfig::validate() const {
  if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0))
    throw ConfigError("augmentation: confidence_threshold must be in [0, 1]");
  if (per_client_budget < 1) throw ConfigError("augmentation: per_client_budget must be >= 1");
}

std::optional<double> AugmentStats::precision() const {
  if (kept == 0) return std::nullopt;
  return static_cast<double>(kept_correct) / static_cast<double>(kept);
}

std::optional<double> AugmentStats::scanned_precision() const {
  if (scanned == 0) return std::nullopt;
  return static_cast<double>(scanned_correct) / static_cast<double>(scanned);
}

double AugmentStats::mean_confidence() const {
  return kept == 0 ? 0.0 : kept_confidence_sum / static_cast<double>(kept);
}

void AugmentStats::merge(const AugmentStats& other) {
  scanned += other.scanned;
  kept += other.kept;
  kept_correct += other.kept_correct;
  scanned_correct += other.scanned_correct;
  kept_confidence_sum += other.kept_confidence_sum;
}

bool capacity_gate(const ModelParams& params, double zero_shot_accuracy, const Dataset& validation,
                   const Task& task) {
  require(!validation.empty(), "capacity_gate: validation set is empty");
  return evaluate(params, validation, task) >= zero_shot_accuracy;
}

PseudoLabelResult pseudo_label(const ModelParams& params, const Task& task, const ClientShard& client,
                               const Dataset& train, const AugmentConfig& config, Rng& rng) {
  PseudoLabelResult out;
  const std::size_t budget = config.full_scan ? client.unlabeled_ids.size() : config.per_client_budget;
  auto scan = sample_without_replacement<std::size_t>(client.unlabeled_ids, budget, rng);
  std::sort(scan.begin(), scan.end());
  for (std::size_t id : scan) {
    const Example& ex = train[id];
    const LabelDistribution dist = task.predict(params, ex);
    const bool correct = ex.gold_label && *ex.gold_label == dist.argmax;
    ++out.stats.scanned;
    out.stats.scanned_correct += correct;
    if (dist.confidence >= config.confidence_threshold) {
      out.pseudo.push_back({id, dist.argmax, dist.confidence});
      ++out.stats.kept;
      out.stats.kept_correct += correct;
      out.stats.kept_confidence_sum += dist.confidence;
    }
  }
  return out;
}

std::vector<PseudoLabel> merge_pseudo(std::vector<PseudoLabel> existing, std::span<const PseudoLabel> fresh) {
  std::map<std::size_t, PseudoLabel> by_id;
  for (const PseudoLabel& p : existing) by_id[p.id] = p;
  for (const PseudoLabel& p : fresh) {
    auto [it, inserted] = by_id.emplace(p.id, p);
    if (!inserted && p.confidence > it->second.confidence) it->second = p;
  }
  std::vector<PseudoLabel> out;
  out.reserve(by_id.size());
  for (const auto& [_, p] : by_id) out.push_back(p);
  return out;
}

AugmentStats refresh_pseudo(std::vector<ClientShard>& shards, std::span<const std::size_t> participants,
                            const ModelParams& params, const Task& task, const Dataset& train,
                            const AugmentConfig& config, std::size_t round, std::uint64_t seed, bool gate_open) {
  AugmentStats total;
  if (!gate_open) return total;
  for (std::size_t client_id : participants) {
    ClientShard& shard = shards.at(client_id);
    if (shard.unlabeled_ids.empty()) {
      if (!config.cumulative) shard.pseudo.clear();
      continue;
    }
    Rng rng = make_rng(seed, {7, round, client_id});
    PseudoLabelResult result = pseudo_label(params, task, shard, train, config, rng);
    total.merge(result.stats);
    shard.pseudo = config.cumulative ? merge_pseudo(std::move(shard.pseudo), result.pseudo) : std::move(result.pseudo);
  }
  return total;
}

}  // namespace fewfed
