#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fewfed/corpus.hpp"
#include "fewfed/rng.hpp"
#include "json.hpp"

namespace fewfed {

/// The (n, gamma) labeled-data generator plus the feature non-iid sharding it
/// runs on top of.
struct PartitionSpec {
  std::size_t num_clients = 32;
  std::size_t n_labeled = 64;
  double gamma = 100.0;   // Dirichlet concentration of the labeled quotas
  std::size_t xi = 32;    // clients that hold labels
  double alpha = 1.0;     // per-class Dirichlet concentration of the feature shards
  bool random_xi = false; // choose the xi label holders uniformly instead of ids 0..xi-1
  std::uint64_t seed = 0;

  void validate() const;
};

struct PseudoLabel {
  std::size_t id = 0;
  LabelId label = 0;
  double confidence = 0.0;
};

struct ClientShard {
  std::size_t client_id = 0;
  std::vector<std::size_t> unlabeled_ids;
  std::vector<std::size_t> labeled_ids;
  std::vector<PseudoLabel> pseudo;

  std::size_t effective_size() const noexcept { return labeled_ids.size() + pseudo.size(); }
};

/// Labeled examples per (label-holding client, class).
struct PartitionMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> counts;  // row-major rows x cols

  std::size_t& at(std::size_t r, std::size_t c) { return counts.at(r * cols + c); }
  std::size_t at(std::size_t r, std::size_t c) const { return counts.at(r * cols + c); }
  std::size_t total() const;
  std::size_t row_sum(std::size_t r) const;
};

using Shares = std::vector<double>;

std::vector<ClientShard> partition_features(const Dataset& train, std::size_t num_clients,
                                            double alpha, Rng& rng);

/// z ~ Dir_xi(gamma) as normalized Gamma(gamma, 1) draws.
Shares dirichlet_shares(double gamma, std::size_t xi, Rng& rng);

/// floor(z_i * n) plus largest-remainder top-up; sums to n exactly.
std::vector<std::size_t> allocate_quotas(const Shares& shares, std::size_t n);

struct LabelAssignment {
  std::vector<ClientShard> shards;
  PartitionMatrix matrix;
  std::vector<std::size_t> quotas;  // after surplus reallocation
};

/// Reveals quota_i labels drawn from client xi_client_ids[i]'s own pool.
LabelAssignment assign_labels(std::vector<ClientShard> shards, std::vector<std::size_t> quotas,
                              const std::vector<std::size_t>& xi_client_ids, const Dataset& train,
                              Rng& rng);

struct Partition {
  std::vector<ClientShard> shards;
  std::vector<std::size_t> label_holders;
  Shares shares;
  PartitionMatrix matrix;
};

/// Full generator: features, shares, quotas, label reveal. All randomness is
/// derived from spec.seed.
Partition make_partition(const Dataset& train, const PartitionSpec& spec);

void emit_heatmap(const PartitionMatrix& matrix, const std::filesystem::path& path);
PartitionMatrix read_heatmap(const std::filesystem::path& path);

nlohmann::json partition_manifest(const Partition& partition, const PartitionSpec& spec);

}  // namespace fewfed
