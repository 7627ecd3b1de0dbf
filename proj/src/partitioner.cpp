#include "fewfed/partitioner.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "fewfed/error.hpp"
#include "fewfed/numeric.hpp"

namespace fewfed {

void PartitionSpec::validate() const {
  if (num_clients < 1) throw ConfigError("partition: num_clients must be >= 1");
  if (xi < 1 || xi > num_clients) throw ConfigError("partition: xi must be in [1, num_clients]");
  if (!(gamma > 0.0)) throw ConfigError("partition: gamma must be > 0");
  if (!(alpha > 0.0)) throw ConfigError("partition: alpha must be > 0");
}

std::size_t PartitionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::size_t PartitionMatrix::row_sum(std::size_t r) const {
  std::size_t sum = 0;
  for (std::size_t c = 0; c < cols; ++c) sum += at(r, c);
  return sum;
}

Shares dirichlet_shares(double gamma, std::size_t xi, Rng& rng) {
  require(gamma > 0.0 && xi >= 1, "dirichlet_shares: gamma > 0 and xi >= 1");
  std::gamma_distribution<double> draw(gamma, 1.0);
  Shares shares(xi);
  double sum = 0.0;
  for (double& s : shares) {
    s = draw(rng);
    sum += s;
  }
  if (!(sum > 0.0)) {
    // Every draw underflowed: the gamma -> 0 limit is a simplex vertex.
    std::fill(shares.begin(), shares.end(), 0.0);
    shares[uniform_index(rng, xi)] = 1.0;
    return shares;
  }
  for (double& s : shares) s /= sum;
  return shares;
}

std::vector<std::size_t> allocate_quotas(const Shares& shares, std::size_t n) {
  return largest_remainder(shares, n);
}

std::vector<ClientShard> partition_features(const Dataset& train, std::size_t num_clients,
                                            double alpha, Rng& rng) {
  require(num_clients >= 1, "partition_features: num_clients >= 1");
  std::vector<ClientShard> shards(num_clients);
  for (std::size_t i = 0; i < num_clients; ++i) shards[i].client_id = i;

  // One group per class plus a trailing group for unlabeled examples.
  std::vector<std::vector<std::size_t>> groups(train.num_classes() + 1);
  for (const Example& ex : train.examples)
    groups[ex.gold_label ? *ex.gold_label : train.num_classes()].push_back(ex.id);

  for (auto& group : groups) {
    if (group.empty()) continue;
    const Shares proportions = dirichlet_shares(alpha, num_clients, rng);
    const auto counts = largest_remainder(proportions, group.size());
    shuffle_in_place<std::size_t>(group, rng);
    auto it = group.begin();
    for (std::size_t client = 0; client < num_clients; ++client) {
      auto end = it + static_cast<std::ptrdiff_t>(counts[client]);
      shards[client].unlabeled_ids.insert(shards[client].unlabeled_ids.end(), it, end);
      it = end;
    }
  }
  for (auto& shard : shards) std::sort(shard.unlabeled_ids.begin(), shard.unlabeled_ids.end());
  return shards;
}

LabelAssignment assign_labels(std::vector<ClientShard> shards, std::vector<std::size_t> quotas,
                              const std::vector<std::size_t>& xi_client_ids, const Dataset& train,
                              Rng& rng) {
  require(quotas.size() == xi_client_ids.size(), "assign_labels: one quota per label holder");
  {
    auto sorted = xi_client_ids;
    std::sort(sorted.begin(), sorted.end());
    require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
            "assign_labels: label holders must be distinct");
  }

  std::vector<std::vector<std::size_t>> pools(xi_client_ids.size());
  std::vector<std::size_t> capacity(xi_client_ids.size());
  for (std::size_t i = 0; i < xi_client_ids.size(); ++i) {
    const ClientShard& shard = shards.at(xi_client_ids[i]);
    for (std::size_t id : shard.unlabeled_ids)
      if (train[id].gold_label) pools[i].push_back(id);
    capacity[i] = pools[i].size();
  }
  const std::size_t n = std::accumulate(quotas.begin(), quotas.end(), std::size_t{0});
  const std::size_t total_capacity = std::accumulate(capacity.begin(), capacity.end(), std::size_t{0});
  if (total_capacity < n)
    throw AllocationError("cannot place " + std::to_string(n) + " labels: label holders only have " +
                          std::to_string(total_capacity) + " labeled examples");

  // Clients whose pool is smaller than their quota hand the surplus on,
  // apportioned by the others' spare capacity.
  for (;;) {
    std::size_t surplus = 0;
    std::vector<double> spare(quotas.size(), 0.0);
    for (std::size_t i = 0; i < quotas.size(); ++i) {
      if (quotas[i] > capacity[i]) {
        surplus += quotas[i] - capacity[i];
        quotas[i] = capacity[i];
      }
      spare[i] = static_cast<double>(capacity[i] - quotas[i]);
    }
    if (surplus == 0) break;
    const auto extra = largest_remainder(spare, surplus);
    for (std::size_t i = 0; i < quotas.size(); ++i) quotas[i] += extra[i];
  }

  LabelAssignment out;
  out.matrix.rows = xi_client_ids.size();
  out.matrix.cols = train.num_classes();
  out.matrix.counts.assign(out.matrix.rows * out.matrix.cols, 0);
  for (std::size_t i = 0; i < xi_client_ids.size(); ++i) {
    ClientShard& shard = shards[xi_client_ids[i]];
    auto chosen = sample_without_replacement<std::size_t>(pools[i], quotas[i], rng);
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t id : chosen) ++out.matrix.at(i, *train[id].gold_label);
    std::vector<std::size_t> remaining;
    std::set_difference(shard.unlabeled_ids.begin(), shard.unlabeled_ids.end(), chosen.begin(),
                        chosen.end(), std::back_inserter(remaining));
    shard.unlabeled_ids = std::move(remaining);
    shard.labeled_ids.insert(shard.labeled_ids.end(), chosen.begin(), chosen.end());
    std::sort(shard.labeled_ids.begin(), shard.labeled_ids.end());
  }
  out.shards = std::move(shards);
  out.quotas = std::move(quotas);
  return out;
}

Partition make_partition(const Dataset& train, const PartitionSpec& spec) {
  spec.validate();
  std::size_t labeled = 0;
  for (const Example& ex : train.examples) labeled += ex.gold_label.has_value();
  if (spec.n_labeled > labeled)
    throw AllocationError("n_labeled " + std::to_string(spec.n_labeled) + " exceeds the " +
                          std::to_string(labeled) + " labeled training examples");

  Rng feature_rng = make_rng(spec.seed, {1});
  Rng holder_rng = make_rng(spec.seed, {2});
  Rng share_rng = make_rng(spec.seed, {3});
  Rng assign_rng = make_rng(spec.seed, {4});

  Partition out;
  auto shards = partition_features(train, spec.num_clients, spec.alpha, feature_rng);

  std::vector<std::size_t> all(spec.num_clients);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (spec.random_xi) {
    out.label_holders = sample_without_replacement<std::size_t>(all, spec.xi, holder_rng);
    std::sort(out.label_holders.begin(), out.label_holders.end());
  } else {
    out.label_holders.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(spec.xi));
  }

  out.shares = dirichlet_shares(spec.gamma, spec.xi, share_rng);
  auto quotas = allocate_quotas(out.shares, spec.n_labeled);
  auto assignment = assign_labels(std::move(shards), std::move(quotas), out.label_holders, train, assign_rng);
  out.shards = std::move(assignment.shards);
  out.matrix = std::move(assignment.matrix);
  return out;
}

void emit_heatmap(const PartitionMatrix& matrix, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t r = 0; r < matrix.rows; ++r) {
    for (std::size_t c = 0; c < matrix.cols; ++c) {
      if (c) out << ',';
      out << matrix.at(r, c);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

PartitionMatrix read_heatmap(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  PartitionMatrix matrix;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    std::stringstream cells(line);
    std::string cell;
    std::size_t cols = 0;
    while (std::getline(cells, cell, ',')) {
      try {
        matrix.counts.push_back(std::stoull(cell));
      } catch (const std::exception&) {
        throw ParseError("bad heatmap cell \"" + cell + "\"", line_number);
      }
      ++cols;
    }
    if (matrix.rows == 0)
      matrix.cols = cols;
    else if (cols != matrix.cols)
      throw ParseError("ragged heatmap row", line_number);
    ++matrix.rows;
  }
  return matrix;
}

nlohmann::json partition_manifest(const Partition& partition, const PartitionSpec& spec) {
  using nlohmann::json;
  json clients = json::array();
  for (const ClientShard& shard : partition.shards) {
    clients.push_back({{"client_id", shard.client_id},
                       {"labeled_ids", shard.labeled_ids},
                       {"unlabeled_ids", shard.unlabeled_ids}});
  }
  return json{{"spec",
               {{"num_clients", spec.num_clients},
                {"n_labeled", spec.n_labeled},
                {"gamma", spec.gamma},
                {"xi", spec.xi},
                {"alpha", spec.alpha},
                {"random_xi", spec.random_xi},
                {"seed", spec.seed}}},
              {"label_holders", partition.label_holders},
              {"shares", partition.shares},
              {"clients", clients}};
}

}  // namespace fewfed
