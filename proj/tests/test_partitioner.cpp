#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fewfed/error.hpp"
#include "fewfed/partitioner.hpp"
#include "support.hpp"

using namespace fewfed;

namespace {

Dataset balanced(std::size_t classes, std::size_t per_class) {
  SynthSpec spec;
  spec.num_classes = classes;
  spec.examples_per_class = per_class;
  return synth_generate(spec);
}

double mean_max_share(double gamma, std::size_t xi, int draws, std::uint64_t seed) {
  Rng rng(seed);
  double sum = 0.0;
  for (int i = 0; i < draws; ++i) {
    const auto s = dirichlet_shares(gamma, xi, rng);
    sum += *std::max_element(s.begin(), s.end());
  }
  return sum / draws;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("dirichlet_shares basics") {
  Rng rng(1);
  CHECK(dirichlet_shares(0.5, 1, rng) == Shares{1.0});
  for (int i = 0; i < 50; ++i) {
    const auto s = dirichlet_shares(0.3, 7, rng);
    CHECK(s.size() == 7);
    CHECK(std::accumulate(s.begin(), s.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
    for (double v : s) CHECK(v >= 0.0);
  }
  const auto flat = dirichlet_shares(1e9, 4, rng);
  for (double v : flat) CHECK(std::abs(v - 0.25) < 0.01);
}

TEST_CASE("mean max share matches an independent sampler") {
  // Reference means from 10^6 numpy Dirichlet draws per gamma at xi = 32.
  // Tolerances are about 4 standard errors at 40000 draws.
  CHECK(std::abs(mean_max_share(1e-3, 32, 40000, 2) - 0.97907) < 0.0015);
  CHECK(std::abs(mean_max_share(1e-1, 32, 40000, 2) - 0.40182) < 0.006);
  CHECK(std::abs(mean_max_share(1e1, 32, 40000, 2) - 0.055226) < 0.0003);
  CHECK(std::abs(mean_max_share(1e2, 32, 40000, 2) - 0.038084) < 0.0001);
}

TEST_CASE("tiny gamma concentrates the shares") {
  CHECK(mean_max_share(1e-3, 32, 1000, 2) > 0.95);
  // Shares stay a valid simplex point even when gamma draws underflow.
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto s = dirichlet_shares(1e-300, 32, rng);
    CHECK(std::accumulate(s.begin(), s.end(), 0.0) == doctest::Approx(1.0));
  }
}

TEST_CASE("mean max share decreases with gamma") {
  double previous = 2.0;
  for (double gamma : {1e-3, 1e-1, 1e1, 1e2}) {
    const double m = mean_max_share(gamma, 32, 1000, 4);
    CHECK(m < previous);
    previous = m;
  }
}

TEST_CASE("allocate_quotas worked examples and sum property") {
  CHECK(allocate_quotas({0.5, 0.5}, 3) == std::vector<std::size_t>{2, 1});
  CHECK(allocate_quotas({0.3, 0.3, 0.4}, 10) == std::vector<std::size_t>{3, 3, 4});
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t xi = 1 + uniform_index(rng, 40);
    const std::size_t n = uniform_index(rng, 2000);
    const auto q = allocate_quotas(dirichlet_shares(0.01 + 10.0 * uniform_real(rng), xi, rng), n);
    CHECK(std::accumulate(q.begin(), q.end(), std::size_t{0}) == n);
  }
}

TEST_CASE("partition_features is a set partition") {
  const auto train = balanced(4, 50);
  Rng rng(6);
  const auto shards = partition_features(train, 9, 0.7, rng);
  REQUIRE(shards.size() == 9);
  std::set<std::size_t> seen;
  for (std::size_t c = 0; c < shards.size(); ++c) {
    CHECK(shards[c].client_id == c);
    CHECK(std::is_sorted(shards[c].unlabeled_ids.begin(), shards[c].unlabeled_ids.end()));
    for (std::size_t id : shards[c].unlabeled_ids) CHECK(seen.insert(id).second);
  }
  CHECK(seen.size() == train.size());

  Rng one(1);
  const auto single = partition_features(train, 1, 0.7, one);
  CHECK(single[0].unlabeled_ids.size() == train.size());
}

TEST_CASE("huge alpha spreads features evenly") {
  const auto train = balanced(4, 100);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    for (const auto& s : partition_features(train, 4, 1e9, rng))
      CHECK(std::abs(static_cast<double>(s.unlabeled_ids.size()) - 100.0) <= 10.0);
  }
}

TEST_CASE("assign_labels draws from each holder's own pool") {
  const auto train = balanced(3, 40);
  Rng rng(7);
  auto shards = partition_features(train, 6, 1.0, rng);
  const auto before = shards;
  const std::vector<std::size_t> holders{1, 3, 4};
  const std::size_t n = 30;
  auto quotas = allocate_quotas(dirichlet_shares(1.0, 3, rng), n);
  auto result = assign_labels(shards, quotas, holders, train, rng);
  CHECK(result.matrix.total() == n);
  CHECK(result.matrix.rows == 3);
  CHECK(result.matrix.cols == 3);
  for (std::size_t c = 0; c < 6; ++c) {
    const auto& s = result.shards[c];
    const bool holder = std::find(holders.begin(), holders.end(), c) != holders.end();
    if (!holder) CHECK(s.labeled_ids.empty());
    std::vector<std::size_t> both;
    std::set_intersection(s.labeled_ids.begin(), s.labeled_ids.end(), s.unlabeled_ids.begin(),
                          s.unlabeled_ids.end(), std::back_inserter(both));
    CHECK(both.empty());
    // Labeled and unlabeled together are the original shard.
    std::vector<std::size_t> all = s.labeled_ids;
    all.insert(all.end(), s.unlabeled_ids.begin(), s.unlabeled_ids.end());
    std::sort(all.begin(), all.end());
    CHECK(all == before[c].unlabeled_ids);
  }
  for (std::size_t i = 0; i < holders.size(); ++i)
    CHECK(result.matrix.row_sum(i) == result.shards[holders[i]].labeled_ids.size());
}

TEST_CASE("one-hot quotas give one nonzero row") {
  const auto train = balanced(2, 50);
  Rng rng(8);
  auto shards = partition_features(train, 4, 1e6, rng);
  auto result = assign_labels(shards, {10, 0, 0, 0}, {0, 1, 2, 3}, train, rng);
  CHECK(result.matrix.row_sum(0) == 10);
  for (std::size_t r = 1; r < 4; ++r) CHECK(result.matrix.row_sum(r) == 0);
}

TEST_CASE("surplus moves to holders with spare capacity") {
  const auto train = balanced(2, 10);
  std::vector<ClientShard> shards(3);
  for (std::size_t c = 0; c < 3; ++c) shards[c].client_id = c;
  // Client 0 holds 2 examples, client 1 holds 8, client 2 holds 10.
  for (std::size_t id = 0; id < 20; ++id) shards[id < 2 ? 0 : id < 10 ? 1 : 2].unlabeled_ids.push_back(id);
  Rng rng(9);
  auto result = assign_labels(shards, {12, 0, 0}, {0, 1, 2}, train, rng);
  CHECK(result.quotas[0] == 2);
  CHECK(result.quotas[0] + result.quotas[1] + result.quotas[2] == 12);
  CHECK(result.quotas[1] <= 8);
  CHECK(result.quotas[2] <= 10);
  CHECK(result.matrix.total() == 12);

  CHECK_THROWS_AS(assign_labels(shards, {25, 0, 0}, {0, 1, 2}, train, rng), AllocationError);
  CHECK_THROWS_AS(assign_labels(shards, {1, 0}, {0, 0}, train, rng), ContractViolation);
}

TEST_CASE("make_partition places exactly n labels deterministically") {
  SynthSpec synth;
  synth.examples_per_class = 60;
  const auto train = synth_generate(synth);
  for (double gamma : {1e-3, 1.0, 100.0}) {
    PartitionSpec spec;
    spec.num_clients = 12;
    spec.xi = 8;
    spec.n_labeled = 40;
    spec.gamma = gamma;
    spec.seed = 17;
    const auto a = make_partition(train, spec);
    const auto b = make_partition(train, spec);
    std::size_t labeled = 0;
    for (const auto& s : a.shards) labeled += s.labeled_ids.size();
    CHECK(labeled == 40);
    CHECK(a.matrix.total() == 40);
    CHECK(a.label_holders == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
    for (std::size_t c = 0; c < a.shards.size(); ++c) {
      CHECK(a.shards[c].labeled_ids == b.shards[c].labeled_ids);
      CHECK(a.shards[c].unlabeled_ids == b.shards[c].unlabeled_ids);
    }
  }
}

TEST_CASE("random label holders are drawn when asked") {
  const auto train = balanced(2, 100);
  PartitionSpec spec;
  spec.num_clients = 20;
  spec.xi = 5;
  spec.n_labeled = 10;
  spec.random_xi = true;
  spec.seed = 3;
  const auto p = make_partition(train, spec);
  CHECK(p.label_holders.size() == 5);
  CHECK(std::is_sorted(p.label_holders.begin(), p.label_holders.end()));
  CHECK(p.label_holders != std::vector<std::size_t>{0, 1, 2, 3, 4});
}

TEST_CASE("partition spec validation") {
  const auto train = balanced(2, 10);
  PartitionSpec spec;
  spec.num_clients = 4;
  spec.xi = 5;
  CHECK_THROWS_AS(make_partition(train, spec), ConfigError);
  spec.xi = 4;
  spec.gamma = 0.0;
  CHECK_THROWS_AS(make_partition(train, spec), ConfigError);
  spec.gamma = 1.0;
  spec.n_labeled = 21;
  CHECK_THROWS_AS(make_partition(train, spec), AllocationError);
}

TEST_CASE("heatmap serialization") {
  const auto dir = testing::scratch_dir("heatmap");
  PartitionMatrix m;
  m.rows = 2;
  m.cols = 2;
  m.counts = {1, 0, 0, 3};
  emit_heatmap(m, dir / "h.csv");
  CHECK(slurp(dir / "h.csv") == "1,0\n0,3\n");
  const auto back = read_heatmap(dir / "h.csv");
  CHECK(back.rows == 2);
  CHECK(back.cols == 2);
  CHECK(back.counts == m.counts);

  PartitionMatrix zero;
  zero.rows = 3;
  zero.cols = 2;
  zero.counts.assign(6, 0);
  emit_heatmap(zero, dir / "z.csv");
  CHECK(slurp(dir / "z.csv") == "0,0\n0,0\n0,0\n");
}

TEST_CASE("partition manifest lists clients") {
  const auto train = balanced(2, 20);
  PartitionSpec spec;
  spec.num_clients = 3;
  spec.xi = 3;
  spec.n_labeled = 6;
  const auto p = make_partition(train, spec);
  const auto m = partition_manifest(p, spec);
  CHECK(m["clients"].size() == 3);
  CHECK(m["spec"]["n_labeled"] == 6);
  std::size_t labeled = 0;
  for (const auto& c : m["clients"]) labeled += c["labeled_ids"].size();
  CHECK(labeled == 6);
}
