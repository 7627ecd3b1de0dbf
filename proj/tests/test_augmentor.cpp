#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fewfed/augmentor.hpp"
#include "fewfed/error.hpp"
#include "fewfed/metrics.hpp"
#include "support.hpp"

using namespace fewfed;
using fewfed::testing::World;

namespace {

// Constant prediction (0.95, 0.05/3, 0.05/3, 0.05/3) on every prompt input.
ModelParams confident_label0(const World& w) {
  ModelParams p = ModelParams::zeros(w.params.config);
  p.tensor("mlm.bias")[w.prompt.pvp().verbalizer_ids(w.vocab)[0]] = std::log(57.0);
  return p;
}

ClientShard pool(std::size_t id, std::size_t first, std::size_t count) {
  ClientShard s;
  s.client_id = id;
  s.unlabeled_ids.resize(count);
  std::iota(s.unlabeled_ids.begin(), s.unlabeled_ids.end(), first);
  return s;
}

AugmentConfig with_threshold(double t, std::size_t budget = 100) {
  AugmentConfig c;
  c.confidence_threshold = t;
  c.per_client_budget = budget;
  return c;
}

}  // namespace

TEST_CASE("capacity gate rule") {
  const World w;
  const double acc = evaluate(w.params, w.data, w.prompt);
  CHECK(capacity_gate(w.params, acc, w.data, w.prompt));         // tie opens
  CHECK(capacity_gate(w.params, acc - 0.1, w.data, w.prompt));
  CHECK_FALSE(capacity_gate(w.params, acc + 0.1, w.data, w.prompt));
  // Constant label-0 model on a balanced 4-class set scores exactly 0.25.
  const auto c = confident_label0(w);
  CHECK_FALSE(capacity_gate(c, 0.60, w.data, w.prompt));
  CHECK(capacity_gate(c, 0.25, w.data, w.prompt));
  CHECK_THROWS_AS(capacity_gate(c, 0.2, Dataset{}, w.prompt), ContractViolation);
}

TEST_CASE("forced confident model keeps everything with label 0") {
  const World w;
  const auto c = confident_label0(w);
  Rng rng(1);
  const auto r = pseudo_label(c, w.prompt, pool(0, 0, 12), w.data, with_threshold(0.9), rng);
  CHECK(r.stats.scanned == 12);
  CHECK(r.stats.kept == 12);
  CHECK(r.stats.mean_confidence() == doctest::Approx(0.95).epsilon(1e-12));
  for (const auto& p : r.pseudo) CHECK(p.label == 0);
  // Ids 0..11 cycle through the 4 classes.
  CHECK(*r.stats.precision() == doctest::Approx(0.25));
  CHECK(*r.stats.scanned_precision() == doctest::Approx(0.25));
}

TEST_CASE("threshold extremes") {
  const World w;
  Rng rng(2);
  const auto none = pseudo_label(w.params, w.prompt, pool(0, 0, 30), w.data, with_threshold(1.0), rng);
  CHECK(none.stats.kept == 0);
  CHECK_FALSE(none.stats.precision().has_value());
  CHECK(none.stats.mean_confidence() == 0.0);
  const auto all = pseudo_label(w.params, w.prompt, pool(0, 0, 30), w.data, with_threshold(0.0, 100), rng);
  CHECK(all.stats.kept == 30);
}

TEST_CASE("budget bounds the scan") {
  const World w;
  Rng rng(3);
  const auto r = pseudo_label(w.params, w.prompt, pool(0, 0, 30), w.data, with_threshold(0.0, 7), rng);
  CHECK(r.stats.scanned == 7);
  CHECK(r.stats.kept == 7);
  for (std::size_t i = 1; i < r.pseudo.size(); ++i) CHECK(r.pseudo[i - 1].id < r.pseudo[i].id);
  auto full = with_threshold(0.0, 7);
  full.full_scan = true;
  CHECK(pseudo_label(w.params, w.prompt, pool(0, 0, 30), w.data, full, rng).stats.scanned == 30);
}

TEST_CASE("raising the threshold never keeps more") {
  const World w(10, 4);
  ModelParams p = w.params;
  Rng jitter(4);
  for (double& x : p.flat) x += 0.5 * (uniform_real(jitter) - 0.5);
  std::size_t previous = 1000;
  for (double t = 0.0; t <= 1.0; t += 0.05) {
    Rng rng(6);  // same scan set every time
    const auto r = pseudo_label(p, w.prompt, pool(0, 0, 40), w.data, with_threshold(t), rng);
    CHECK(r.stats.scanned == 40);
    CHECK(r.stats.kept <= previous);
    CHECK(r.stats.kept <= r.stats.scanned);
    previous = r.stats.kept;
  }
}

TEST_CASE("closed gate leaves shards unchanged") {
  const World w;
  std::vector<ClientShard> shards{pool(0, 0, 5), pool(1, 5, 5)};
  shards[0].pseudo = {{2, 1, 0.99}};
  const auto before = shards[0].pseudo.size();
  const std::vector<std::size_t> participants{0, 1};
  const auto stats = refresh_pseudo(shards, participants, w.params, w.prompt, w.data, with_threshold(0.0), 1, 1, false);
  CHECK(stats.scanned == 0);
  CHECK(shards[0].pseudo.size() == before);
  CHECK(shards[1].pseudo.empty());
}

TEST_CASE("refresh replaces pseudo labels by default") {
  const World w;
  std::vector<ClientShard> shards{pool(0, 0, 8)};
  const std::vector<std::size_t> participants{0};
  refresh_pseudo(shards, participants, w.params, w.prompt, w.data, with_threshold(0.0, 3), 1, 1);
  const auto first = shards[0].pseudo;
  refresh_pseudo(shards, participants, w.params, w.prompt, w.data, with_threshold(0.0, 3), 2, 1);
  const auto second = shards[0].pseudo;
  CHECK(second.size() == 3);
  Rng rng = make_rng(1, {7, 2, 0});
  const auto direct = pseudo_label(w.params, w.prompt, shards[0], w.data, with_threshold(0.0, 3), rng);
  REQUIRE(direct.pseudo.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(second[i].id == direct.pseudo[i].id);
  CHECK(first.size() == 3);
}

TEST_CASE("cumulative refresh keeps the most confident entry") {
  const std::vector<PseudoLabel> existing{{4, 1, 0.91}, {9, 0, 0.97}};
  const std::vector<PseudoLabel> fresh{{4, 2, 0.95}, {9, 3, 0.92}, {1, 0, 0.93}};
  const auto merged = merge_pseudo(existing, fresh);
  REQUIRE(merged.size() == 3);
  CHECK(merged[0].id == 1);
  CHECK(merged[1].id == 4);
  CHECK(merged[1].confidence == 0.95);
  CHECK(merged[1].label == 2);
  CHECK(merged[2].confidence == 0.97);
  CHECK(merged[2].label == 0);

  const World w;
  std::vector<ClientShard> shards{pool(0, 0, 8)};
  auto cfg = with_threshold(0.0, 3);
  cfg.cumulative = true;
  const std::vector<std::size_t> participants{0};
  refresh_pseudo(shards, participants, w.params, w.prompt, w.data, cfg, 1, 1);
  refresh_pseudo(shards, participants, w.params, w.prompt, w.data, cfg, 2, 1);
  CHECK(shards[0].pseudo.size() >= 3);
  CHECK(shards[0].pseudo.size() <= 6);
}

TEST_CASE("pseudo labels never cover labeled examples") {
  const World w;
  ClientShard s = pool(0, 10, 10);
  s.labeled_ids = {0, 1, 2};
  std::vector<ClientShard> shards{s};
  const std::vector<std::size_t> participants{0};
  refresh_pseudo(shards, participants, w.params, w.prompt, w.data, with_threshold(0.0), 1, 1);
  CHECK(shards[0].labeled_ids == std::vector<std::size_t>{0, 1, 2});
  for (const auto& p : shards[0].pseudo) CHECK(p.id >= 10);
}

TEST_CASE("augment config validation") {
  CHECK_NOTHROW(AugmentConfig{}.validate());
  CHECK_THROWS_AS(with_threshold(1.5).validate(), ConfigError);
  CHECK_THROWS_AS(with_threshold(-0.1).validate(), ConfigError);
  CHECK_THROWS_AS(with_threshold(0.5, 0).validate(), ConfigError);
}

TEST_CASE("stats merge") {
  AugmentStats a{10, 4, 3, 6, 3.8}, b{5, 1, 1, 2, 0.9};
  a.merge(b);
  CHECK(a.scanned == 15);
  CHECK(a.kept == 5);
  CHECK(*a.precision() == doctest::Approx(0.8));
  CHECK(*a.scanned_precision() == doctest::Approx(8.0 / 15));
  CHECK(a.mean_confidence() == doctest::Approx(4.7 / 5));
}
