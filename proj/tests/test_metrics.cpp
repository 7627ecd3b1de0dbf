#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fewfed/error.hpp"
#include "fewfed/metrics.hpp"
#include "support.hpp"

using namespace fewfed;
using fewfed::testing::World;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

History sample_history() {
  History h;
  for (std::size_t round = 0; round < 4; ++round) {
    RoundRecord r;
    r.seed = 3;
    r.round = round;
    r.mode = round % 2 ? Mode::fedcls : Mode::fedprompt;
    r.n_labeled = 64;
    r.gamma = 0.001;
    r.test_accuracy = 0.25 + 0.125 * static_cast<double>(round);
    if (round > 0) r.participants = {round, round + 4, 31};
    r.scanned = 100 * round;
    r.kept = 40 * round;
    if (round > 1) r.precision = 0.875;
    r.mean_confidence = round ? 0.953125 : 0.0;
    r.gate_open = round == 2;
    r.wall_time = 0.5 * static_cast<double>(round);
    h.push_back(r);
  }
  return h;
}

}  // namespace

TEST_CASE("evaluate counts argmax hits") {
  const World w;
  // Always label 0 on a balanced 4-class set.
  ModelParams zero = ModelParams::zeros(w.params.config);
  zero.tensor("mlm.bias")[w.prompt.pvp().verbalizer_ids(w.vocab)[0]] = 1.0;
  CHECK(evaluate(zero, w.data, w.prompt) == 0.25);

  ModelParams p = w.params;
  Rng rng(3);
  for (double& x : p.flat) x += 0.4 * (uniform_real(rng) - 0.5);
  for (Mode m : {Mode::fedprompt, Mode::fedcls}) {
    std::size_t hits = 0;
    for (const Example& ex : w.data.examples) {
      const auto d = w.task(m).predict(p, ex);
      std::size_t best = 0;
      for (std::size_t y = 1; y < d.probs.size(); ++y)
        if (d.probs[y] > d.probs[best]) best = y;
      hits += best == *ex.gold_label;
    }
    const double acc = evaluate(p, w.data, w.task(m));
    CHECK(acc == static_cast<double>(hits) / static_cast<double>(w.data.size()));

    Dataset reversed = w.data;
    std::reverse(reversed.examples.begin(), reversed.examples.end());
    CHECK(evaluate(p, reversed, w.task(m)) == acc);
  }
}

TEST_CASE("evaluate reaches 1 on a memorised set") {
  const World w(1);
  ModelParams p = w.params;
  auto opt = OptState::adam(1e-2, p.flat.size());
  const Batch b = prompt_batch(w.pvp, w.data.examples, w.vocab, 24);
  for (int i = 0; i < 200; ++i) step(p, opt, loss_and_grad(p, b, w.prompt.objective()).grad);
  CHECK(evaluate(p, w.data, w.prompt) == 1.0);
}

TEST_CASE("evaluate preconditions") {
  const World w;
  CHECK_THROWS_AS(evaluate(w.params, Dataset{}, w.prompt), ContractViolation);
  Dataset d = w.data;
  d.examples[3].gold_label.reset();
  CHECK_THROWS_AS(evaluate(w.params, d, w.prompt), ContractViolation);
}

TEST_CASE("seed aggregation closed forms") {
  const std::vector<double> flat{0.5, 0.5, 0.5};
  auto a = aggregate_accuracies(flat);
  CHECK(a.mean == 0.5);
  CHECK(a.std == 0.0);
  const std::vector<double> two{0.4, 0.6};
  a = aggregate_accuracies(two);
  CHECK(a.mean == doctest::Approx(0.5));
  CHECK(a.std == doctest::Approx(0.1));
  CHECK_THROWS_AS(aggregate_accuracies(std::vector<double>{}), ContractViolation);
}

TEST_CASE("seed aggregation matches a two-pass computation") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> xs(1 + uniform_index(rng, 9));
    for (double& x : xs) x = uniform_real(rng);
    long double mean = 0;
    for (double x : xs) mean += x;
    mean /= xs.size();
    long double ss = 0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const auto a = aggregate_accuracies(xs);
    CHECK(std::abs(a.mean - static_cast<double>(mean)) < 1e-12);
    CHECK(std::abs(a.std - std::sqrt(static_cast<double>(ss / xs.size()))) < 1e-12);
    CHECK((a.std == 0.0) == std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs[0]; }));
  }
}

TEST_CASE("best accuracy skips the zero-shot record when rounds ran") {
  History h = sample_history();
  h[0].test_accuracy = 0.99;
  CHECK(best_accuracy(h) == 0.625);
  h.resize(1);
  CHECK(best_accuracy(h) == 0.99);
  const std::vector<History> hs{sample_history(), sample_history()};
  CHECK(aggregate_seeds(hs).mean == 0.625);
}

TEST_CASE("relative performance") {
  CHECK(*relative_performance(0.45, 0.50) == doctest::Approx(0.9));
  CHECK(*relative_performance(0.7, 0.7) == 1.0);
  CHECK_FALSE(relative_performance(0.3, 0.0).has_value());
}

TEST_CASE("gain is filled per cell") {
  std::vector<SummaryRow> rows(5);
  rows[0] = {64, 100, Mode::fedprompt, false, 3, 0.7};
  rows[1] = {64, 100, Mode::fedcls, false, 3, 0.6};
  rows[2] = {16, 100, Mode::fedprompt, false, 3, 0.5};
  rows[3] = {64, 100, Mode::fedprompt, true, 3, 0.8};
  rows[4] = {64, 100, Mode::fedcls, true, 3, 0.55};
  fill_gains(rows);
  CHECK(*rows[0].gain == doctest::Approx(0.1));
  CHECK(*rows[1].gain == doctest::Approx(0.1));
  CHECK_FALSE(rows[2].gain.has_value());
  CHECK(*rows[3].gain == doctest::Approx(0.25));
}

TEST_CASE("history csv round trip and format") {
  const auto dir = testing::scratch_dir("metrics_history");
  const auto h = sample_history();
  write_history_csv(h, dir / "h.csv");
  const auto text = slurp(dir / "h.csv");
  CHECK(text.rfind(history_csv_header() + "\n", 0) == 0);
  CHECK(text.find("3,2,fedprompt,64,0.001000,0.500000,2;6;31,200,80,0.875000,0.953125,1,1.000000\n") !=
        std::string::npos);
  const auto back = read_history_csv(dir / "h.csv");
  REQUIRE(back.size() == h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    CHECK(back[i].round == h[i].round);
    CHECK(back[i].mode == h[i].mode);
    CHECK(back[i].test_accuracy == h[i].test_accuracy);
    CHECK(back[i].participants == h[i].participants);
    CHECK(back[i].precision == h[i].precision);
    CHECK(back[i].gate_open == h[i].gate_open);
    CHECK(back[i].wall_time == h[i].wall_time);
  }
  write_history_csv(h, dir / "h2.csv");
  CHECK(slurp(dir / "h2.csv") == text);
}

TEST_CASE("empty history writes only the header") {
  const auto dir = testing::scratch_dir("metrics_empty");
  write_history_csv({}, dir / "e.csv");
  CHECK(slurp(dir / "e.csv") == history_csv_header() + "\n");
  CHECK(read_history_csv(dir / "e.csv").empty());
}

TEST_CASE("summary csv round trip recomputes relative performance") {
  const auto dir = testing::scratch_dir("metrics_summary");
  std::vector<SummaryRow> rows;
  Rng rng(2);
  for (int i = 0; i < 12; ++i) {
    SummaryRow r;
    r.n_labeled = 16u << (i % 3);
    r.gamma = i % 2 ? 0.001 : 100.0;
    r.mode = i % 4 < 2 ? Mode::fedprompt : Mode::fedcls;
    r.augmentation = i >= 8;
    r.seeds = 3;
    r.mean_accuracy = 0.25 + 0.5 * uniform_real(rng);
    r.std_accuracy = 0.05 * uniform_real(rng);
    r.fullset_accuracy = 0.8 + 0.1 * uniform_real(rng);
    r.relative_performance = relative_performance(r.mean_accuracy, *r.fullset_accuracy);
    rows.push_back(r);
  }
  rows[5].fullset_accuracy.reset();
  rows[5].relative_performance.reset();
  fill_gains(rows);
  write_summary_csv(rows, dir / "s.csv");
  const auto back = read_summary_csv(dir / "s.csv");
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].mode == rows[i].mode);
    CHECK(back[i].augmentation == rows[i].augmentation);
    CHECK(back[i].gain.has_value() == rows[i].gain.has_value());
    if (back[i].fullset_accuracy) {
      // The reader recomputes the ratio from the printed fields.
      const double ratio = back[i].mean_accuracy / *back[i].fullset_accuracy;
      CHECK(std::abs(ratio - *back[i].relative_performance) < 1e-5);
      CHECK(std::abs(*back[i].relative_performance - *rows[i].relative_performance) < 1e-6);
    } else {
      CHECK_FALSE(back[i].relative_performance.has_value());
    }
  }
}

TEST_CASE("csv readers reject foreign files") {
  const auto dir = testing::scratch_dir("metrics_bad");
  std::ofstream(dir / "bad.csv") << "a,b\n1,2\n";
  CHECK_THROWS_AS(read_history_csv(dir / "bad.csv"), ParseError);
  std::ofstream(dir / "rows.csv") << history_csv_header() << "\n1,2,fedprompt\n";
  CHECK_THROWS_AS(read_history_csv(dir / "rows.csv"), ParseError);
  CHECK_THROWS_AS(read_summary_csv(dir / "missing.csv"), IoError);
}
