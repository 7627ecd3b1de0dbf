#include "fewfed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "fewfed/error.hpp"

namespace fewfed {

double evaluate(const ModelParams& params, const Dataset& test, const Task& task) {
  require(!test.empty(), "evaluate: test set is empty");
  std::size_t correct = 0;
  for (const Example& ex : test.examples) {
    require(ex.gold_label.has_value(), "evaluate: test example without gold label");
    if (task.predict(params, ex).argmax == *ex.gold_label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

double best_accuracy(const History& history) {
  require(!history.empty(), "best_accuracy: empty history");
  if (history.size() == 1) return history.front().test_accuracy;
  double best = 0.0;
  for (const RoundRecord& r : history)
    if (r.round > 0) best = std::max(best, r.test_accuracy);
  return best;
}

SeedAggregate aggregate_accuracies(std::span<const double> accuracies) {
  require(!accuracies.empty(), "aggregate_seeds: no runs");
  SeedAggregate out;
  for (double a : accuracies) out.mean += a;
  out.mean /= static_cast<double>(accuracies.size());
  double var = 0.0;
  for (double a : accuracies) var += (a - out.mean) * (a - out.mean);
  var /= static_cast<double>(accuracies.size());
  out.std = std::sqrt(var);
  return out;
}

SeedAggregate aggregate_seeds(std::span<const History> histories) {
  std::vector<double> best;
  for (const History& h : histories) best.push_back(best_accuracy(h));
  return aggregate_accuracies(best);
}

std::optional<double> relative_performance(double accuracy, double fullset_accuracy) {
  if (fullset_accuracy == 0.0) return std::nullopt;
  return accuracy / fullset_accuracy;
}

void fill_gains(std::vector<SummaryRow>& rows) {
  using Key = std::tuple<std::size_t, double, bool>;
  std::map<Key, double> prompt, cls;
  for (const SummaryRow& r : rows)
    (r.mode == Mode::fedprompt ? prompt : cls)[{r.n_labeled, r.gamma, r.augmentation}] = r.mean_accuracy;
  for (SummaryRow& r : rows) {
    const Key key{r.n_labeled, r.gamma, r.augmentation};
    auto p = prompt.find(key);
    auto c = cls.find(key);
    if (p != prompt.end() && c != cls.end()) r.gain = p->second - c->second;
  }
}

// ---------------------------------------------------------------------------
// CSV

std::string format_real(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.6f", value);
  return buffer;
}

namespace {

std::string optional_real(const std::optional<double>& v) { return v ? format_real(*v) : std::string(); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::optional<double> parse_optional(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  return std::stod(cell);
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

template <typename Parse>
auto read_rows(const std::filesystem::path& path, const std::string& header, Parse parse) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != header) throw ParseError("unexpected CSV header in " + path.string(), 1);
  std::vector<decltype(parse(std::vector<std::string>{}))> rows;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    try {
      rows.push_back(parse(split_csv(line)));
    } catch (const std::exception& e) {
      throw ParseError(std::string("bad CSV row: ") + e.what(), line_number);
    }
  }
  return rows;
}

}  // namespace

std::string history_csv_header() {
  return "seed,round,mode,n_labeled,gamma,test_accuracy,participants,scanned,kept,precision,mean_confidence,"
         "gate_open,wall_time";
}

std::string summary_csv_header() {
  return "n_labeled,gamma,mode,augmentation,seeds,mean_accuracy,std_accuracy,fullset_accuracy,"
         "relative_performance,gain";
}

void write_history_csv(const History& history, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << history_csv_header() << '\n';
  for (const RoundRecord& r : history) {
    std::string participants;
    for (std::size_t id : r.participants) {
      if (!participants.empty()) participants.push_back(';');
      participants += std::to_string(id);
    }
    out << r.seed << ',' << r.round << ',' << to_string(r.mode) << ',' << r.n_labeled << ','
        << format_real(r.gamma) << ',' << format_real(r.test_accuracy) << ',' << participants << ','
        << r.scanned << ',' << r.kept << ',' << optional_real(r.precision) << ',' << format_real(r.mean_confidence)
        << ',' << (r.gate_open ? 1 : 0) << ',' << format_real(r.wall_time) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

History read_history_csv(const std::filesystem::path& path) {
  return read_rows(path, history_csv_header(), [](const std::vector<std::string>& c) {
    if (c.size() != 13) throw std::runtime_error("expected 13 columns");
    RoundRecord r;
    r.seed = std::stoull(c[0]);
    r.round = std::stoull(c[1]);
    r.mode = parse_mode(c[2]);
    r.n_labeled = std::stoull(c[3]);
    r.gamma = std::stod(c[4]);
    r.test_accuracy = std::stod(c[5]);
    std::stringstream ids(c[6]);
    std::string id;
    while (std::getline(ids, id, ';'))
      if (!id.empty()) r.participants.push_back(std::stoull(id));
    r.scanned = std::stoull(c[7]);
    r.kept = std::stoull(c[8]);
    r.precision = parse_optional(c[9]);
    r.mean_confidence = std::stod(c[10]);
    r.gate_open = c[11] == "1";
    r.wall_time = std::stod(c[12]);
    return r;
  });
}

void write_summary_csv(std::span<const SummaryRow> rows, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << summary_csv_header() << '\n';
  for (const SummaryRow& r : rows) {
    out << r.n_labeled << ',' << format_real(r.gamma) << ',' << to_string(r.mode) << ',' << (r.augmentation ? 1 : 0)
        << ',' << r.seeds << ',' << format_real(r.mean_accuracy) << ',' << format_real(r.std_accuracy) << ','
        << optional_real(r.fullset_accuracy) << ',' << optional_real(r.relative_performance) << ','
        << optional_real(r.gain) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path) {
  return read_rows(path, summary_csv_header(), [](const std::vector<std::string>& c) {
    if (c.size() != 10) throw std::runtime_error("expected 10 columns");
    SummaryRow r;
    r.n_labeled = std::stoull(c[0]);
    r.gamma = std::stod(c[1]);
    r.mode = parse_mode(c[2]);
    r.augmentation = c[3] == "1";
    r.seeds = std::stoull(c[4]);
    r.mean_accuracy = std::stod(c[5]);
    r.std_accuracy = std::stod(c[6]);
    r.fullset_accuracy = parse_optional(c[7]);
    r.relative_performance = parse_optional(c[8]);
    r.gain = parse_optional(c[9]);
    return r;
  });
}

}  // namespace fewfed
