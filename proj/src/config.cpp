#include "fewfed/config.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "fewfed/error.hpp"

namespace fewfed {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (std::string_view a : allowed) known = known || key == a;
    if (!known) throw ConfigError(std::string(where) + ": unknown key \"" + key + "\"");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

json synth_to_json(const SynthSpec& s) {
  return {{"num_classes", s.num_classes},
          {"examples_per_class", s.examples_per_class},
          {"keywords_per_class", s.keywords_per_class},
          {"noise_word_count", s.noise_word_count},
          {"pair_mode", s.pair_mode},
          {"seed", s.seed}};
}

SynthSpec synth_from_json(const json& j) {
  check_keys(j, "data.synth",
             {"num_classes", "examples_per_class", "keywords_per_class", "noise_word_count", "pair_mode", "seed"});
  SynthSpec s;
  read(j, "num_classes", s.num_classes, "data.synth");
  read(j, "examples_per_class", s.examples_per_class, "data.synth");
  read(j, "keywords_per_class", s.keywords_per_class, "data.synth");
  read(j, "noise_word_count", s.noise_word_count, "data.synth");
  read(j, "pair_mode", s.pair_mode, "data.synth");
  read(j, "seed", s.seed, "data.synth");
  return s;
}

}  // namespace

json RunConfig::to_json() const {
  json data_j{{"synth", synth_to_json(data.synth)},
              {"test_fraction", data.test_fraction},
              {"validation_fraction", data.validation_fraction},
              {"split_seed", data.split_seed}};
  if (data.path) {
    data_j["path"] = *data.path;
    data_j["label_names"] = data.label_names;
  }
  json pretrain_j{{"corpus_sentences", pretrain.corpus_sentences},
                  {"seen_fraction", pretrain.seen_fraction},
                  {"steps", pretrain.options.steps},
                  {"batch_size", pretrain.options.batch_size},
                  {"learning_rate", pretrain.options.learning_rate},
                  {"seed", pretrain.options.seed}};
  if (pretrain.checkpoint) pretrain_j["checkpoint"] = *pretrain.checkpoint;
  if (pretrain.corpus) pretrain_j["corpus"] = *pretrain.corpus;
  json model_j{{"d_model", model.d_model},
               {"num_layers", model.num_layers},
               {"num_heads", model.num_heads},
               {"d_ffn", model.d_ffn},
               {"max_seq_len", model.max_seq_len}};
  return json{{"name", name},
              {"data", data_j},
              {"pretrain", pretrain_j},
              {"model", model_j},
              {"pvp", pvp},
              {"mode", fewfed::to_string(mode)},
              {"participants_per_round", round.participants_per_round},
              {"local_iterations", round.local_iterations},
              {"batch_size", round.batch_size},
              {"learning_rate", round.learning_rate},
              {"optimizer", fewfed::to_string(round.optimizer)},
              {"max_rounds", round.max_rounds},
              {"patience", round.convergence_patience},
              {"record_wall_time", round.record_wall_time},
              {"augmentation",
               {{"enabled", round.augmentation_enabled},
                {"threshold", augment.confidence_threshold},
                {"budget", augment.per_client_budget},
                {"cumulative", augment.cumulative},
                {"capacity_check", augment.capacity_check},
                {"full_scan", augment.full_scan}}},
              {"partition",
               {{"num_clients", partition.num_clients},
                {"n_labeled", partition.n_labeled},
                {"gamma", partition.gamma},
                {"xi", partition.xi},
                {"alpha", partition.alpha},
                {"random_xi", partition.random_xi}}},
              {"seeds", seeds}};
}

RunConfig RunConfig::from_json(const json& j) {
  check_keys(j, "config",
             {"name", "data", "pretrain", "model", "pvp", "mode", "participants_per_round", "local_iterations",
              "batch_size", "learning_rate", "optimizer", "max_rounds", "patience", "record_wall_time",
              "augmentation", "partition", "seeds", "grid"});
  RunConfig c;
  read(j, "name", c.name, "config");

  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, "data", {"path", "label_names", "synth", "test_fraction", "validation_fraction", "split_seed"});
    if (d.contains("path")) c.data.path = d.at("path").get<std::string>();
    read(d, "label_names", c.data.label_names, "data");
    if (d.contains("synth")) c.data.synth = synth_from_json(d.at("synth"));
    read(d, "test_fraction", c.data.test_fraction, "data");
    read(d, "validation_fraction", c.data.validation_fraction, "data");
    read(d, "split_seed", c.data.split_seed, "data");
  }

  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    check_keys(p, "pretrain",
               {"checkpoint", "corpus", "corpus_sentences", "seen_fraction", "steps", "batch_size", "learning_rate",
                "seed"});
    if (p.contains("checkpoint")) c.pretrain.checkpoint = p.at("checkpoint").get<std::string>();
    if (p.contains("corpus")) c.pretrain.corpus = p.at("corpus").get<std::string>();
    read(p, "corpus_sentences", c.pretrain.corpus_sentences, "pretrain");
    read(p, "seen_fraction", c.pretrain.seen_fraction, "pretrain");
    read(p, "steps", c.pretrain.options.steps, "pretrain");
    read(p, "batch_size", c.pretrain.options.batch_size, "pretrain");
    read(p, "learning_rate", c.pretrain.options.learning_rate, "pretrain");
    read(p, "seed", c.pretrain.options.seed, "pretrain");
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model", {"d_model", "num_layers", "num_heads", "d_ffn", "max_seq_len"});
    read(m, "d_model", c.model.d_model, "model");
    read(m, "num_layers", c.model.num_layers, "model");
    read(m, "num_heads", c.model.num_heads, "model");
    read(m, "d_ffn", c.model.d_ffn, "model");
    read(m, "max_seq_len", c.model.max_seq_len, "model");
  }

  if (j.contains("pvp")) {
    c.pvp = j.at("pvp");
    check_keys(c.pvp, "pvp", {"preset", "pattern", "verbalizer"});
  }

  try {
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    if (j.contains("optimizer")) c.round.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  read(j, "participants_per_round", c.round.participants_per_round, "config");
  read(j, "local_iterations", c.round.local_iterations, "config");
  read(j, "batch_size", c.round.batch_size, "config");
  read(j, "learning_rate", c.round.learning_rate, "config");
  read(j, "max_rounds", c.round.max_rounds, "config");
  read(j, "patience", c.round.convergence_patience, "config");
  read(j, "record_wall_time", c.round.record_wall_time, "config");

  if (j.contains("augmentation")) {
    const json& a = j.at("augmentation");
    check_keys(a, "augmentation", {"enabled", "threshold", "budget", "cumulative", "capacity_check", "full_scan"});
    read(a, "enabled", c.round.augmentation_enabled, "augmentation");
    read(a, "threshold", c.augment.confidence_threshold, "augmentation");
    read(a, "budget", c.augment.per_client_budget, "augmentation");
    read(a, "cumulative", c.augment.cumulative, "augmentation");
    read(a, "capacity_check", c.augment.capacity_check, "augmentation");
    read(a, "full_scan", c.augment.full_scan, "augmentation");
  }

  if (j.contains("partition")) {
    const json& p = j.at("partition");
    check_keys(p, "partition", {"num_clients", "n_labeled", "gamma", "xi", "alpha", "random_xi"});
    read(p, "num_clients", c.partition.num_clients, "partition");
    read(p, "n_labeled", c.partition.n_labeled, "partition");
    read(p, "gamma", c.partition.gamma, "partition");
    read(p, "xi", c.partition.xi, "partition");
    read(p, "alpha", c.partition.alpha, "partition");
    read(p, "random_xi", c.partition.random_xi, "partition");
  }
  read(j, "seeds", c.seeds, "config");
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (data.path && data.label_names.empty()) throw ConfigError("data: label_names is required with path");
  if (!data.path) data.synth.validate();
  if (!(data.test_fraction > 0.0) || !(data.validation_fraction >= 0.0) ||
      data.test_fraction + data.validation_fraction >= 1.0)
    throw ConfigError("data: need test_fraction > 0, validation_fraction >= 0 and their sum < 1");
  if (!pretrain.checkpoint && pretrain.options.batch_size < 1) throw ConfigError("pretrain: batch_size must be >= 1");
  if (!(pretrain.seen_fraction > 0.0 && pretrain.seen_fraction <= 1.0))
    throw ConfigError("pretrain: seen_fraction must be in (0, 1]");
  ModelConfig m = model;
  m.vocab_size = std::max<std::size_t>(m.vocab_size, SpecialTokens::count + 1);
  m.num_labels = std::max<std::size_t>(m.num_labels, 2);
  m.validate();
  round.validate();
  augment.validate();
  partition.validate();
  if (round.augmentation_enabled && augment.capacity_check && !(data.validation_fraction > 0.0))
    throw ConfigError("augmentation: the capacity check needs validation_fraction > 0");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  std::set<std::uint64_t> distinct(seeds.begin(), seeds.end());
  if (distinct.size() != seeds.size()) throw ConfigError("seeds must be distinct");
}

json SweepGrid::to_json() const {
  json modes_j = json::array();
  for (Mode m : modes) modes_j.push_back(fewfed::to_string(m));
  return json{{"n_labeled", n_labeled},
              {"gamma", gamma},
              {"mode", modes_j},
              {"augmentation", augmentation},
              {"fullset", fullset}};
}

SweepGrid SweepGrid::from_json(const json& j, const RunConfig& base) {
  SweepGrid g;
  g.n_labeled = {base.partition.n_labeled};
  g.gamma = {base.partition.gamma};
  g.modes = {base.mode};
  g.augmentation = {base.round.augmentation_enabled};
  if (j.is_null()) return g;
  check_keys(j, "grid", {"n_labeled", "gamma", "mode", "augmentation", "fullset"});
  read(j, "n_labeled", g.n_labeled, "grid");
  read(j, "gamma", g.gamma, "grid");
  read(j, "augmentation", g.augmentation, "grid");
  read(j, "fullset", g.fullset, "grid");
  if (j.contains("mode")) {
    g.modes.clear();
    for (const json& m : j.at("mode")) g.modes.push_back(parse_mode(m.get<std::string>()));
  }
  if (g.n_labeled.empty() || g.gamma.empty() || g.modes.empty() || g.augmentation.empty())
    throw ConfigError("grid: every axis needs at least one value");
  return g;
}

std::string config_digest(const json& resolved) {
  const std::string text = resolved.dump();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &length, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < length; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const json& value, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << value.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace fewfed
