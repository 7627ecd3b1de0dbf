#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fewfed/augmentor.hpp"
#include "fewfed/corpus.hpp"
#include "fewfed/federation.hpp"
#include "fewfed/model.hpp"
#include "fewfed/partitioner.hpp"
#include "fewfed/task.hpp"
#include "json.hpp"

namespace fewfed {

/// Either a JSONL file with named labels or a synthetic task.
struct DataConfig {
  std::optional<std::string> path;
  std::vector<std::string> label_names;  // required with `path`
  SynthSpec synth;
  double test_fraction = 0.2;
  double validation_fraction = 0.1;
  std::uint64_t split_seed = 1;
};

/// A checkpoint to start from, or the settings for pretraining one inline.
struct PretrainConfig {
  std::optional<std::string> checkpoint;
  std::optional<std::string> corpus;  // JSONL; defaults to the synthetic pretraining corpus
  std::size_t corpus_sentences = 4000;
  double seen_fraction = 0.67;
  PretrainOptions options{.steps = 8000, .batch_size = 16, .learning_rate = 1e-3, .seed = 1};
};

struct RunConfig {
  std::string name = "run";
  DataConfig data;
  PretrainConfig pretrain;
  // vocab_size and num_labels are filled in from the data
  ModelConfig model{.vocab_size = 0, .num_labels = 0, .d_model = 32, .num_layers = 2, .num_heads = 4, .d_ffn = 64,
                    .max_seq_len = 24};
  nlohmann::json pvp = nlohmann::json{{"preset", "yelp"}};
  Mode mode = Mode::fedprompt;
  RoundConfig round{.learning_rate = 7.5e-3, .max_rounds = 60};
  AugmentConfig augment;
  PartitionSpec partition;  // seed is taken from `seeds`
  std::vector<std::uint64_t> seeds{1, 2, 3};

  /// Every key with its value, defaults included.
  nlohmann::json to_json() const;
  /// Missing keys take defaults; unknown keys are rejected.
  static RunConfig from_json(const nlohmann::json& j);
  void validate() const;
};

/// The cross product a sweep runs; each list defaults to the base value.
struct SweepGrid {
  std::vector<std::size_t> n_labeled;
  std::vector<double> gamma;
  std::vector<Mode> modes;
  std::vector<bool> augmentation;
  bool fullset = false;

  nlohmann::json to_json() const;
  static SweepGrid from_json(const nlohmann::json& j, const RunConfig& base);
};

/// Hex SHA-256 of the compact JSON dump.
std::string config_digest(const nlohmann::json& resolved);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const nlohmann::json& value, const std::filesystem::path& path);

}  // namespace fewfed
