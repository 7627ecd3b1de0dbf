#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace fewfed {

using LabelId = std::size_t;
using TokenId = std::int32_t;

enum class SplitKind { train, test, validation };
enum class Provenance { file, synthetic };

struct Example {
  std::size_t id = 0;
  std::string text_a;
  std::optional<std::string> text_b;
  std::optional<LabelId> gold_label;
  SplitKind split = SplitKind::train;
};

struct Dataset {
  std::vector<Example> examples;
  std::vector<std::string> label_names;
  Provenance provenance = Provenance::file;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
  std::size_t num_classes() const noexcept { return label_names.size(); }
  const Example& operator[](std::size_t id) const { return examples.at(id); }

  /// Throws ValidationError if any Example/Dataset invariant is broken.
  void validate() const;
};

/// Desk-scale stand-in for the news/topic corpora: each class owns a disjoint
/// keyword set, examples mix own keywords with shared noise words.
struct SynthSpec {
  std::size_t num_classes = 4;
  std::size_t examples_per_class = 800;
  std::size_t keywords_per_class = 6;
  std::size_t noise_word_count = 60;
  bool pair_mode = false;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Special tokens take the first four ids.
struct SpecialTokens {
  static constexpr TokenId mask = 0;
  static constexpr TokenId pad = 1;
  static constexpr TokenId unk = 2;
  static constexpr TokenId cls = 3;
  static constexpr std::size_t count = 4;
};

class Vocab {
 public:
  Vocab();
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  /// Unknown strings map to the unk id.
  TokenId id(std::string_view token) const;
  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  bool add(const std::string& token);

  std::vector<TokenId> encode(std::string_view text) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Lowercase, whitespace-split, each ASCII punctuation character its own token.
std::vector<std::string> tokenize(std::string_view text);

Dataset load_jsonl(const std::filesystem::path& path, const std::vector<std::string>& label_names);
void write_jsonl(const Dataset& dataset, const std::filesystem::path& path);

/// {"provenance", "label_names", "counts": {"total", "unlabeled", <label>: n}}
nlohmann::json dataset_manifest(const Dataset& dataset);

Dataset synth_generate(const SynthSpec& spec);

/// MLM pretraining corpus. Even sentences pair a class's label word with the
/// first `seen_fraction` of its keywords; odd ones hold random keywords and
/// no label word. The pairing is what gives prompting above-chance zero-shot
/// accuracy.
Dataset synth_pretraining_corpus(const SynthSpec& spec, std::size_t sentences,
                                 double seen_fraction = 0.5);

/// Class keyword lists in the order synth_generate uses them.
std::vector<std::vector<std::string>> synth_keywords(const SynthSpec& spec);

Vocab build_vocab(const Dataset& dataset, const std::vector<std::string>& verbalizer_tokens);
Vocab build_vocab(const std::vector<const Dataset*>& corpora,
                  const std::vector<std::string>& verbalizer_tokens);

struct DatasetSplit {
  Dataset train;
  Dataset test;
  Dataset validation;
  // ids of the source examples that landed in each part, ascending
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> test_ids;
  std::vector<std::size_t> validation_ids;
};

/// Stratified split. Unlabeled examples always go to train.
DatasetSplit split(const Dataset& dataset, double test_fraction, double validation_fraction,
                   std::uint64_t seed);

}  // namespace fewfed
