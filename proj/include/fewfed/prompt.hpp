#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fewfed/corpus.hpp"
#include "fewfed/model.hpp"
#include "json.hpp"

namespace fewfed {

/// Pattern-verbalizer pair. The pattern is literal text with one "{mask}",
/// one "{a}" and at most one "{b}"; verbalizer[y] is the single token that
/// stands for label y.
struct Pvp {
  std::string pattern;
  std::vector<std::string> verbalizer;

  /// Named patterns: "agnews", "mnli", "yahoo", "yelp".
  static std::string preset_pattern(std::string_view name);
  static std::vector<std::string> preset_names();

  /// Throws ValidationError unless the pattern is well formed and the
  /// verbalizer covers `num_labels` labels with distinct in-vocabulary tokens.
  void validate(const Vocab& vocab, std::size_t num_labels) const;
  std::vector<TokenId> verbalizer_ids(const Vocab& vocab) const;
  bool uses_b() const;

  /// {"pattern": str, "verbalizer": {label_name: token}}
  nlohmann::json to_json(const std::vector<std::string>& label_names) const;
  static Pvp from_json(const nlohmann::json& j, const std::vector<std::string>& label_names);
};

struct ClozeInput {
  std::vector<TokenId> tokens;
  std::size_t mask_position = 0;
};

/// Builds P(x). Over-long inputs lose field tokens from the end, text_b
/// first; pattern literals and the mask are never cut.
ClozeInput apply_pattern(const Pvp& pvp, const Example& example, const Vocab& vocab, std::size_t max_seq_len);

struct LabelDistribution {
  std::vector<double> probs;
  LabelId argmax = 0;
  double confidence = 0.0;
};

/// Softmax over the verbalizer logits.
LabelDistribution restricted_distribution(std::span<const double> logits);

LabelDistribution score(const ModelParams& params, const Pvp& pvp, const Example& example, const Vocab& vocab,
                        std::size_t max_seq_len);

/// An example paired with the label to train on (gold or pseudo).
struct LabeledExample {
  const Example* example = nullptr;
  LabelId label = 0;
};

Batch prompt_batch(const Pvp& pvp, std::span<const LabeledExample> examples, const Vocab& vocab,
                   std::size_t max_seq_len);
/// Gold-label variant; every example must carry a gold label.
Batch prompt_batch(const Pvp& pvp, std::span<const Example> examples, const Vocab& vocab,
                   std::size_t max_seq_len);

}  // namespace fewfed
