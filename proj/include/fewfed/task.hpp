#pragma once

#include <span>
#include <string>

#include "fewfed/corpus.hpp"
#include "fewfed/model.hpp"
#include "fewfed/prompt.hpp"

namespace fewfed {

/// fedprompt scores labels through the pattern-verbalizer pair; fedcls
/// trains the linear head on the [CLS] position.
enum class Mode { fedprompt, fedcls };

Mode parse_mode(const std::string& name);
std::string to_string(Mode mode);

/// [CLS] text_a text_b, truncated from the end (text_b first).
std::vector<TokenId> cls_encode(const Example& example, const Vocab& vocab, std::size_t max_seq_len);

/// Binds a mode to everything needed to turn examples into batches and
/// predictions.
class Task {
 public:
  Task(Mode mode, Pvp pvp, const Vocab& vocab, std::size_t max_seq_len);

  Mode mode() const noexcept { return mode_; }
  const Pvp& pvp() const noexcept { return pvp_; }
  const Vocab& vocab() const noexcept { return *vocab_; }
  std::size_t max_seq_len() const noexcept { return max_seq_len_; }

  const Objective& objective() const noexcept { return objective_; }
  Batch make_batch(std::span<const LabeledExample> examples) const;
  LabelDistribution predict(const ModelParams& params, const Example& example) const;

 private:
  Mode mode_;
  Pvp pvp_;
  const Vocab* vocab_;
  std::size_t max_seq_len_;
  std::vector<TokenId> verbalizer_ids_;
  Objective objective_;
};

}  // namespace fewfed
