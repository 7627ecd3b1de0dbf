#include "fewfed/task.hpp"

#include "fewfed/error.hpp"

namespace fewfed {

Mode parse_mode(const std::string& name) {
  if (name == "fedprompt") return Mode::fedprompt;
  if (name == "fedcls") return Mode::fedcls;
  throw ConfigError("unknown mode \"" + name + "\" (expected fedprompt or fedcls)");
}

std::string to_string(Mode mode) { return mode == Mode::fedprompt ? "fedprompt" : "fedcls"; }

std::vector<TokenId> cls_encode(const Example& example, const Vocab& vocab, std::size_t max_seq_len) {
  require(max_seq_len >= 1, "cls_encode: max_seq_len >= 1");
  auto a = vocab.encode(example.text_a);
  std::vector<TokenId> b;
  if (example.text_b) b = vocab.encode(*example.text_b);
  std::size_t budget = max_seq_len - 1;
  if (a.size() + b.size() > budget) {
    std::size_t excess = a.size() + b.size() - budget;
    const std::size_t cut_b = std::min(excess, b.size());
    b.resize(b.size() - cut_b);
    excess -= cut_b;
    a.resize(a.size() - std::min(excess, a.size()));
  }
  std::vector<TokenId> out{SpecialTokens::cls};
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

Task::Task(Mode mode, Pvp pvp, const Vocab& vocab, std::size_t max_seq_len)
    : mode_(mode), pvp_(std::move(pvp)), vocab_(&vocab), max_seq_len_(max_seq_len) {
  if (mode_ == Mode::fedprompt) {
    verbalizer_ids_ = pvp_.verbalizer_ids(vocab);
    objective_ = PromptObjective{verbalizer_ids_};
  } else {
    objective_ = ClsObjective{};
  }
}

Batch Task::make_batch(std::span<const LabeledExample> examples) const {
  if (mode_ == Mode::fedprompt) return prompt_batch(pvp_, examples, *vocab_, max_seq_len_);
  Batch batch;
  for (const LabeledExample& item : examples) {
    Target target;
    target.label = item.label;
    batch.append(cls_encode(*item.example, *vocab_, max_seq_len_), target);
  }
  return batch;
}

LabelDistribution Task::predict(const ModelParams& params, const Example& example) const {
  if (mode_ == Mode::fedprompt) {
    const ClozeInput input = apply_pattern(pvp_, example, *vocab_, max_seq_len_);
    return restricted_distribution(token_logits(params, input.tokens, input.mask_position, verbalizer_ids_));
  }
  return restricted_distribution(cls_logits(params, cls_encode(example, *vocab_, max_seq_len_)));
}

}  // namespace fewfed
