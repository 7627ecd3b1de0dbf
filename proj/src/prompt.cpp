#include "fewfed/prompt.hpp"

#include <algorithm>
#include <set>

#include "fewfed/error.hpp"
#include "fewfed/numeric.hpp"

namespace fewfed {

using nlohmann::json;

namespace {

enum class Slot { literal, a, b, mask };

struct Segment {
  Slot slot;
  std::vector<std::string> words;  // literal tokens
};

std::vector<Segment> parse_pattern(std::string_view pattern) {
  std::vector<Segment> segments;
  std::string literal;
  auto flush = [&] {
    auto words = tokenize(literal);
    if (!words.empty()) segments.push_back({Slot::literal, std::move(words)});
    literal.clear();
  };
  for (std::size_t i = 0; i < pattern.size();) {
    const auto rest = pattern.substr(i);
    if (rest.starts_with("{mask}")) {
      flush();
      segments.push_back({Slot::mask, {}});
      i += 6;
    } else if (rest.starts_with("{a}")) {
      flush();
      segments.push_back({Slot::a, {}});
      i += 3;
    } else if (rest.starts_with("{b}")) {
      flush();
      segments.push_back({Slot::b, {}});
      i += 3;
    } else {
      literal.push_back(pattern[i]);
      ++i;
    }
  }
  flush();

  const auto count = [&](Slot s) {
    return std::count_if(segments.begin(), segments.end(), [s](const Segment& g) { return g.slot == s; });
  };
  if (count(Slot::mask) != 1) throw ValidationError("pattern must contain exactly one {mask}: " + std::string(pattern));
  if (count(Slot::a) != 1) throw ValidationError("pattern must contain exactly one {a}: " + std::string(pattern));
  if (count(Slot::b) > 1) throw ValidationError("pattern may contain at most one {b}: " + std::string(pattern));
  return segments;
}

}  // namespace

std::string Pvp::preset_pattern(std::string_view name) {
  if (name == "agnews") return "{a} ( {mask} ) {b}";
  if (name == "mnli") return "\" {a} \" ? || {mask} , \" {b} \"";
  if (name == "yahoo") return "[ Category: ] {a} {mask} {b}";
  if (name == "yelp") return "It was {mask}. {a}";
  throw ConfigError("unknown pattern preset \"" + std::string(name) + "\"");
}

std::vector<std::string> Pvp::preset_names() { return {"agnews", "mnli", "yahoo", "yelp"}; }

bool Pvp::uses_b() const {
  const auto segments = parse_pattern(pattern);
  return std::any_of(segments.begin(), segments.end(), [](const Segment& s) { return s.slot == Slot::b; });
}

void Pvp::validate(const Vocab& vocab, std::size_t num_labels) const {
  parse_pattern(pattern);
  if (verbalizer.size() != num_labels)
    throw ValidationError("verbalizer covers " + std::to_string(verbalizer.size()) + " labels, expected " +
                          std::to_string(num_labels));
  std::set<std::string> seen;
  for (const std::string& word : verbalizer) {
    const auto pieces = tokenize(word);
    if (pieces.size() != 1) throw ValidationError("verbalizer must be single token: \"" + word + "\"");
    const auto id = vocab.find(pieces.front());
    if (!id || static_cast<std::size_t>(*id) < SpecialTokens::count)
      throw ValidationError("verbalizer token \"" + word + "\" is not in the vocabulary");
    if (!seen.insert(pieces.front()).second)
      throw ValidationError("verbalizer tokens must be distinct: \"" + word + "\"");
  }
}

std::vector<TokenId> Pvp::verbalizer_ids(const Vocab& vocab) const {
  std::vector<TokenId> ids;
  for (const std::string& word : verbalizer) {
    const auto pieces = tokenize(word);
    require(pieces.size() == 1, "verbalizer must be single token");
    ids.push_back(vocab.id(pieces.front()));
  }
  return ids;
}

json Pvp::to_json(const std::vector<std::string>& label_names) const {
  json map = json::object();
  for (std::size_t y = 0; y < verbalizer.size() && y < label_names.size(); ++y) map[label_names[y]] = verbalizer[y];
  return json{{"pattern", pattern}, {"verbalizer", map}};
}

Pvp Pvp::from_json(const json& j, const std::vector<std::string>& label_names) {
  Pvp pvp;
  if (j.contains("preset")) pvp.pattern = preset_pattern(j.at("preset").get<std::string>());
  if (j.contains("pattern")) pvp.pattern = j.at("pattern").get<std::string>();
  if (pvp.pattern.empty()) throw ConfigError("pvp: pattern or preset is required");
  const json map = j.value("verbalizer", json::object());
  for (const std::string& name : label_names) {
    // Without an explicit entry the label name is its own verbalizer.
    pvp.verbalizer.push_back(map.contains(name) ? map.at(name).get<std::string>() : name);
  }
  for (const auto& [key, _] : map.items())
    if (std::find(label_names.begin(), label_names.end(), key) == label_names.end())
      throw ConfigError("pvp: verbalizer names unknown label \"" + key + "\"");
  return pvp;
}

ClozeInput apply_pattern(const Pvp& pvp, const Example& example, const Vocab& vocab, std::size_t max_seq_len) {
  const auto segments = parse_pattern(pvp.pattern);
  std::vector<TokenId> field_a = vocab.encode(example.text_a);
  std::vector<TokenId> field_b;
  bool needs_b = false;
  std::size_t fixed = 0;
  for (const Segment& s : segments) {
    if (s.slot == Slot::b) needs_b = true;
    if (s.slot == Slot::literal) fixed += s.words.size();
    if (s.slot == Slot::mask) fixed += 1;
  }
  if (needs_b) {
    if (!example.text_b) throw ValidationError("pattern uses {b} but example " + std::to_string(example.id) + " has no text_b");
    field_b = vocab.encode(*example.text_b);
  }
  if (fixed > max_seq_len)
    throw CapacityError("pattern needs " + std::to_string(fixed) + " tokens, max_seq_len is " +
                        std::to_string(max_seq_len));

  std::size_t total = fixed + field_a.size() + field_b.size();
  if (total > max_seq_len) {
    std::size_t excess = total - max_seq_len;
    const std::size_t cut_b = std::min(excess, field_b.size());
    field_b.resize(field_b.size() - cut_b);
    excess -= cut_b;
    field_a.resize(field_a.size() - std::min(excess, field_a.size()));
  }

  ClozeInput out;
  for (const Segment& s : segments) {
    switch (s.slot) {
      case Slot::literal:
        for (const std::string& w : s.words) out.tokens.push_back(vocab.id(w));
        break;
      case Slot::a:
        out.tokens.insert(out.tokens.end(), field_a.begin(), field_a.end());
        break;
      case Slot::b:
        out.tokens.insert(out.tokens.end(), field_b.begin(), field_b.end());
        break;
      case Slot::mask:
        out.mask_position = out.tokens.size();
        out.tokens.push_back(SpecialTokens::mask);
        break;
    }
  }
  return out;
}

LabelDistribution restricted_distribution(std::span<const double> logits) {
  require(!logits.empty(), "restricted_distribution: no logits");
  LabelDistribution out;
  out.probs = softmax(logits);
  out.argmax = argmax(out.probs);
  out.confidence = out.probs[out.argmax];
  return out;
}

LabelDistribution score(const ModelParams& params, const Pvp& pvp, const Example& example, const Vocab& vocab,
                        std::size_t max_seq_len) {
  const ClozeInput input = apply_pattern(pvp, example, vocab, max_seq_len);
  const auto ids = pvp.verbalizer_ids(vocab);
  const auto logits = token_logits(params, input.tokens, input.mask_position, ids);
  return restricted_distribution(logits);
}

Batch prompt_batch(const Pvp& pvp, std::span<const LabeledExample> examples, const Vocab& vocab,
                   std::size_t max_seq_len) {
  Batch batch;
  for (const LabeledExample& item : examples) {
    require(item.example != nullptr, "prompt_batch: null example");
    require(item.label < pvp.verbalizer.size(), "prompt_batch: label out of range");
    const ClozeInput input = apply_pattern(pvp, *item.example, vocab, max_seq_len);
    Target target;
    target.position = input.mask_position;
    target.label = item.label;
    target.token = vocab.id(tokenize(pvp.verbalizer[item.label]).at(0));
    batch.append(input.tokens, target);
  }
  return batch;
}

Batch prompt_batch(const Pvp& pvp, std::span<const Example> examples, const Vocab& vocab, std::size_t max_seq_len) {
  std::vector<LabeledExample> labeled;
  for (const Example& ex : examples) {
    require(ex.gold_label.has_value(), "prompt_batch: example has no gold label");
    labeled.push_back({&ex, *ex.gold_label});
  }
  return prompt_batch(pvp, labeled, vocab, max_seq_len);
}

}  // namespace fewfed
