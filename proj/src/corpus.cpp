#include "fewfed/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "fewfed/error.hpp"
#include "fewfed/numeric.hpp"
#include "fewfed/rng.hpp"

namespace fewfed {

using nlohmann::json;

void Dataset::validate() const {
  if (label_names.empty()) throw ValidationError("dataset has no label names");
  std::unordered_set<std::string> seen(label_names.begin(), label_names.end());
  if (seen.size() != label_names.size()) throw ValidationError("duplicate label names");
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Example& ex = examples[i];
    if (ex.id != i) throw ValidationError("example ids must be 0..n-1 in order");
    if (ex.text_a.empty()) throw ValidationError("example " + std::to_string(i) + " has empty text_a");
    if (ex.gold_label && *ex.gold_label >= label_names.size())
      throw ValidationError("example " + std::to_string(i) + " label out of range");
  }
}

void SynthSpec::validate() const {
  if (num_classes < 2) throw ValidationError("synth: num_classes must be >= 2");
  if (examples_per_class < 1 || keywords_per_class < 1 || noise_word_count < 1)
    throw ValidationError("synth: counts must be >= 1");
}

// ---------------------------------------------------------------------------
// Tokenization and vocabulary

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      tokens.emplace_back(1, raw);
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : raw);
    }
  }
  flush();
  return tokens;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> tokens) {
  for (const char* special : {"[MASK]", "[PAD]", "[UNK]", "[CLS]"}) add(special);
  const std::size_t first = (tokens.size() >= SpecialTokens::count && tokens[0] == "[MASK]")
                                ? SpecialTokens::count
                                : 0;
  for (std::size_t i = first; i < tokens.size(); ++i) add(tokens[i]);
}

bool Vocab::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, static_cast<TokenId>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return inserted;
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(std::string_view token) const {
  return find(token).value_or(SpecialTokens::unk);
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const std::string& token : tokenize(text)) ids.push_back(id(token));
  return ids;
}

Vocab build_vocab(const std::vector<const Dataset*>& corpora,
                  const std::vector<std::string>& verbalizer_tokens) {
  bool any = false;
  for (const Dataset* corpus : corpora) any = any || !corpus->empty();
  if (!any) throw ValidationError("build_vocab: dataset is empty");

  std::vector<std::string> verbalizer_pieces;
  for (const std::string& word : verbalizer_tokens) {
    auto pieces = tokenize(word);
    if (pieces.size() != 1)
      throw ValidationError("verbalizer must be single token: \"" + word + "\"");
    verbalizer_pieces.push_back(std::move(pieces.front()));
  }

  Vocab vocab;
  for (const Dataset* corpus : corpora) {
    for (const Example& ex : corpus->examples) {
      for (const std::string& t : tokenize(ex.text_a)) vocab.add(t);
      if (ex.text_b)
        for (const std::string& t : tokenize(*ex.text_b)) vocab.add(t);
    }
  }
  for (const std::string& piece : verbalizer_pieces) vocab.add(piece);
  return vocab;
}

Vocab build_vocab(const Dataset& dataset, const std::vector<std::string>& verbalizer_tokens) {
  return build_vocab(std::vector<const Dataset*>{&dataset}, verbalizer_tokens);
}

// ---------------------------------------------------------------------------
// JSONL

Dataset load_jsonl(const std::filesystem::path& path, const std::vector<std::string>& label_names) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path.string());

  std::map<std::string, LabelId, std::less<>> label_index;
  for (std::size_t i = 0; i < label_names.size(); ++i) label_index.emplace(label_names[i], i);

  Dataset dataset;
  dataset.label_names = label_names;
  dataset.provenance = Provenance::file;

  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }))
      continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_number);
    }
    if (!record.is_object() || !record.contains("text_a") || !record["text_a"].is_string())
      throw ParseError("expected an object with string field text_a", line_number);

    Example ex;
    ex.id = dataset.examples.size();
    ex.text_a = record["text_a"].get<std::string>();
    if (ex.text_a.empty()) throw ParseError("text_a is empty", line_number);
    if (record.contains("text_b") && !record["text_b"].is_null()) {
      if (!record["text_b"].is_string()) throw ParseError("text_b must be a string", line_number);
      ex.text_b = record["text_b"].get<std::string>();
    }
    if (record.contains("label") && !record["label"].is_null()) {
      if (!record["label"].is_string()) throw ParseError("label must be a string", line_number);
      const auto name = record["label"].get<std::string>();
      auto it = label_index.find(name);
      if (it == label_index.end())
        throw ValidationError("line " + std::to_string(line_number) + ": unknown label \"" + name +
                              "\"");
      ex.gold_label = it->second;
    }
    dataset.examples.push_back(std::move(ex));
  }
  return dataset;
}

void write_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const Example& ex : dataset.examples) {
    json record;
    record["text_a"] = ex.text_a;
    if (ex.text_b) record["text_b"] = *ex.text_b;
    if (ex.gold_label) record["label"] = dataset.label_names.at(*ex.gold_label);
    out << record.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

json dataset_manifest(const Dataset& dataset) {
  json counts = json::object();
  std::vector<std::size_t> per_label(dataset.num_classes(), 0);
  std::size_t unlabeled = 0;
  for (const Example& ex : dataset.examples) {
    if (ex.gold_label)
      ++per_label.at(*ex.gold_label);
    else
      ++unlabeled;
  }
  counts["total"] = dataset.size();
  counts["unlabeled"] = unlabeled;
  json by_label = json::object();
  for (std::size_t c = 0; c < per_label.size(); ++c) by_label[dataset.label_names[c]] = per_label[c];
  counts["per_label"] = by_label;
  return json{{"provenance", dataset.provenance == Provenance::file ? "file" : "synthetic"},
              {"label_names", dataset.label_names},
              {"counts", counts}};
}

// ---------------------------------------------------------------------------
// Synthetic task

namespace {

// Function words and punctuation of the kind any pretraining text is full
// of. Pattern literals are drawn from the same pool, so they reach the model
// with trained embeddings.
constexpr std::string_view kFillerWords[] = {"it", "was", "is", "the", "a", "of", "category", ".", ",",
                                             "?", ":", "(", ")", "[", "]", "\"", "|"};

constexpr std::string_view kLabelWords[] = {"world",  "sports", "business", "science", "health",
                                            "music",  "travel", "food",     "politics", "family"};

struct Lexicon {
  std::vector<std::string> label_words;
  std::vector<std::vector<std::string>> keywords;
  std::vector<std::string> noise;
};

std::string make_word(Rng& rng) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  const std::size_t syllables = 2 + uniform_index(rng, 2);
  std::string word;
  for (std::size_t s = 0; s < syllables; ++s) {
    word.push_back(consonants[uniform_index(rng, consonants.size())]);
    word.push_back(vowels[uniform_index(rng, vowels.size())]);
  }
  return word;
}

Lexicon make_lexicon(const SynthSpec& spec) {
  Rng rng = make_rng(spec.seed, {0x1e71c0});
  Lexicon lex;
  std::set<std::string> used;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    std::string word = c < std::size(kLabelWords) ? std::string(kLabelWords[c]) : std::string();
    while (word.empty() || used.count(word)) word = make_word(rng);
    used.insert(word);
    lex.label_words.push_back(word);
  }
  auto fresh = [&] {
    std::string word;
    do {
      word = make_word(rng);
    } while (used.count(word));
    used.insert(word);
    return word;
  };
  lex.keywords.resize(spec.num_classes);
  for (auto& words : lex.keywords)
    for (std::size_t k = 0; k < spec.keywords_per_class; ++k) words.push_back(fresh());
  for (std::size_t k = 0; k < spec.noise_word_count; ++k) lex.noise.push_back(fresh());
  return lex;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const std::string& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace

std::vector<std::vector<std::string>> synth_keywords(const SynthSpec& spec) {
  spec.validate();
  return make_lexicon(spec).keywords;
}

Dataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  const Lexicon lex = make_lexicon(spec);
  Rng rng = make_rng(spec.seed, {0x5e7});

  Dataset dataset;
  dataset.label_names = lex.label_words;
  dataset.provenance = Provenance::synthetic;
  dataset.examples.reserve(spec.num_classes * spec.examples_per_class);

  const std::size_t k = spec.keywords_per_class;
  for (std::size_t i = 0; i < spec.examples_per_class; ++i) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      // One or two own keywords; with two, sometimes a keyword from another
      // class as a distractor. Own keywords always outnumber distractors.
      const std::size_t own_count = std::min<std::size_t>(k, 1 + uniform_index(rng, 2));
      std::vector<std::size_t> all(k);
      std::iota(all.begin(), all.end(), std::size_t{0});
      std::vector<std::string> keywords;
      for (std::size_t pick : sample_without_replacement<std::size_t>(all, own_count, rng))
        keywords.push_back(lex.keywords[c][pick]);
      if (own_count == 2 && uniform_real(rng) < 0.3) {
        std::size_t other = uniform_index(rng, spec.num_classes - 1);
        if (other >= c) ++other;
        keywords.push_back(lex.keywords[other][uniform_index(rng, k)]);
      }
      const std::size_t noise_count = 4 + uniform_index(rng, 6);
      std::vector<std::string> noise;
      for (std::size_t n = 0; n < noise_count; ++n)
        noise.push_back(lex.noise[uniform_index(rng, lex.noise.size())]);

      Example ex;
      ex.id = dataset.examples.size();
      ex.gold_label = c;
      if (spec.pair_mode) {
        // Headline gets the first keyword and a little noise, body the rest.
        std::vector<std::string> head{keywords.front()};
        const std::size_t head_noise = std::min<std::size_t>(2, noise.size());
        head.insert(head.end(), noise.begin(), noise.begin() + static_cast<std::ptrdiff_t>(head_noise));
        std::vector<std::string> body(keywords.begin() + 1, keywords.end());
        body.insert(body.end(), noise.begin() + static_cast<std::ptrdiff_t>(head_noise), noise.end());
        shuffle_in_place<std::string>(head, rng);
        shuffle_in_place<std::string>(body, rng);
        ex.text_a = join(head);
        ex.text_b = join(body);
      } else {
        std::vector<std::string> words = keywords;
        words.insert(words.end(), noise.begin(), noise.end());
        shuffle_in_place<std::string>(words, rng);
        ex.text_a = join(words);
      }
      dataset.examples.push_back(std::move(ex));
    }
  }
  return dataset;
}

Dataset synth_pretraining_corpus(const SynthSpec& spec, std::size_t sentences,
                                 double seen_fraction) {
  spec.validate();
  if (!(seen_fraction > 0.0 && seen_fraction <= 1.0))
    throw ValidationError("seen_fraction must be in (0, 1]");
  const Lexicon lex = make_lexicon(spec);
  Rng rng = make_rng(spec.seed, {0x9e7a});
  const std::size_t seen = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(seen_fraction * static_cast<double>(spec.keywords_per_class))));

  Dataset corpus;
  corpus.label_names = lex.label_words;
  corpus.provenance = Provenance::synthetic;
  std::vector<std::size_t> seen_ids(seen);
  std::iota(seen_ids.begin(), seen_ids.end(), std::size_t{0});
  for (std::size_t s = 0; s < sentences; ++s) {
    const std::size_t c = (s / 2) % spec.num_classes;
    std::vector<std::string> words;
    if (s % 2 == 0) {
      words.push_back(lex.label_words[c]);
      const std::size_t keyword_count = std::min<std::size_t>(seen, 1 + uniform_index(rng, 2));
      for (std::size_t pick : sample_without_replacement<std::size_t>(seen_ids, keyword_count, rng))
        words.push_back(lex.keywords[c][pick]);
    } else {
      // Background sentence: any keyword, no label word. Every token gets a
      // trained embedding without tying the unseen keywords to a label.
      const std::size_t keyword_count = 1 + uniform_index(rng, 2);
      for (std::size_t k = 0; k < keyword_count; ++k)
        words.push_back(lex.keywords[uniform_index(rng, spec.num_classes)][uniform_index(rng, spec.keywords_per_class)]);
    }
    const std::size_t noise_count = 4 + uniform_index(rng, 6);
    for (std::size_t n = 0; n < noise_count; ++n)
      words.push_back(lex.noise[uniform_index(rng, lex.noise.size())]);
    const std::size_t filler_count = 1 + uniform_index(rng, 3);
    for (std::size_t n = 0; n < filler_count; ++n)
      words.emplace_back(kFillerWords[uniform_index(rng, std::size(kFillerWords))]);
    shuffle_in_place<std::string>(words, rng);
    Example ex;
    ex.id = s;
    ex.text_a = join(words);
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Splits

DatasetSplit split(const Dataset& dataset, double test_fraction, double validation_fraction,
                   std::uint64_t seed) {
  if (test_fraction < 0.0 || validation_fraction < 0.0 || test_fraction + validation_fraction >= 1.0)
    throw ValidationError("split fractions must be >= 0 and sum to < 1");

  const std::size_t classes = dataset.num_classes();
  std::vector<std::vector<std::size_t>> by_class(classes);
  std::vector<std::size_t> unlabeled;
  std::size_t labeled_total = 0;
  for (const Example& ex : dataset.examples) {
    if (ex.gold_label) {
      by_class.at(*ex.gold_label).push_back(ex.id);
      ++labeled_total;
    } else {
      unlabeled.push_back(ex.id);
    }
  }

  const auto total_for = [&](double fraction) {
    return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(labeled_total)));
  };
  const std::size_t test_total = total_for(test_fraction);
  const std::size_t val_total = total_for(validation_fraction);
  const std::size_t nonempty_splits = 1 + (test_total > 0) + (val_total > 0);

  std::vector<double> class_sizes(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    class_sizes[c] = static_cast<double>(by_class[c].size());
    if (!by_class[c].empty() && by_class[c].size() < nonempty_splits)
      throw ValidationError("class \"" + dataset.label_names[c] + "\" has " +
                            std::to_string(by_class[c].size()) + " examples, too few to split");
  }
  const auto test_counts = largest_remainder(class_sizes, test_total);
  const auto val_counts = largest_remainder(class_sizes, val_total);

  Rng rng = make_rng(seed, {0x5b117});
  DatasetSplit out;
  for (std::size_t c = 0; c < classes; ++c) {
    auto& ids = by_class[c];
    if (test_counts[c] + val_counts[c] > ids.size())
      throw ValidationError("class \"" + dataset.label_names[c] + "\" too small for the split");
    shuffle_in_place<std::size_t>(ids, rng);
    auto it = ids.begin();
    out.test_ids.insert(out.test_ids.end(), it, it + static_cast<std::ptrdiff_t>(test_counts[c]));
    it += static_cast<std::ptrdiff_t>(test_counts[c]);
    out.validation_ids.insert(out.validation_ids.end(), it, it + static_cast<std::ptrdiff_t>(val_counts[c]));
    it += static_cast<std::ptrdiff_t>(val_counts[c]);
    out.train_ids.insert(out.train_ids.end(), it, ids.end());
  }
  out.train_ids.insert(out.train_ids.end(), unlabeled.begin(), unlabeled.end());

  const auto materialize = [&](std::vector<std::size_t>& ids, Dataset& part, SplitKind kind) {
    std::sort(ids.begin(), ids.end());
    part.label_names = dataset.label_names;
    part.provenance = dataset.provenance;
    part.examples.reserve(ids.size());
    for (std::size_t source : ids) {
      Example ex = dataset.examples.at(source);
      ex.id = part.examples.size();
      ex.split = kind;
      part.examples.push_back(std::move(ex));
    }
  };
  materialize(out.train_ids, out.train, SplitKind::train);
  materialize(out.test_ids, out.test, SplitKind::test);
  materialize(out.validation_ids, out.validation, SplitKind::validation);
  return out;
}

}  // namespace fewfed
