#pragma once

// Small fixtures shared by the unit tests.

#include <filesystem>
#include <string>

#include "fewfed/corpus.hpp"
#include "fewfed/model.hpp"
#include "fewfed/prompt.hpp"
#include "fewfed/task.hpp"
#include "fewfed/rng.hpp"

namespace fewfed::testing {

/// A fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fewfed_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Dataset tiny_dataset() {
  Dataset d;
  d.label_names = {"good", "bad"};
  const char* texts[] = {"great food here", "awful service", "lovely place", "terrible wait",
                         "nice staff", "rude people"};
  for (std::size_t i = 0; i < 6; ++i) {
    Example ex;
    ex.id = i;
    ex.text_a = texts[i];
    ex.gold_label = i % 2;
    d.examples.push_back(ex);
  }
  return d;
}

/// A small synthetic task with a randomly initialised model. Not copyable:
/// the tasks point at the vocab.
struct World {
  Dataset data;
  Vocab vocab;
  Pvp pvp;
  ModelParams params;
  Task prompt;
  Task cls;

  explicit World(std::size_t per_class = 10, std::uint64_t seed = 1)
      : data(make_data(per_class)),
        vocab(build_vocab(data, data.label_names)),
        pvp(Pvp::from_json({{"preset", "yelp"}}, data.label_names)),
        params(init_params(config(vocab, data.num_classes()), seed)),
        prompt(Mode::fedprompt, pvp, vocab, 24),
        cls(Mode::fedcls, pvp, vocab, 24) {}
  World(const World&) = delete;
  World& operator=(const World&) = delete;

  const Task& task(Mode m) const { return m == Mode::fedprompt ? prompt : cls; }

  static Dataset make_data(std::size_t per_class) {
    SynthSpec spec;
    spec.examples_per_class = per_class;
    return synth_generate(spec);
  }
  static ModelConfig config(const Vocab& v, std::size_t labels) {
    ModelConfig c;
    c.vocab_size = v.size();
    c.num_labels = labels;
    c.d_model = 16;
    c.num_layers = 1;
    c.num_heads = 2;
    c.d_ffn = 32;
    c.max_seq_len = 24;
    return c;
  }
};

/// A run config small enough to pretrain and run in well under a second.
inline nlohmann::json tiny_run_json() {
  return {{"name", "tiny"},
          {"data", {{"synth", {{"examples_per_class", 12}}}, {"validation_fraction", 0.1}}},
          {"pretrain", {{"steps", 30}, {"corpus_sentences", 200}}},
          {"model", {{"d_model", 16}, {"num_layers", 1}, {"num_heads", 2}, {"d_ffn", 16}}},
          {"max_rounds", 2},
          {"learning_rate", 0.01},
          {"partition", {{"num_clients", 4}, {"xi", 4}, {"n_labeled", 8}}},
          {"seeds", {1, 2}}};
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

}  // namespace fewfed::testing
