#pragma once

// Toy masked language model: a pre-LayerNorm transformer encoder with learned
// positional embeddings, an MLM head tied to the token embedding, and a
// linear classification head read off position 0. Forward and backward are
// written out by hand; all arithmetic is double precision.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fewfed/corpus.hpp"
#include "json.hpp"

namespace fewfed {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t num_labels = 2;
  std::size_t d_model = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t d_ffn = 128;
  std::size_t max_seq_len = 64;

  void validate() const;
  std::size_t head_dim() const noexcept { return d_model / num_heads; }

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Tensor order and offsets; a function of the config alone.
std::vector<TensorInfo> param_manifest(const ModelConfig& config);
std::size_t param_count(const ModelConfig& config);

struct ModelParams {
  ModelConfig config;
  std::vector<TensorInfo> manifest;
  std::vector<double> flat;

  static ModelParams zeros(const ModelConfig& config);

  std::span<double> tensor(std::string_view name);
  std::span<const double> tensor(std::string_view name) const;
  const TensorInfo& info(std::string_view name) const;
};

std::map<std::string, std::vector<double>> unflatten(const ModelParams& params);
ModelParams flatten(const ModelConfig& config, const std::map<std::string, std::vector<double>>& tensors);

/// Uniform(+-1/sqrt(fan_in)) weights and embeddings, unit LayerNorm gains,
/// zero biases.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Batches and objectives

struct Target {
  std::size_t position = 0;  // mask position (mlm / prompt)
  TokenId token = 0;         // target token (mlm)
  LabelId label = 0;         // gold or pseudo label (prompt / cls)
};

/// Rows padded to a common length with the pad token; attention is 1 for
/// real tokens.
struct Batch {
  std::size_t length = 0;
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> attention;
  std::vector<Target> targets;

  std::size_t size() const noexcept { return targets.size(); }
  std::span<const TokenId> row(std::size_t i) const { return {tokens.data() + i * length, length}; }
  std::span<const std::uint8_t> row_attention(std::size_t i) const {
    return {attention.data() + i * length, length};
  }
  void append(std::span<const TokenId> row_tokens, const Target& target);
};

struct MlmObjective {};
/// Cross-entropy over the verbalizer-token logits only; verbalizer[y] is the
/// token id standing for label y.
struct PromptObjective {
  std::vector<TokenId> verbalizer;
};
struct ClsObjective {};
using Objective = std::variant<MlmObjective, PromptObjective, ClsObjective>;

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
  std::vector<double> example_losses;
};

/// Mean cross-entropy over the batch and its exact gradient.
LossAndGrad loss_and_grad(const ModelParams& params, const Batch& batch, const Objective& objective);
/// Per-example cross-entropy without the backward pass.
std::vector<double> example_losses(const ModelParams& params, const Batch& batch,
                                   const Objective& objective);

/// Vocabulary logits at the masked position. An empty attention span means
/// every position is real.
std::vector<double> mlm_logits(const ModelParams& params, std::span<const TokenId> tokens,
                               std::size_t mask_position, std::span<const std::uint8_t> attention = {});
/// Logits of the given token ids only, at the masked position.
std::vector<double> token_logits(const ModelParams& params, std::span<const TokenId> tokens,
                                 std::size_t mask_position, std::span<const TokenId> ids,
                                 std::span<const std::uint8_t> attention = {});
std::vector<double> cls_logits(const ModelParams& params, std::span<const TokenId> tokens,
                               std::span<const std::uint8_t> attention = {});

// ---------------------------------------------------------------------------
// Optimization

enum class OptimizerKind { adam, sgd };

struct OptState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;

  static OptState adam(double learning_rate, std::size_t parameters);
  static OptState sgd(double learning_rate);
};

void step(ModelParams& params, OptState& state, std::span<const double> gradient);

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

struct PretrainOptions {
  std::size_t steps = 1000;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

/// Single-mask MLM pretraining: each step masks one uniformly chosen
/// non-special token per sampled sequence. `loss_trace`, when given, receives
/// the batch loss of every step.
ModelParams pretrain_mlm(ModelParams params, const Dataset& corpus, const Vocab& vocab,
                         const PretrainOptions& options, std::vector<double>* loss_trace = nullptr);

// ---------------------------------------------------------------------------
// Checkpoints: u64 little-endian header length, header JSON, then the flat
// vector as little-endian float32.

struct Checkpoint {
  ModelParams params;
  Vocab vocab;
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fewfed
