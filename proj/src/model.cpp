#include "fewfed/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fewfed/error.hpp"
#include "fewfed/kernels.hpp"
#include "fewfed/numeric.hpp"
#include "fewfed/rng.hpp"

namespace fewfed {

using nlohmann::json;

namespace {
constexpr double kLayerNormEps = 1e-5;
}

void ModelConfig::validate() const {
  if (vocab_size <= SpecialTokens::count) throw ConfigError("model: vocab_size must exceed the special tokens");
  if (num_labels < 1) throw ConfigError("model: num_labels must be >= 1");
  if (d_model == 0 || num_heads == 0 || d_model % num_heads != 0)
    throw ConfigError("model: d_model must be divisible by num_heads");
  if (num_layers < 1 || d_ffn < 1) throw ConfigError("model: num_layers and d_ffn must be >= 1");
  if (max_seq_len < 4) throw ConfigError("model: max_seq_len must be >= 4");
}

json ModelConfig::to_json() const {
  return json{{"vocab_size", vocab_size}, {"num_labels", num_labels}, {"d_model", d_model},
              {"num_layers", num_layers}, {"num_heads", num_heads},   {"d_ffn", d_ffn},
              {"max_seq_len", max_seq_len}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.num_labels = j.value("num_labels", c.num_labels);
  c.d_model = j.value("d_model", c.d_model);
  c.num_layers = j.value("num_layers", c.num_layers);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.d_ffn = j.value("d_ffn", c.d_ffn);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  return c;
}

// ---------------------------------------------------------------------------
// Parameter layout

std::vector<TensorInfo> param_manifest(const ModelConfig& c) {
  std::vector<TensorInfo> out;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::vector<std::size_t> shape) {
    std::size_t size = 1;
    for (std::size_t dim : shape) size *= dim;
    out.push_back({std::move(name), std::move(shape), offset, size});
    offset += size;
  };
  const std::size_t d = c.d_model;
  add("tok_emb", {c.vocab_size, d});
  add("pos_emb", {c.max_seq_len, d});
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "ln1.gain", {d});
    add(p + "ln1.bias", {d});
    add(p + "attn.wq", {d, d});
    add(p + "attn.bq", {d});
    add(p + "attn.wk", {d, d});
    add(p + "attn.bk", {d});
    add(p + "attn.wv", {d, d});
    add(p + "attn.bv", {d});
    add(p + "attn.wo", {d, d});
    add(p + "attn.bo", {d});
    add(p + "ln2.gain", {d});
    add(p + "ln2.bias", {d});
    add(p + "ffn.w1", {c.d_ffn, d});
    add(p + "ffn.b1", {c.d_ffn});
    add(p + "ffn.w2", {d, c.d_ffn});
    add(p + "ffn.b2", {d});
  }
  add("final_ln.gain", {d});
  add("final_ln.bias", {d});
  add("mlm.bias", {c.vocab_size});
  add("cls.weight", {c.num_labels, d});
  add("cls.bias", {c.num_labels});
  return out;
}

std::size_t param_count(const ModelConfig& config) {
  const auto manifest = param_manifest(config);
  return manifest.back().offset + manifest.back().size;
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  p.manifest = param_manifest(config);
  p.flat.assign(param_count(config), 0.0);
  return p;
}

const TensorInfo& ModelParams::info(std::string_view name) const {
  for (const TensorInfo& t : manifest)
    if (t.name == name) return t;
  throw ContractViolation("no tensor named " + std::string(name));
}

std::span<double> ModelParams::tensor(std::string_view name) {
  const TensorInfo& t = info(name);
  return {flat.data() + t.offset, t.size};
}

std::span<const double> ModelParams::tensor(std::string_view name) const {
  const TensorInfo& t = info(name);
  return {flat.data() + t.offset, t.size};
}

std::map<std::string, std::vector<double>> unflatten(const ModelParams& params) {
  std::map<std::string, std::vector<double>> out;
  for (const TensorInfo& t : params.manifest) {
    auto begin = params.flat.begin() + static_cast<std::ptrdiff_t>(t.offset);
    out.emplace(t.name, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(t.size)));
  }
  return out;
}

ModelParams flatten(const ModelConfig& config, const std::map<std::string, std::vector<double>>& tensors) {
  ModelParams p = ModelParams::zeros(config);
  for (const TensorInfo& t : p.manifest) {
    auto it = tensors.find(t.name);
    if (it == tensors.end() || it->second.size() != t.size)
      throw ContractViolation("flatten: missing or mis-sized tensor " + t.name);
    std::copy(it->second.begin(), it->second.end(), p.flat.begin() + static_cast<std::ptrdiff_t>(t.offset));
  }
  return p;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(config);
  Rng rng = make_rng(seed, {0x1417});
  for (const TensorInfo& t : p.manifest) {
    double* data = p.flat.data() + t.offset;
    const bool is_gain = t.name.ends_with(".gain");
    const bool is_matrix = t.shape.size() == 2;
    if (is_gain) {
      std::fill(data, data + t.size, 1.0);
    } else if (is_matrix) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.shape[1]));
      for (std::size_t i = 0; i < t.size; ++i) data[i] = (2.0 * uniform_real(rng) - 1.0) * bound;
    }
  }
  return p;
}

void Batch::append(std::span<const TokenId> row_tokens, const Target& target) {
  if (row_tokens.size() > length) {
    // Widen existing rows with padding.
    const std::size_t rows = size();
    std::vector<TokenId> widened(rows * row_tokens.size(), SpecialTokens::pad);
    std::vector<std::uint8_t> widened_attention(rows * row_tokens.size(), 0);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(tokens.begin() + static_cast<std::ptrdiff_t>(r * length), length,
                  widened.begin() + static_cast<std::ptrdiff_t>(r * row_tokens.size()));
      std::copy_n(attention.begin() + static_cast<std::ptrdiff_t>(r * length), length,
                  widened_attention.begin() + static_cast<std::ptrdiff_t>(r * row_tokens.size()));
    }
    tokens = std::move(widened);
    attention = std::move(widened_attention);
    length = row_tokens.size();
  }
  tokens.insert(tokens.end(), row_tokens.begin(), row_tokens.end());
  tokens.insert(tokens.end(), length - row_tokens.size(), SpecialTokens::pad);
  attention.insert(attention.end(), row_tokens.size(), 1);
  attention.insert(attention.end(), length - row_tokens.size(), 0);
  targets.push_back(target);
}

// ---------------------------------------------------------------------------
// Encoder

namespace {

double gelu(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  constexpr double c = 0.7978845608028654;
  const double t = std::tanh(c * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

struct LayerOffsets {
  std::size_t ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo, ln2_gain, ln2_bias, w1, b1, w2, b2;
};

struct Offsets {
  std::size_t tok_emb, pos_emb, final_gain, final_bias, mlm_bias, cls_weight, cls_bias;
  std::vector<LayerOffsets> layers;

  explicit Offsets(const ModelParams& p) {
    auto at = [&](const std::string& name) { return p.info(name).offset; };
    tok_emb = at("tok_emb");
    pos_emb = at("pos_emb");
    final_gain = at("final_ln.gain");
    final_bias = at("final_ln.bias");
    mlm_bias = at("mlm.bias");
    cls_weight = at("cls.weight");
    cls_bias = at("cls.bias");
    for (std::size_t l = 0; l < p.config.num_layers; ++l) {
      const std::string q = "layer" + std::to_string(l) + ".";
      layers.push_back({at(q + "ln1.gain"), at(q + "ln1.bias"), at(q + "attn.wq"), at(q + "attn.bq"),
                        at(q + "attn.wk"), at(q + "attn.bk"), at(q + "attn.wv"), at(q + "attn.bv"),
                        at(q + "attn.wo"), at(q + "attn.bo"), at(q + "ln2.gain"), at(q + "ln2.bias"),
                        at(q + "ffn.w1"), at(q + "ffn.b1"), at(q + "ffn.w2"), at(q + "ffn.b2")});
    }
  }
};

struct LayerCache {
  std::vector<double> xhat1, rstd1, a, q, k, v, probs, ctx, x_mid, xhat2, rstd2, b, pre, act;
};

struct ForwardCache {
  std::size_t length = 0;
  std::vector<std::uint8_t> keep;  // attention mask over the trimmed length
  std::vector<LayerCache> layers;
  std::vector<double> x_last, xhat_final, rstd_final, hidden;
};

void layer_norm(const double* x, const double* gain, const double* bias, std::size_t rows,
                std::size_t d, double* xhat, double* rstd, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd[r] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (xr[i] - mean) * inv;
      xhat[r * d + i] = h;
      y[r * d + i] = h * gain[i] + bias[i];
    }
  }
}

// dx += LayerNorm backward of dy; accumulates gain/bias gradients.
void layer_norm_backward(const double* dy, const double* xhat, const double* rstd, const double* gain,
                         std::size_t rows, std::size_t d, double* dgain, double* dbias, double* dx) {
  std::vector<double> dxhat(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* dyr = dy + r * d;
    const double* hr = xhat + r * d;
    double mean_dxhat = 0.0;
    double mean_dxhat_h = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      dgain[i] += dyr[i] * hr[i];
      dbias[i] += dyr[i];
      dxhat[i] = dyr[i] * gain[i];
      mean_dxhat += dxhat[i];
      mean_dxhat_h += dxhat[i] * hr[i];
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_h /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i)
      dx[r * d + i] += rstd[r] * (dxhat[i] - mean_dxhat - hr[i] * mean_dxhat_h);
  }
}

void add_bias(double* y, const double* bias, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] += bias[c];
}

void column_sums(const double* x, std::size_t rows, std::size_t cols, double* out) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += x[r * cols + c];
}

void gather_head(const double* x, std::size_t rows, std::size_t d, std::size_t offset, std::size_t dh,
                 double* out) {
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x + r * d + offset, dh, out + r * dh);
}

void scatter_head(const double* in, std::size_t rows, std::size_t d, std::size_t offset, std::size_t dh,
                  double* x) {
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(in + r * dh, dh, x + r * d + offset);
}

class Encoder {
 public:
  explicit Encoder(const ModelParams& params) : p_(params), off_(params), c_(params.config) {}

  const Offsets& offsets() const { return off_; }

  void forward(std::span<const TokenId> tokens, std::span<const std::uint8_t> attention,
               ForwardCache& cache) const {
    std::size_t length = tokens.size();
    if (!attention.empty()) {
      require(attention.size() == tokens.size(), "attention mask length must match tokens");
      while (length > 0 && attention[length - 1] == 0) --length;
    }
    require(length > 0, "sequence has no attended tokens");
    require(length <= c_.max_seq_len, "sequence longer than max_seq_len");

    const std::size_t d = c_.d_model;
    const double* w = p_.flat.data();
    cache.length = length;
    cache.keep.assign(length, 1);
    if (!attention.empty()) std::copy_n(attention.begin(), length, cache.keep.begin());

    std::vector<double> x(length * d);
    for (std::size_t t = 0; t < length; ++t) {
      const auto token = static_cast<std::size_t>(tokens[t]);
      require(token < c_.vocab_size, "token id out of vocabulary range");
      const double* emb = w + off_.tok_emb + token * d;
      const double* pos = w + off_.pos_emb + t * d;
      for (std::size_t i = 0; i < d; ++i) x[t * d + i] = emb[i] + pos[i];
    }

    cache.layers.resize(c_.num_layers);
    for (std::size_t l = 0; l < c_.num_layers; ++l) {
      x = forward_layer(off_.layers[l], cache.keep, x, cache.layers[l]);
    }

    cache.x_last = x;
    cache.xhat_final.resize(length * d);
    cache.rstd_final.resize(length);
    cache.hidden.resize(length * d);
    layer_norm(x.data(), w + off_.final_gain, w + off_.final_bias, length, d, cache.xhat_final.data(),
               cache.rstd_final.data(), cache.hidden.data());
  }

  // Accumulates parameter gradients for d(loss)/d(hidden) into grad.
  void backward(std::span<const TokenId> tokens, const ForwardCache& cache, std::vector<double> dhidden,
                std::vector<double>& grad) const {
    const std::size_t d = c_.d_model;
    const std::size_t length = cache.length;
    const double* w = p_.flat.data();
    double* g = grad.data();

    std::vector<double> dx(length * d, 0.0);
    layer_norm_backward(dhidden.data(), cache.xhat_final.data(), cache.rstd_final.data(),
                        w + off_.final_gain, length, d, g + off_.final_gain, g + off_.final_bias, dx.data());

    for (std::size_t l = c_.num_layers; l-- > 0;) {
      dx = backward_layer(off_.layers[l], cache.keep, cache.layers[l], std::move(dx), g);
    }

    for (std::size_t t = 0; t < length; ++t) {
      const auto token = static_cast<std::size_t>(tokens[t]);
      double* demb = g + off_.tok_emb + token * d;
      double* dpos = g + off_.pos_emb + t * d;
      for (std::size_t i = 0; i < d; ++i) {
        demb[i] += dx[t * d + i];
        dpos[i] += dx[t * d + i];
      }
    }
  }

 private:
  std::vector<double> forward_layer(const LayerOffsets& o, const std::vector<std::uint8_t>& keep,
                     const std::vector<double>& x_in, LayerCache& lc) const {
    const std::size_t T = keep.size();
    const std::size_t d = c_.d_model;
    const std::size_t f = c_.d_ffn;
    const std::size_t heads = c_.num_heads;
    const std::size_t dh = c_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double* w = p_.flat.data();

    lc.xhat1.resize(T * d);
    lc.rstd1.resize(T);
    lc.a.resize(T * d);
    layer_norm(x_in.data(), w + o.ln1_gain, w + o.ln1_bias, T, d, lc.xhat1.data(), lc.rstd1.data(), lc.a.data());

    lc.q.resize(T * d);
    lc.k.resize(T * d);
    lc.v.resize(T * d);
    kernels::gemm_nt(T, d, d, lc.a.data(), w + o.wq, lc.q.data());
    kernels::gemm_nt(T, d, d, lc.a.data(), w + o.wk, lc.k.data());
    kernels::gemm_nt(T, d, d, lc.a.data(), w + o.wv, lc.v.data());
    add_bias(lc.q.data(), w + o.bq, T, d);
    add_bias(lc.k.data(), w + o.bk, T, d);
    add_bias(lc.v.data(), w + o.bv, T, d);

    lc.probs.assign(heads * T * T, 0.0);
    lc.ctx.assign(T * d, 0.0);
    std::vector<double> qh(T * dh), kh(T * dh), vh(T * dh), scores(T * T), ctx_h(T * dh);
    for (std::size_t h = 0; h < heads; ++h) {
      gather_head(lc.q.data(), T, d, h * dh, dh, qh.data());
      gather_head(lc.k.data(), T, d, h * dh, dh, kh.data());
      gather_head(lc.v.data(), T, d, h * dh, dh, vh.data());
      kernels::gemm_nt(T, T, dh, qh.data(), kh.data(), scores.data());
      double* probs = lc.probs.data() + h * T * T;
      for (std::size_t i = 0; i < T; ++i) {
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < T; ++j)
          if (keep[j]) peak = std::max(peak, scores[i * T + j] * scale);
        double sum = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          if (!keep[j]) continue;
          const double e = std::exp(scores[i * T + j] * scale - peak);
          probs[i * T + j] = e;
          sum += e;
        }
        for (std::size_t j = 0; j < T; ++j) probs[i * T + j] /= sum;
      }
      std::fill(ctx_h.begin(), ctx_h.end(), 0.0);
      kernels::gemm_nn(T, dh, T, probs, vh.data(), ctx_h.data());
      scatter_head(ctx_h.data(), T, d, h * dh, dh, lc.ctx.data());
    }

    lc.x_mid = x_in;
    kernels::gemm_nt(T, d, d, lc.ctx.data(), w + o.wo, lc.x_mid.data(), /*accumulate=*/true);
    add_bias(lc.x_mid.data(), w + o.bo, T, d);

    lc.xhat2.resize(T * d);
    lc.rstd2.resize(T);
    lc.b.resize(T * d);
    layer_norm(lc.x_mid.data(), w + o.ln2_gain, w + o.ln2_bias, T, d, lc.xhat2.data(), lc.rstd2.data(), lc.b.data());

    lc.pre.resize(T * f);
    kernels::gemm_nt(T, f, d, lc.b.data(), w + o.w1, lc.pre.data());
    add_bias(lc.pre.data(), w + o.b1, T, f);
    lc.act.resize(T * f);
    for (std::size_t i = 0; i < T * f; ++i) lc.act[i] = gelu(lc.pre[i]);

    std::vector<double> x_out = lc.x_mid;
    kernels::gemm_nt(T, d, f, lc.act.data(), w + o.w2, x_out.data(), /*accumulate=*/true);
    add_bias(x_out.data(), w + o.b2, T, d);
    return x_out;
  }

  std::vector<double> backward_layer(const LayerOffsets& o, const std::vector<std::uint8_t>& keep,
                                     const LayerCache& lc, std::vector<double> dx, double* g) const {
    const std::size_t T = keep.size();
    const std::size_t d = c_.d_model;
    const std::size_t f = c_.d_ffn;
    const std::size_t heads = c_.num_heads;
    const std::size_t dh = c_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double* w = p_.flat.data();

    // Feed-forward block: x_out = x_mid + W2 gelu(W1 LN2(x_mid) + b1) + b2
    kernels::gemm_tn(d, f, T, dx.data(), lc.act.data(), g + o.w2);
    column_sums(dx.data(), T, d, g + o.b2);
    std::vector<double> dpre(T * f, 0.0);
    kernels::gemm_nn(T, f, d, dx.data(), w + o.w2, dpre.data());
    for (std::size_t i = 0; i < T * f; ++i) dpre[i] *= gelu_grad(lc.pre[i]);
    kernels::gemm_tn(f, d, T, dpre.data(), lc.b.data(), g + o.w1);
    column_sums(dpre.data(), T, f, g + o.b1);
    std::vector<double> db(T * d, 0.0);
    kernels::gemm_nn(T, d, f, dpre.data(), w + o.w1, db.data());
    std::vector<double> dmid = dx;
    layer_norm_backward(db.data(), lc.xhat2.data(), lc.rstd2.data(), w + o.ln2_gain, T, d, g + o.ln2_gain,
                        g + o.ln2_bias, dmid.data());

    // Attention block: x_mid = x_in + Wo ctx + bo
    kernels::gemm_tn(d, d, T, dmid.data(), lc.ctx.data(), g + o.wo);
    column_sums(dmid.data(), T, d, g + o.bo);
    std::vector<double> dctx(T * d, 0.0);
    kernels::gemm_nn(T, d, d, dmid.data(), w + o.wo, dctx.data());

    std::vector<double> dq(T * d, 0.0), dk(T * d, 0.0), dv(T * d, 0.0);
    std::vector<double> qh(T * dh), kh(T * dh), vh(T * dh), dctx_h(T * dh);
    std::vector<double> dprobs(T * T), dscores(T * T), dqh(T * dh), dkh(T * dh), dvh(T * dh);
    for (std::size_t h = 0; h < heads; ++h) {
      gather_head(lc.q.data(), T, d, h * dh, dh, qh.data());
      gather_head(lc.k.data(), T, d, h * dh, dh, kh.data());
      gather_head(lc.v.data(), T, d, h * dh, dh, vh.data());
      gather_head(dctx.data(), T, d, h * dh, dh, dctx_h.data());
      const double* probs = lc.probs.data() + h * T * T;

      kernels::gemm_nt(T, T, dh, dctx_h.data(), vh.data(), dprobs.data());
      std::fill(dvh.begin(), dvh.end(), 0.0);
      kernels::gemm_tn(T, dh, T, probs, dctx_h.data(), dvh.data());
      for (std::size_t i = 0; i < T; ++i) {
        double inner = 0.0;
        for (std::size_t j = 0; j < T; ++j) inner += probs[i * T + j] * dprobs[i * T + j];
        for (std::size_t j = 0; j < T; ++j)
          dscores[i * T + j] = probs[i * T + j] * (dprobs[i * T + j] - inner) * scale;
      }
      std::fill(dqh.begin(), dqh.end(), 0.0);
      std::fill(dkh.begin(), dkh.end(), 0.0);
      kernels::gemm_nn(T, dh, T, dscores.data(), kh.data(), dqh.data());
      kernels::gemm_tn(T, dh, T, dscores.data(), qh.data(), dkh.data());
      scatter_head(dqh.data(), T, d, h * dh, dh, dq.data());
      scatter_head(dkh.data(), T, d, h * dh, dh, dk.data());
      scatter_head(dvh.data(), T, d, h * dh, dh, dv.data());
    }

    kernels::gemm_tn(d, d, T, dq.data(), lc.a.data(), g + o.wq);
    kernels::gemm_tn(d, d, T, dk.data(), lc.a.data(), g + o.wk);
    kernels::gemm_tn(d, d, T, dv.data(), lc.a.data(), g + o.wv);
    column_sums(dq.data(), T, d, g + o.bq);
    column_sums(dk.data(), T, d, g + o.bk);
    column_sums(dv.data(), T, d, g + o.bv);
    std::vector<double> da(T * d, 0.0);
    kernels::gemm_nn(T, d, d, dq.data(), w + o.wq, da.data());
    kernels::gemm_nn(T, d, d, dk.data(), w + o.wk, da.data());
    kernels::gemm_nn(T, d, d, dv.data(), w + o.wv, da.data());

    std::vector<double> din = std::move(dmid);
    layer_norm_backward(da.data(), lc.xhat1.data(), lc.rstd1.data(), w + o.ln1_gain, T, d, g + o.ln1_gain,
                        g + o.ln1_bias, din.data());
    return din;
  }

  const ModelParams& p_;
  Offsets off_;
  const ModelConfig& c_;
};


// Loss at one example from the final hidden states; fills dhidden (scaled by
// `weight`) and head-parameter gradients when `grad` is non-null.
double head_loss(const ModelParams& p, const Offsets& off, const ForwardCache& cache,
                 std::span<const TokenId> tokens, const Target& target, const Objective& objective,
                 double weight, std::vector<double>* dhidden, std::vector<double>* grad) {
  const ModelConfig& c = p.config;
  const std::size_t d = c.d_model;
  const double* w = p.flat.data();

  return std::visit(
      [&](const auto& obj) -> double {
        using T = std::decay_t<decltype(obj)>;
        if constexpr (std::is_same_v<T, ClsObjective>) {
          require(tokens[0] == SpecialTokens::cls, "cls objective: sequence must start with [CLS]");
          require(target.label < c.num_labels, "cls objective: label out of range");
          const double* h = cache.hidden.data();
          std::vector<double> logits(c.num_labels);
          kernels::gemm_nt(1, c.num_labels, d, h, w + off.cls_weight, logits.data());
          for (std::size_t y = 0; y < c.num_labels; ++y) logits[y] += w[off.cls_bias + y];
          const auto probs = softmax(logits);
          const double loss = -std::log(std::max(probs[target.label], 1e-300));
          if (grad) {
            double* g = grad->data();
            std::vector<double> dlogits(probs);
            dlogits[target.label] -= 1.0;
            for (double& v : dlogits) v *= weight;
            kernels::gemm_tn(c.num_labels, d, 1, dlogits.data(), h, g + off.cls_weight);
            for (std::size_t y = 0; y < c.num_labels; ++y) g[off.cls_bias + y] += dlogits[y];
            kernels::gemm_nn(1, d, c.num_labels, dlogits.data(), w + off.cls_weight, dhidden->data());
          }
          return loss;
        } else {
          const std::size_t pos = target.position;
          require(pos < cache.length, "mask position out of range");
          require(tokens[pos] == SpecialTokens::mask, "mask position must hold the [MASK] token");
          const double* h = cache.hidden.data() + pos * d;
          std::vector<TokenId> ids;
          std::size_t gold = 0;
          if constexpr (std::is_same_v<T, PromptObjective>) {
            require(target.label < obj.verbalizer.size(), "prompt objective: label out of range");
            ids = obj.verbalizer;
            gold = target.label;
          } else {
            require(static_cast<std::size_t>(target.token) < c.vocab_size, "mlm target out of range");
            gold = static_cast<std::size_t>(target.token);
          }
          const std::size_t n = ids.empty() ? c.vocab_size : ids.size();
          std::vector<double> logits(n);
          if (ids.empty()) {
            kernels::gemm_nt(1, n, d, h, w + off.tok_emb, logits.data());
            for (std::size_t v = 0; v < n; ++v) logits[v] += w[off.mlm_bias + v];
          } else {
            for (std::size_t y = 0; y < n; ++y) {
              const auto tok = static_cast<std::size_t>(ids[y]);
              logits[y] = kernels::active().dot(h, w + off.tok_emb + tok * d, d) + w[off.mlm_bias + tok];
            }
          }
          const auto probs = softmax(logits);
          const double loss = -std::log(std::max(probs[gold], 1e-300));
          if (grad) {
            double* g = grad->data();
            std::vector<double> dlogits(probs);
            dlogits[gold] -= 1.0;
            for (double& v : dlogits) v *= weight;
            double* dh = dhidden->data() + pos * d;
            if (ids.empty()) {
              kernels::gemm_nn(1, d, n, dlogits.data(), w + off.tok_emb, dh);
              kernels::gemm_tn(n, d, 1, dlogits.data(), h, g + off.tok_emb);
              for (std::size_t v = 0; v < n; ++v) g[off.mlm_bias + v] += dlogits[v];
            } else {
              for (std::size_t y = 0; y < n; ++y) {
                const auto tok = static_cast<std::size_t>(ids[y]);
                kernels::active().axpy(dlogits[y], w + off.tok_emb + tok * d, dh, d);
                kernels::active().axpy(dlogits[y], h, g + off.tok_emb + tok * d, d);
                g[off.mlm_bias + tok] += dlogits[y];
              }
            }
          }
          return loss;
        }
      },
      objective);
}

}  // namespace

LossAndGrad loss_and_grad(const ModelParams& params, const Batch& batch, const Objective& objective) {
  require(batch.size() > 0, "loss_and_grad: empty batch");
  Encoder encoder(params);
  LossAndGrad out;
  out.grad.assign(params.flat.size(), 0.0);
  out.example_losses.reserve(batch.size());
  const double weight = 1.0 / static_cast<double>(batch.size());
  ForwardCache cache;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto tokens = batch.row(i);
    encoder.forward(tokens, batch.row_attention(i), cache);
    std::vector<double> dhidden(cache.length * params.config.d_model, 0.0);
    const double loss = head_loss(params, encoder.offsets(), cache, tokens, batch.targets[i], objective,
                                  weight, &dhidden, &out.grad);
    out.example_losses.push_back(loss);
    out.loss += loss * weight;
    encoder.backward(tokens, cache, std::move(dhidden), out.grad);
  }
  return out;
}

std::vector<double> example_losses(const ModelParams& params, const Batch& batch, const Objective& objective) {
  Encoder encoder(params);
  std::vector<double> losses;
  ForwardCache cache;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto tokens = batch.row(i);
    encoder.forward(tokens, batch.row_attention(i), cache);
    losses.push_back(head_loss(params, encoder.offsets(), cache, tokens, batch.targets[i], objective, 1.0,
                               nullptr, nullptr));
  }
  return losses;
}

std::vector<double> token_logits(const ModelParams& params, std::span<const TokenId> tokens,
                                 std::size_t mask_position, std::span<const TokenId> ids,
                                 std::span<const std::uint8_t> attention) {
  require(mask_position < tokens.size(), "mask position out of range");
  require(tokens[mask_position] == SpecialTokens::mask, "mask position must hold the [MASK] token");
  require(attention.empty() || attention[mask_position], "mask position must be attended");
  Encoder encoder(params);
  ForwardCache cache;
  encoder.forward(tokens, attention, cache);
  const std::size_t d = params.config.d_model;
  const double* h = cache.hidden.data() + mask_position * d;
  const double* w = params.flat.data();
  const Offsets& off = encoder.offsets();
  std::vector<double> logits(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto tok = static_cast<std::size_t>(ids[i]);
    require(tok < params.config.vocab_size, "token id out of vocabulary range");
    logits[i] = kernels::active().dot(h, w + off.tok_emb + tok * d, d) + w[off.mlm_bias + tok];
  }
  return logits;
}

std::vector<double> mlm_logits(const ModelParams& params, std::span<const TokenId> tokens,
                               std::size_t mask_position, std::span<const std::uint8_t> attention) {
  std::vector<TokenId> all(params.config.vocab_size);
  std::iota(all.begin(), all.end(), TokenId{0});
  return token_logits(params, tokens, mask_position, all, attention);
}

std::vector<double> cls_logits(const ModelParams& params, std::span<const TokenId> tokens,
                               std::span<const std::uint8_t> attention) {
  require(!tokens.empty() && tokens[0] == SpecialTokens::cls, "cls_logits: sequence must start with [CLS]");
  Encoder encoder(params);
  ForwardCache cache;
  encoder.forward(tokens, attention, cache);
  const ModelConfig& c = params.config;
  const Offsets& off = encoder.offsets();
  std::vector<double> logits(c.num_labels);
  kernels::gemm_nt(1, c.num_labels, c.d_model, cache.hidden.data(), params.flat.data() + off.cls_weight,
                   logits.data());
  for (std::size_t y = 0; y < c.num_labels; ++y) logits[y] += params.flat[off.cls_bias + y];
  return logits;
}

// ---------------------------------------------------------------------------
// Optimization

OptState OptState::adam(double learning_rate, std::size_t parameters) {
  OptState s;
  s.kind = OptimizerKind::adam;
  s.learning_rate = learning_rate;
  s.m.assign(parameters, 0.0);
  s.v.assign(parameters, 0.0);
  return s;
}

OptState OptState::sgd(double learning_rate) {
  OptState s;
  s.kind = OptimizerKind::sgd;
  s.learning_rate = learning_rate;
  return s;
}

void step(ModelParams& params, OptState& state, std::span<const double> gradient) {
  require(gradient.size() == params.flat.size(), "step: gradient length must match parameters");
  ++state.step;
  if (state.kind == OptimizerKind::sgd) {
    if (state.learning_rate != 0.0) kernels::axpy(-state.learning_rate, gradient, params.flat);
    return;
  }
  require(state.m.size() == params.flat.size() && state.v.size() == params.flat.size(),
          "step: adam moments must match parameters");
  if (state.learning_rate == 0.0) {
    // Moments still advance; parameters stay bit-identical.
    for (std::size_t i = 0; i < gradient.size(); ++i) {
      state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * gradient[i];
      state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * gradient[i] * gradient[i];
    }
    return;
  }
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * gradient[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * gradient[i] * gradient[i];
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    params.flat[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer \"" + name + "\"");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

ModelParams pretrain_mlm(ModelParams params, const Dataset& corpus, const Vocab& vocab,
                         const PretrainOptions& options, std::vector<double>* loss_trace) {
  if (options.steps == 0) return params;
  require(!corpus.empty(), "pretrain_mlm: corpus is empty");
  require(options.batch_size > 0, "pretrain_mlm: batch_size must be > 0");

  const std::size_t max_len = params.config.max_seq_len;
  std::vector<std::vector<TokenId>> sequences;
  std::vector<std::vector<std::size_t>> maskable;
  for (const Example& ex : corpus.examples) {
    auto ids = vocab.encode(ex.text_a);
    if (ex.text_b) {
      auto more = vocab.encode(*ex.text_b);
      ids.insert(ids.end(), more.begin(), more.end());
    }
    if (ids.size() > max_len) ids.resize(max_len);
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (static_cast<std::size_t>(ids[i]) >= SpecialTokens::count) positions.push_back(i);
    if (positions.empty()) continue;
    sequences.push_back(std::move(ids));
    maskable.push_back(std::move(positions));
  }
  require(!sequences.empty(), "pretrain_mlm: corpus has no maskable tokens");

  Rng rng = make_rng(options.seed, {0x9e7});
  OptState opt = OptState::adam(options.learning_rate, params.flat.size());
  for (std::size_t s = 0; s < options.steps; ++s) {
    Batch batch;
    for (std::size_t b = 0; b < options.batch_size; ++b) {
      const std::size_t pick = uniform_index(rng, sequences.size());
      std::vector<TokenId> row = sequences[pick];
      const std::size_t pos = maskable[pick][uniform_index(rng, maskable[pick].size())];
      Target target;
      target.position = pos;
      target.token = row[pos];
      row[pos] = SpecialTokens::mask;
      batch.append(row, target);
    }
    LossAndGrad lg = loss_and_grad(params, batch, MlmObjective{});
    if (loss_trace) loss_trace->push_back(lg.loss);
    step(params, opt, lg.grad);
  }
  return params;
}

}  // namespace fewfed
