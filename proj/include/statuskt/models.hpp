#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "statuskt/autodiff.hpp"
#include "statuskt/dataset.hpp"

namespace statuskt {

enum class Backbone { recurrent, attention };
enum class Variant { original, statuskt };

inline std::string_view to_string(Backbone b) { return b == Backbone::recurrent ? "recurrent" : "attention"; }
inline std::string_view to_string(Variant v) { return v == Variant::original ? "original" : "statuskt"; }

inline Backbone parse_backbone(std::string_view s) {
  if (s == "recurrent") return Backbone::recurrent;
  if (s == "attention") return Backbone::attention;
  throw ConfigError("unknown backbone '" + std::string(s) + "' (expected recurrent or attention)");
}

inline Variant parse_variant(std::string_view s) {
  if (s == "original") return Variant::original;
  if (s == "statuskt") return Variant::statuskt;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected original or statuskt)");
}

inline constexpr std::size_t kDefaultRecurrentDim = 200;
inline constexpr std::size_t kDefaultAttentionDim = 256;

struct ModelConfig {
  Backbone backbone = Backbone::recurrent;
  Variant variant = Variant::original;
  std::size_t embed_dim = 0;  // 0 selects the backbone default
  std::size_t num_questions = 0;
  std::size_t num_concepts = 0;
  std::size_t max_len = 200;
  double dropout = 0.1;
  std::size_t attention_heads = 8;
  std::uint64_t seed = 42;

  std::size_t dim() const {
    if (embed_dim) return embed_dim;
    return backbone == Backbone::recurrent ? kDefaultRecurrentDim : kDefaultAttentionDim;
  }
  std::size_t head_dim() const { return dim() / attention_heads; }

  void validate() const {
    if (num_questions == 0 || num_concepts == 0) throw ConfigError("model needs at least one question and concept");
    if (max_len < 2) throw ConfigError("max_len must be at least 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (backbone == Backbone::attention) {
      if (attention_heads == 0 || dim() % attention_heads != 0)
        throw ConfigError("embed_dim " + std::to_string(dim()) + " is not divisible by " +
                          std::to_string(attention_heads) + " attention heads");
    }
  }

  nlohmann::json to_json() const {
    return {{"backbone", to_string(backbone)}, {"variant", to_string(variant)},
            {"embed_dim", dim()},              {"num_questions", num_questions},
            {"num_concepts", num_concepts},    {"max_len", max_len},
            {"dropout", dropout},              {"attention_heads", attention_heads},
            {"seed", seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.backbone = parse_backbone(j.at("backbone").get<std::string>());
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.num_questions = j.at("num_questions").get<std::size_t>();
    c.num_concepts = j.at("num_concepts").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.attention_heads = j.at("attention_heads").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  }
};

/// Parameter count of the architecture built by build_model:
///   shared:    (Q + C + 2) d                      question/concept/response embeddings
///              + 2d*d + d                         readout layer over [state ; next question]
///              + d + 1                            correctness head
///   recurrent: 8 d^2 + 4 d                        gated cell (input + hidden weights, bias)
///   attention: L d + 6 d^2 + 6 d                  positions, Q/K/V/O projections, 2-layer FFN
///   statuskt:  9 d + 4 d + 4                      MP input projection (8 -> d), four MP heads
inline std::size_t closed_form_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.dim();
  std::size_t n = (c.num_questions + c.num_concepts + 2) * d + 2 * d * d + d + d + 1;
  if (c.backbone == Backbone::recurrent)
    n += 8 * d * d + 4 * d;
  else
    n += c.max_len * d + 6 * d * d + 6 * d;
  if (c.variant == Variant::statuskt) n += 9 * d + 4 * d + 4;
  return n;
}

/// Per-step outputs. r_pred[s, t] = P(step t + 1 correct); mp_pred[s, t, :]
/// estimates step t + 1's four MP ratios (statuskt only, otherwise undefined).
template <typename T>
struct Predictions {
  ad::Tensor<T> r_pred;   // [B, L]
  ad::Tensor<T> mp_pred;  // [B, L, 4]
};

/// Dropout switch and randomness source for one forward pass.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;

  static ForwardContext eval() { return {}; }
  static ForwardContext train(Rng& rng) { return {true, &rng}; }
};

/// Logit bound before the output sigmoids, so outputs stay strictly inside (0, 1).
inline constexpr double kLogitBound = 15.0;

template <typename T>
class KTModel {
 public:
  explicit KTModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::size_t d = config_.dim();
    const auto seed = config_.seed;
    embed_question_ = embedding("embed.question", config_.num_questions, d);
    embed_concept_ = embedding("embed.concept", config_.num_concepts, d);
    embed_response_ = embedding("embed.response", 2, d);
    if (config_.variant == Variant::statuskt) {
      mp_weight_ = params_.weight("mp_proj.weight", kMpInputWidth, d, seed);
      mp_bias_ = params_.bias("mp_proj.bias", d);
    }
  }
  virtual ~KTModel() = default;
  KTModel(const KTModel&) = delete;
  KTModel& operator=(const KTModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ad::ParameterSet<T>& parameters() { return params_; }
  const ad::ParameterSet<T>& parameters() const { return params_; }

  Predictions<T> forward(const Batch& batch, ForwardContext ctx = ForwardContext::eval()) {
    if (batch.max_len != config_.max_len)
      throw ShapeError("batch max_len " + std::to_string(batch.max_len) + " does not match model max_len " +
                       std::to_string(config_.max_len));
    if (ctx.training && !ctx.rng && config_.dropout > 0.0) throw ConfigError("training forward pass needs an rng");
    const ad::Shape bl{batch.num_sequences, batch.max_len};
    auto x = interaction_embedding(batch, bl);
    auto query = add(ad::embedding_lookup(embed_question_, batch.target_question_ids, bl),
                     ad::embedding_lookup(embed_concept_, batch.target_concept_ids, bl));
    auto state = encode(x, query, batch, ctx);
    return readout(state, query, bl, ctx);
  }

 protected:
  /// Maps interaction embeddings [B, L, d] and next-question embeddings to a
  /// per-position state that depends on steps <= t only.
  virtual ad::Tensor<T> encode(const ad::Tensor<T>& interactions, const ad::Tensor<T>& query, const Batch& batch,
                               ForwardContext ctx) = 0;

  /// Head readout layers; called by derived constructors after their own
  /// parameters so the declaration order follows the data flow.
  void build_heads() {
    const std::size_t d = config_.dim();
    const auto seed = config_.seed;
    readout_weight_ = params_.weight("readout.weight", 2 * d, d, seed);
    readout_bias_ = params_.bias("readout.bias", d);
    correct_weight_ = params_.weight("head.correct.weight", d, 1, seed);
    correct_bias_ = params_.bias("head.correct.bias", 1);
    if (config_.variant == Variant::statuskt) {
      mp_head_weight_ = params_.weight("head.mp.weight", d, kNumDimensions, seed);
      mp_head_bias_ = params_.bias("head.mp.bias", kNumDimensions);
    }
  }

  /// Embedding table [vocab, d] initialised U(-1/sqrt(d), 1/sqrt(d)).
  ad::Tensor<T> embedding(const std::string& name, std::size_t vocab, std::size_t d) {
    Rng rng(sub_seed(config_.seed, name));
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<T> data(vocab * d);
    for (auto& x : data) x = T(rng.uniform(-bound, bound));
    return params_.add(name, ad::Tensor<T>::from({vocab, d}, std::move(data), true));
  }

  ad::Tensor<T> dropout(const ad::Tensor<T>& x, ForwardContext ctx) {
    if (!ctx.training || config_.dropout == 0.0) return x;
    return ad::dropout(x, config_.dropout, *ctx.rng, true);
  }

  ModelConfig config_;
  ad::ParameterSet<T> params_;

 private:
  ad::Tensor<T> interaction_embedding(const Batch& batch, const ad::Shape& bl) {
    std::vector<int> responses(batch.correctness.size());
    for (std::size_t i = 0; i < responses.size(); ++i) responses[i] = batch.correctness[i] != 0.0 ? 1 : 0;
    auto x = add(add(ad::embedding_lookup(embed_question_, batch.question_ids, bl),
                     ad::embedding_lookup(embed_concept_, batch.concept_ids, bl)),
                 ad::embedding_lookup(embed_response_, responses, bl));
    if (config_.variant == Variant::statuskt) {
      std::vector<T> mp(batch.mp_inputs.begin(), batch.mp_inputs.end());
      auto mp_in = ad::Tensor<T>::from({bl[0], bl[1], kMpInputWidth}, std::move(mp));
      x = add(x, add(ad::matmul(mp_in, mp_weight_), mp_bias_));
    }
    return x;
  }

  Predictions<T> readout(const ad::Tensor<T>& state, const ad::Tensor<T>& query, const ad::Shape& bl,
                         ForwardContext ctx) {
    auto hidden = ad::tanh(add(ad::matmul(ad::concat<T>({state, query}), readout_weight_), readout_bias_));
    hidden = dropout(hidden, ctx);
    const T bound = T(kLogitBound);
    Predictions<T> out;
    auto logit = add(ad::matmul(hidden, correct_weight_), correct_bias_);
    out.r_pred = ad::reshape(ad::sigmoid(ad::clamp(logit, -bound, bound)), bl);
    if (config_.variant == Variant::statuskt) {
      auto mp_logit = add(ad::matmul(hidden, mp_head_weight_), mp_head_bias_);
      out.mp_pred = ad::sigmoid(ad::clamp(mp_logit, -bound, bound));
    }
    return out;
  }

  ad::Tensor<T> embed_question_, embed_concept_, embed_response_;
  ad::Tensor<T> mp_weight_, mp_bias_;
  ad::Tensor<T> readout_weight_, readout_bias_;
  ad::Tensor<T> correct_weight_, correct_bias_;
  ad::Tensor<T> mp_head_weight_, mp_head_bias_;
};

/// DKT-style backbone: a single-layer LSTM over interaction embeddings.
template <typename T>
class RecurrentKT final : public KTModel<T> {
 public:
  explicit RecurrentKT(ModelConfig config) : KTModel<T>(std::move(config)) {
    const std::size_t d = this->config_.dim();
    const auto seed = this->config_.seed;
    input_weight_ = this->params_.weight("lstm.input_weight", d, 4 * d, seed);
    hidden_weight_ = this->params_.weight("lstm.hidden_weight", d, 4 * d, seed);
    bias_ = this->params_.bias("lstm.bias", 4 * d);
    this->build_heads();
  }

 protected:
  ad::Tensor<T> encode(const ad::Tensor<T>& interactions, const ad::Tensor<T>&, const Batch& batch,
                       ForwardContext ctx) override {
    const std::size_t d = this->config_.dim();
    const std::size_t n = batch.num_sequences;
    auto x = this->dropout(interactions, ctx);
    // Input contributions for all steps at once: [B, L, 4d].
    auto gates_in = add(ad::matmul(x, input_weight_), bias_);
    auto h = ad::Tensor<T>::zeros({n, d});
    auto c = ad::Tensor<T>::zeros({n, d});
    std::vector<ad::Tensor<T>> states;
    states.reserve(batch.max_len);
    for (std::size_t t = 0; t < batch.max_len; ++t) {
      auto g = add(ad::select_step(gates_in, t), ad::matmul(h, hidden_weight_));
      auto in_gate = ad::sigmoid(ad::slice(g, 0, d));
      auto forget_gate = ad::sigmoid(ad::slice(g, d, 2 * d));
      auto candidate = ad::tanh(ad::slice(g, 2 * d, 3 * d));
      auto out_gate = ad::sigmoid(ad::slice(g, 3 * d, 4 * d));
      c = add(multiply(forget_gate, c), multiply(in_gate, candidate));
      h = multiply(out_gate, ad::tanh(c));
      states.push_back(h);
    }
    return ad::stack_steps(states);
  }

 private:
  ad::Tensor<T> input_weight_, hidden_weight_, bias_;
};

/// SAKT-style backbone: one causal multi-head attention block in which the
/// next question attends over past interactions, followed by a feed-forward
/// layer, both with residual connections.
template <typename T>
class AttentionKT final : public KTModel<T> {
 public:
  explicit AttentionKT(ModelConfig config) : KTModel<T>(std::move(config)) {
    const std::size_t d = this->config_.dim();
    const auto seed = this->config_.seed;
    position_ = this->embedding("attn.position", this->config_.max_len, d);
    for (const char* name : {"attn.query", "attn.key", "attn.value", "attn.output"}) {
      proj_weight_.push_back(this->params_.weight(std::string(name) + ".weight", d, d, seed));
      proj_bias_.push_back(this->params_.bias(std::string(name) + ".bias", d));
    }
    ffn_in_weight_ = this->params_.weight("ffn.in.weight", d, d, seed);
    ffn_in_bias_ = this->params_.bias("ffn.in.bias", d);
    ffn_out_weight_ = this->params_.weight("ffn.out.weight", d, d, seed);
    ffn_out_bias_ = this->params_.bias("ffn.out.bias", d);
    this->build_heads();

    // Additive mask: position t sees keys 0..t.
    const std::size_t len = this->config_.max_len;
    std::vector<T> mask(len * len, T(0));
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = i + 1; j < len; ++j) mask[i * len + j] = T(-1e9);
    causal_mask_ = ad::Tensor<T>::from({len, len}, std::move(mask));
  }

 protected:
  ad::Tensor<T> encode(const ad::Tensor<T>& interactions, const ad::Tensor<T>& query, const Batch& batch,
                       ForwardContext ctx) override {
    const std::size_t d = this->config_.dim();
    const std::size_t heads = this->config_.attention_heads;
    const std::size_t hd = d / heads;
    const std::size_t n = batch.num_sequences, len = batch.max_len;
    auto x = this->dropout(add(interactions, position_), ctx);

    auto project = [&](const ad::Tensor<T>& in, std::size_t which) {
      auto p = add(ad::matmul(in, proj_weight_[which]), proj_bias_[which]);
      return ad::permute(ad::reshape(p, {n, len, heads, hd}), {0, 2, 1, 3});  // [B, H, L, hd]
    };
    auto q = project(query, 0);
    auto k = project(x, 1);
    auto v = project(x, 2);
    auto scores = ad::scale(ad::batched_matmul(q, k, true), T(1.0 / std::sqrt(static_cast<double>(hd))));
    auto weights = ad::softmax(add(scores, causal_mask_));
    auto attended = ad::reshape(ad::permute(ad::batched_matmul(weights, v), {0, 2, 1, 3}), {n, len, d});
    auto out = this->dropout(add(ad::matmul(attended, proj_weight_[3]), proj_bias_[3]), ctx);
    auto resid = add(out, query);
    auto ffn = ad::tanh(add(ad::matmul(resid, ffn_in_weight_), ffn_in_bias_));
    ffn = this->dropout(add(ad::matmul(ffn, ffn_out_weight_), ffn_out_bias_), ctx);
    return add(resid, ffn);
  }

 private:
  ad::Tensor<T> position_;
  std::vector<ad::Tensor<T>> proj_weight_, proj_bias_;
  ad::Tensor<T> ffn_in_weight_, ffn_in_bias_, ffn_out_weight_, ffn_out_bias_;
  ad::Tensor<T> causal_mask_;
};

template <typename T>
std::unique_ptr<KTModel<T>> build_model(const ModelConfig& config) {
  if (config.backbone == Backbone::recurrent) return std::make_unique<RecurrentKT<T>>(config);
  return std::make_unique<AttentionKT<T>>(config);
}

}  // namespace statuskt
