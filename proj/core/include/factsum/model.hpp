#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "factsum/tensor.hpp"

namespace factsum {

// Which guidance signals the summarizer is trained with.
enum class GuidanceMode { kVanilla, kEntities, kEntitiesFacts };

std::string_view to_string(GuidanceMode mode);
GuidanceMode parse_guidance_mode(std::string_view text);

// Word-level vocabulary. Special tokens occupy fixed ids 0..6.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kBos = 4;
  static constexpr int kEos = 5;
  static constexpr int kEnt = 6;
  static constexpr int kNumSpecial = 7;

  Vocabulary();

  // Specials first, then every token seen at least `min_count` times, by
  // descending count and then lexicographically.
  static Vocabulary build(const std::map<std::string, int>& counts, int min_count);

  // Full token list including the specials at their fixed ids.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecial; }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  // Drops special tokens.
  std::vector<std::string> decode(std::span<const int> ids) const;

 private:
  struct Unchecked {};
  explicit Vocabulary(Unchecked) {}

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 128;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int chunk_len = 512;
  int max_src = 2048;
  int max_tgt = 210;
  int vocab_size = 0;
  double layer_norm_eps = 1e-5;

  // Throws kConfig unless d_model % n_heads == 0, chunk_len >= 8 and all
  // sizes are positive.
  void validate() const;
  int d_head() const { return d_model / n_heads; }
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct AttentionParams {
  ad::Parameter wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LayerNormParams {
  ad::Parameter gain, bias;
};

struct FeedForwardParams {
  ad::Parameter w1, b1, w2, b2;
};

struct EncoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams norm1;
  FeedForwardParams ffn;
  LayerNormParams norm2;
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams norm1;
  AttentionParams guidance_attn;
  LayerNormParams norm2;
  AttentionParams source_attn;
  LayerNormParams norm3;
  FeedForwardParams ffn;
  LayerNormParams norm4;
};

struct ModelParameters {
  ad::Parameter token_embedding;      // vocab x d
  ad::Parameter encoder_positions;    // chunk_len x d, reset per chunk
  ad::Parameter decoder_positions;    // max_tgt x d
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;
  ad::Parameter chunk_proj_w, chunk_proj_b;        // source re-projection after chunking
  ad::Parameter guidance_proj_w, guidance_proj_b;  // guidance affine projection
  ad::Parameter output_w, output_b;                // d -> vocab

  // Shapes from `cfg`; weights Xavier-uniform, embeddings N(0, 0.1^2),
  // biases 0, layer-norm gains 1.
  static ModelParameters initialize(const ModelConfig& cfg, std::uint64_t seed);
  // Same shapes, every value zero.
  static ModelParameters zeros(const ModelConfig& cfg);

  // Stable enumeration order used by optimizers and checkpoints.
  std::vector<ad::Parameter*> list();
  std::vector<const ad::Parameter*> list() const;

  bool all_finite() const;
};

// Encoder output rows with the validity of each position.
struct EncodedStates {
  ad::Matrix states;
  std::vector<std::uint8_t> valid;
};

// [CLS] tokens [SEP], truncated so the result has at most max_src ids.
std::vector<int> frame_source(std::span<const std::string> tokens, const Vocabulary& vocab,
                              int max_src);

// [BOS] tokens [EOS], truncated so the result has at most max_tgt ids.
std::vector<int> frame_target(std::span<const std::string> tokens, const Vocabulary& vocab,
                              int max_tgt);

struct GuidanceSegments {
  std::vector<std::vector<std::string>> facts;
  std::vector<std::vector<std::string>> entities;
};

// [CLS] f1 [SEP] ... fk [SEP] [CLS] e1 [ENT] ... em [SEP]; the empty bundle
// yields [CLS] [SEP] [CLS] [SEP].
std::vector<int> frame_guidance(const GuidanceSegments& segments, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Differentiable graph builders (training and reference forward pass).

// Multi-head attention: per head softmax(Q K^T / sqrt(d_head) + mask) V,
// heads concatenated and output-projected.
ad::Var attention(ad::Tape& t, const AttentionParams& p, ad::Var query_in, ad::Var kv_in,
                  const ad::Mask& mask, int n_heads, ad::AttentionLog* log = nullptr);

// Post-norm encoder stack applied to independent chunks of at most
// chunk_len ids; chunk outputs concatenated in order. [PAD] ids are masked
// as keys; an all-padding chunk yields zero rows.
ad::Var encode_stack(ad::Tape& t, const ModelConfig& cfg, const ModelParameters& p,
                     std::span<const int> ids, ad::AttentionLog* log = nullptr);

ad::Var encode_source_graph(ad::Tape& t, const ModelConfig& cfg, const ModelParameters& p,
                            std::span<const int> ids, ad::AttentionLog* log = nullptr);

ad::Var encode_guidance_graph(ad::Tape& t, const ModelConfig& cfg, const ModelParameters& p,
                              std::span<const int> ids, ad::AttentionLog* log = nullptr);

struct DecoderMemory {
  ad::Var source;
  std::vector<std::uint8_t> source_valid;
  std::optional<ad::Var> guidance;  // absent: guidance sublayer skipped
  std::vector<std::uint8_t> guidance_valid;
};

// Decoder layers: masked self-attention, cross-attention to guidance,
// cross-attention to the source, feed-forward; each norm(h + sublayer(h)).
// Returns prefix.size() x vocab_size logits.
ad::Var decode_graph(ad::Tape& t, const ModelConfig& cfg, const ModelParameters& p,
                     std::span<const int> prefix, const DecoderMemory& memory,
                     ad::AttentionLog* log = nullptr);

// ---------------------------------------------------------------------------
// Value-level wrappers.

std::vector<std::uint8_t> valid_positions(std::span<const int> ids);

EncodedStates encode_source(std::span<const int> ids, const ModelConfig& cfg,
                            const ModelParameters& p, ad::AttentionLog* log = nullptr);
EncodedStates encode_guidance(std::span<const int> ids, const ModelConfig& cfg,
                              const ModelParameters& p, ad::AttentionLog* log = nullptr);

// Logits at every prefix position. `guidance` may be null (vanilla model).
ad::Matrix decode_step(std::span<const int> prefix, const EncodedStates& source,
                       const EncodedStates* guidance, const ModelConfig& cfg,
                       const ModelParameters& p, ad::AttentionLog* log = nullptr);

// Incremental decoder with per-layer key/value caches; feeds one token at a
// time and returns next-token logits. Numerically equivalent to the last row
// of decode_step on the same prefix.
class IncrementalDecoder {
 public:
  struct Cache {
    std::vector<ad::Matrix> keys;    // per layer, one row per fed position
    std::vector<ad::Matrix> values;
    int length = 0;
  };

  IncrementalDecoder(const ModelConfig& cfg, const ModelParameters& p,
                     const EncodedStates& source, const EncodedStates* guidance);

  Cache start() const;
  Eigen::RowVectorXd step(Cache& cache, int token) const;

 private:
  struct CrossMemory {
    std::vector<ad::Matrix> keys, values;  // per layer
    std::vector<std::uint8_t> valid;
  };

  const ModelConfig& cfg_;
  const ModelParameters& p_;
  CrossMemory source_;
  std::optional<CrossMemory> guidance_;
};

}  // namespace factsum
