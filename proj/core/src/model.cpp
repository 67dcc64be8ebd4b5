#include "factsum/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "factsum/error.hpp"
#include "factsum/random.hpp"

namespace factsum {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

std::string_view to_string(GuidanceMode mode) {
  switch (mode) {
    case GuidanceMode::kVanilla:
      return "vanilla";
    case GuidanceMode::kEntities:
      return "entities";
    case GuidanceMode::kEntitiesFacts:
      return "entities+facts";
  }
  return "vanilla";
}

GuidanceMode parse_guidance_mode(std::string_view text) {
  if (text == "vanilla") return GuidanceMode::kVanilla;
  if (text == "entities") return GuidanceMode::kEntities;
  if (text == "entities+facts") return GuidanceMode::kEntitiesFacts;
  throw Error(ErrorKind::kConfig, "unknown guidance mode \"" + std::string(text) +
                                      "\" (expected vanilla|entities|entities+facts)");
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary()
    : Vocabulary(from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]", "[ENT]"})) {}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  static const char* kSpecial[kNumSpecial] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                              "[BOS]", "[EOS]", "[ENT]"};
  if (tokens.size() < static_cast<std::size_t>(kNumSpecial)) {
    throw Error(ErrorKind::kInvalidInput, "vocabulary is missing special tokens");
  }
  for (int i = 0; i < kNumSpecial; ++i) {
    if (tokens[static_cast<std::size_t>(i)] != kSpecial[i]) {
      throw Error(ErrorKind::kInvalidInput, std::string("vocabulary id ") + std::to_string(i) +
                                                " must be " + kSpecial[i]);
    }
  }
  Vocabulary v{Unchecked{}};
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.ids_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw Error(ErrorKind::kInvalidInput, "duplicate vocabulary token \"" + v.tokens_[i] + "\"");
    }
  }
  return v;
}

Vocabulary Vocabulary::build(const std::map<std::string, int>& counts, int min_count) {
  std::vector<std::pair<std::string, int>> kept;
  for (const auto& [tok, n] : counts) {
    if (n >= min_count) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = Vocabulary().tokens();
  for (auto& [tok, n] : kept) {
    if (std::find(tokens.begin(), tokens.begin() + kNumSpecial, tok) != tokens.begin() + kNumSpecial) {
      continue;
    }
    tokens.push_back(tok);
  }
  return from_tokens(std::move(tokens));
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw Error(ErrorKind::kPrecondition, "token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  for (int i : ids) {
    if (!is_special(i)) out.push_back(token(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kConfig, "model: " + m); };
  if (d_model < 1 || n_heads < 1 || d_ff < 1) fail("d_model, n_heads and d_ff must be >= 1");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (n_enc_layers < 1 || n_dec_layers < 1) fail("layer counts must be >= 1");
  if (chunk_len < 8) fail("chunk_len must be >= 8");
  if (max_src < 2 || max_tgt < 2) fail("max_src and max_tgt must be >= 2");
  if (vocab_size < Vocabulary::kNumSpecial) fail("vocab_size must cover the special tokens");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be > 0");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},       {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},             {"n_enc_layers", c.n_enc_layers},
          {"n_dec_layers", c.n_dec_layers}, {"chunk_len", c.chunk_len},
          {"max_src", c.max_src},       {"max_tgt", c.max_tgt},
          {"vocab_size", c.vocab_size}, {"layer_norm_eps", c.layer_norm_eps}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.n_enc_layers = j.at("n_enc_layers").get<int>();
    c.n_dec_layers = j.at("n_dec_layers").get<int>();
    c.chunk_len = j.at("chunk_len").get<int>();
    c.max_src = j.at("max_src").get<int>();
    c.max_tgt = j.at("max_tgt").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, std::string("model config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

Parameter make(std::string name, int rows, int cols) {
  return Parameter{std::move(name), Matrix::Zero(rows, cols)};
}

AttentionParams make_attention(const std::string& prefix, int d) {
  return AttentionParams{make(prefix + ".wq", d, d), make(prefix + ".bq", 1, d),
                         make(prefix + ".wk", d, d), make(prefix + ".bk", 1, d),
                         make(prefix + ".wv", d, d), make(prefix + ".bv", 1, d),
                         make(prefix + ".wo", d, d), make(prefix + ".bo", 1, d)};
}

LayerNormParams make_norm(const std::string& prefix, int d) {
  LayerNormParams n{make(prefix + ".gain", 1, d), make(prefix + ".bias", 1, d)};
  n.gain.value.setOnes();
  return n;
}

FeedForwardParams make_ffn(const std::string& prefix, int d, int ff) {
  return FeedForwardParams{make(prefix + ".w1", d, ff), make(prefix + ".b1", 1, ff),
                           make(prefix + ".w2", ff, d), make(prefix + ".b2", 1, d)};
}

void push(std::vector<Parameter*>& out, AttentionParams& a) {
  for (Parameter* p : {&a.wq, &a.bq, &a.wk, &a.bk, &a.wv, &a.bv, &a.wo, &a.bo}) out.push_back(p);
}
void push(std::vector<Parameter*>& out, LayerNormParams& n) {
  out.push_back(&n.gain);
  out.push_back(&n.bias);
}
void push(std::vector<Parameter*>& out, FeedForwardParams& f) {
  for (Parameter* p : {&f.w1, &f.b1, &f.w2, &f.b2}) out.push_back(p);
}

bool is_bias_or_norm(const Parameter& p) {
  const std::string& n = p.name;
  auto ends_with = [&](std::string_view s) {
    return n.size() >= s.size() && n.compare(n.size() - s.size(), s.size(), s) == 0;
  };
  return ends_with(".gain") || ends_with(".bias") || ends_with("_b") || ends_with(".bq") ||
         ends_with(".bk") || ends_with(".bv") || ends_with(".bo") || ends_with(".b1") ||
         ends_with(".b2");
}

}  // namespace

ModelParameters ModelParameters::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.d_model;
  ModelParameters p;
  p.token_embedding = make("token_embedding", cfg.vocab_size, d);
  p.encoder_positions = make("encoder_positions", cfg.chunk_len, d);
  p.decoder_positions = make("decoder_positions", cfg.max_tgt, d);
  for (int l = 0; l < cfg.n_enc_layers; ++l) {
    std::string pre = "encoder." + std::to_string(l);
    p.encoder.push_back(EncoderLayerParams{make_attention(pre + ".self_attn", d),
                                           make_norm(pre + ".norm1", d),
                                           make_ffn(pre + ".ffn", d, cfg.d_ff),
                                           make_norm(pre + ".norm2", d)});
  }
  for (int l = 0; l < cfg.n_dec_layers; ++l) {
    std::string pre = "decoder." + std::to_string(l);
    p.decoder.push_back(DecoderLayerParams{
        make_attention(pre + ".self_attn", d), make_norm(pre + ".norm1", d),
        make_attention(pre + ".guidance_attn", d), make_norm(pre + ".norm2", d),
        make_attention(pre + ".source_attn", d), make_norm(pre + ".norm3", d),
        make_ffn(pre + ".ffn", d, cfg.d_ff), make_norm(pre + ".norm4", d)});
  }
  p.chunk_proj_w = make("chunk_proj_w", d, d);
  p.chunk_proj_b = make("chunk_proj_b", 1, d);
  p.guidance_proj_w = make("guidance_proj_w", d, d);
  p.guidance_proj_b = make("guidance_proj_b", 1, d);
  p.output_w = make("output_w", d, cfg.vocab_size);
  p.output_b = make("output_b", 1, cfg.vocab_size);
  return p;
}

ModelParameters ModelParameters::initialize(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParameters p = zeros(cfg);
  SplitMix64 rng(seed);
  for (Parameter* param : p.list()) {
    Matrix& v = param->value;
    if (param->name == "token_embedding" || param->name == "encoder_positions" ||
        param->name == "decoder_positions") {
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = 0.1 * rng.normal();
    } else if (!is_bias_or_norm(*param)) {
      double limit = std::sqrt(6.0 / static_cast<double>(v.rows() + v.cols()));
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform(-limit, limit);
    }
  }
  return p;
}

std::vector<Parameter*> ModelParameters::list() {
  std::vector<Parameter*> out{&token_embedding, &encoder_positions, &decoder_positions};
  for (EncoderLayerParams& l : encoder) {
    push(out, l.self_attn);
    push(out, l.norm1);
    push(out, l.ffn);
    push(out, l.norm2);
  }
  for (DecoderLayerParams& l : decoder) {
    push(out, l.self_attn);
    push(out, l.norm1);
    push(out, l.guidance_attn);
    push(out, l.norm2);
    push(out, l.source_attn);
    push(out, l.norm3);
    push(out, l.ffn);
    push(out, l.norm4);
  }
  for (Parameter* q : {&chunk_proj_w, &chunk_proj_b, &guidance_proj_w, &guidance_proj_b,
                       &output_w, &output_b}) {
    out.push_back(q);
  }
  return out;
}

std::vector<const Parameter*> ModelParameters::list() const {
  auto mutable_list = const_cast<ModelParameters*>(this)->list();
  return {mutable_list.begin(), mutable_list.end()};
}

bool ModelParameters::all_finite() const {
  for (const Parameter* p : list()) {
    if (!p->value.allFinite()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Framing

std::vector<int> frame_source(std::span<const std::string> tokens, const Vocabulary& vocab,
                              int max_src) {
  std::size_t body = std::min<std::size_t>(tokens.size(), static_cast<std::size_t>(max_src - 2));
  std::vector<int> ids{Vocabulary::kCls};
  for (std::size_t i = 0; i < body; ++i) ids.push_back(vocab.id(tokens[i]));
  ids.push_back(Vocabulary::kSep);
  return ids;
}

std::vector<int> frame_target(std::span<const std::string> tokens, const Vocabulary& vocab,
                              int max_tgt) {
  std::size_t body = std::min<std::size_t>(tokens.size(), static_cast<std::size_t>(max_tgt - 2));
  std::vector<int> ids{Vocabulary::kBos};
  for (std::size_t i = 0; i < body; ++i) ids.push_back(vocab.id(tokens[i]));
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::vector<int> frame_guidance(const GuidanceSegments& segments, const Vocabulary& vocab) {
  std::vector<int> ids{Vocabulary::kCls};
  for (std::size_t i = 0; i < segments.facts.size(); ++i) {
    if (i > 0) ids.push_back(Vocabulary::kSep);
    for (const std::string& t : segments.facts[i]) ids.push_back(vocab.id(t));
  }
  ids.push_back(Vocabulary::kSep);
  ids.push_back(Vocabulary::kCls);
  for (std::size_t i = 0; i < segments.entities.size(); ++i) {
    if (i > 0) ids.push_back(Vocabulary::kEnt);
    for (const std::string& t : segments.entities[i]) ids.push_back(vocab.id(t));
  }
  ids.push_back(Vocabulary::kSep);
  return ids;
}

// ---------------------------------------------------------------------------
// Graphs

std::vector<std::uint8_t> valid_positions(std::span<const int> ids) {
  std::vector<std::uint8_t> valid(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) valid[i] = ids[i] != Vocabulary::kPad ? 1 : 0;
  return valid;
}

namespace {

Var affine(Tape& t, Var x, const Parameter& w, const Parameter& b) {
  return ad::add_row(t, ad::matmul(t, x, t.parameter(w)), t.parameter(b));
}

Var norm(Tape& t, Var x, const LayerNormParams& n, double eps) {
  return ad::layer_norm(t, x, t.parameter(n.gain), t.parameter(n.bias), eps);
}

Var feed_forward(Tape& t, Var x, const FeedForwardParams& f) {
  return affine(t, ad::gelu(t, affine(t, x, f.w1, f.b1)), f.w2, f.b2);
}

Var positions(Tape& t, const Parameter& table, int count) {
  std::vector<int> idx(static_cast<std::size_t>(count));
  std::iota(idx.begin(), idx.end(), 0);
  return ad::gather_rows(t, t.parameter(table), idx);
}

}  // namespace

Var attention(Tape& t, const AttentionParams& p, Var query_in, Var kv_in, const ad::Mask& mask,
              int n_heads, ad::AttentionLog* log) {
  Var q = affine(t, query_in, p.wq, p.bq);
  Var k = affine(t, kv_in, p.wk, p.bk);
  Var v = affine(t, kv_in, p.wv, p.bv);
  const int d = static_cast<int>(t.value(q).cols());
  const int dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Var qh = n_heads == 1 ? q : ad::slice_cols(t, q, h * dh, dh);
    Var kh = n_heads == 1 ? k : ad::slice_cols(t, k, h * dh, dh);
    Var vh = n_heads == 1 ? v : ad::slice_cols(t, v, h * dh, dh);
    Var scores = ad::scale(t, ad::matmul_nt(t, qh, kh), inv_sqrt);
    Var weights = ad::masked_softmax(t, scores, mask);
    if (log != nullptr) log->push_back(ad::AttentionRecord{t.value(weights), mask});
    heads.push_back(ad::matmul(t, weights, vh));
  }
  Var merged = n_heads == 1 ? heads.front() : ad::concat_cols(t, heads);
  return affine(t, merged, p.wo, p.bo);
}

Var encode_stack(Tape& t, const ModelConfig& cfg, const ModelParameters& p,
                 std::span<const int> ids, ad::AttentionLog* log) {
  if (ids.empty()) throw Error(ErrorKind::kPrecondition, "encode: empty token list");
  std::vector<Var> chunks;
  for (std::size_t start = 0; start < ids.size(); start += static_cast<std::size_t>(cfg.chunk_len)) {
    std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(cfg.chunk_len), ids.size() - start);
    std::span<const int> chunk = ids.subspan(start, len);
    std::vector<std::uint8_t> valid = valid_positions(chunk);
    if (std::none_of(valid.begin(), valid.end(), [](std::uint8_t b) { return b != 0; })) {
      chunks.push_back(t.constant(Matrix::Zero(static_cast<Eigen::Index>(len), cfg.d_model)));
      continue;
    }
    Var x = ad::add(t, ad::gather_rows(t, t.parameter(p.token_embedding), chunk),
                    positions(t, p.encoder_positions, static_cast<int>(len)));
    ad::Mask mask = ad::Mask::keys(static_cast<int>(len), valid);
    for (const EncoderLayerParams& layer : p.encoder) {
      Var a = attention(t, layer.self_attn, x, x, mask, cfg.n_heads, log);
      x = norm(t, ad::add(t, x, a), layer.norm1, cfg.layer_norm_eps);
      Var f = feed_forward(t, x, layer.ffn);
      x = norm(t, ad::add(t, x, f), layer.norm2, cfg.layer_norm_eps);
    }
    chunks.push_back(x);
  }
  return chunks.size() == 1 ? chunks.front() : ad::concat_rows(t, chunks);
}

Var encode_source_graph(Tape& t, const ModelConfig& cfg, const ModelParameters& p,
                        std::span<const int> ids, ad::AttentionLog* log) {
  if (static_cast<int>(ids.size()) > cfg.max_src) {
    throw Error(ErrorKind::kPrecondition, "encode_source: input exceeds max_src");
  }
  return affine(t, encode_stack(t, cfg, p, ids, log), p.chunk_proj_w, p.chunk_proj_b);
}

Var encode_guidance_graph(Tape& t, const ModelConfig& cfg, const ModelParameters& p,
                          std::span<const int> ids, ad::AttentionLog* log) {
  return affine(t, encode_stack(t, cfg, p, ids, log), p.guidance_proj_w, p.guidance_proj_b);
}

Var decode_graph(Tape& t, const ModelConfig& cfg, const ModelParameters& p,
                 std::span<const int> prefix, const DecoderMemory& memory,
                 ad::AttentionLog* log) {
  if (prefix.empty() || prefix.front() != Vocabulary::kBos) {
    throw Error(ErrorKind::kPrecondition, "decode: prefix must start with [BOS]");
  }
  if (static_cast<int>(prefix.size()) > cfg.max_tgt) {
    throw Error(ErrorKind::kPrecondition, "decode: prefix exceeds max_tgt");
  }
  const int len = static_cast<int>(prefix.size());
  Var x = ad::add(t, ad::gather_rows(t, t.parameter(p.token_embedding), prefix),
                  positions(t, p.decoder_positions, len));
  ad::Mask causal = ad::Mask::causal(len);
  ad::Mask source_mask = ad::Mask::keys(len, memory.source_valid);
  std::optional<ad::Mask> guidance_mask;
  if (memory.guidance) guidance_mask = ad::Mask::keys(len, memory.guidance_valid);
  for (const DecoderLayerParams& layer : p.decoder) {
    Var a = attention(t, layer.self_attn, x, x, causal, cfg.n_heads, log);
    x = norm(t, ad::add(t, x, a), layer.norm1, cfg.layer_norm_eps);
    if (memory.guidance) {
      Var g = attention(t, layer.guidance_attn, x, *memory.guidance, *guidance_mask, cfg.n_heads, log);
      x = norm(t, ad::add(t, x, g), layer.norm2, cfg.layer_norm_eps);
    }
    Var s = attention(t, layer.source_attn, x, memory.source, source_mask, cfg.n_heads, log);
    x = norm(t, ad::add(t, x, s), layer.norm3, cfg.layer_norm_eps);
    Var f = feed_forward(t, x, layer.ffn);
    x = norm(t, ad::add(t, x, f), layer.norm4, cfg.layer_norm_eps);
  }
  return affine(t, x, p.output_w, p.output_b);
}

EncodedStates encode_source(std::span<const int> ids, const ModelConfig& cfg,
                            const ModelParameters& p, ad::AttentionLog* log) {
  Tape t(false);
  Var out = encode_source_graph(t, cfg, p, ids, log);
  return EncodedStates{t.value(out), valid_positions(ids)};
}

EncodedStates encode_guidance(std::span<const int> ids, const ModelConfig& cfg,
                              const ModelParameters& p, ad::AttentionLog* log) {
  Tape t(false);
  Var out = encode_guidance_graph(t, cfg, p, ids, log);
  return EncodedStates{t.value(out), valid_positions(ids)};
}

Matrix decode_step(std::span<const int> prefix, const EncodedStates& source,
                   const EncodedStates* guidance, const ModelConfig& cfg,
                   const ModelParameters& p, ad::AttentionLog* log) {
  Tape t(false);
  DecoderMemory memory;
  memory.source = t.constant(source.states);
  memory.source_valid = source.valid;
  if (guidance != nullptr) {
    memory.guidance = t.constant(guidance->states);
    memory.guidance_valid = guidance->valid;
  }
  Var logits = decode_graph(t, cfg, p, prefix, memory, log);
  return t.value(logits);
}

}  // namespace factsum
