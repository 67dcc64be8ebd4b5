#include <cmath>

#include "factsum/error.hpp"
#include "factsum/model.hpp"

namespace factsum {

using ad::Matrix;

namespace {

Matrix project(const Matrix& x, const ad::Parameter& w, const ad::Parameter& b) {
  Matrix out = x * w.value;
  out.rowwise() += b.value.row(0);
  return out;
}

// One query row against cached keys/values, all heads, output-projected.
Matrix attend(const Matrix& q, const Matrix& keys, const Matrix& values,
              const std::vector<std::uint8_t>* valid, const AttentionParams& p, int n_heads) {
  const int d = static_cast<int>(q.cols());
  const int dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix merged(1, d);
  ad::Mask mask(1, static_cast<int>(keys.rows()), true);
  if (valid != nullptr) mask = ad::Mask::keys(1, *valid);
  for (int h = 0; h < n_heads; ++h) {
    Matrix scores = q.middleCols(h * dh, dh) * keys.middleCols(h * dh, dh).transpose() * inv_sqrt;
    Matrix w = ad::softmax_rows(scores, &mask);
    merged.middleCols(h * dh, dh) = w * values.middleCols(h * dh, dh);
  }
  return project(merged, p.wo, p.bo);
}

void append_row(Matrix& m, const Matrix& row) {
  m.conservativeResize(m.rows() + 1, row.cols());
  m.row(m.rows() - 1) = row.row(0);
}

}  // namespace

IncrementalDecoder::IncrementalDecoder(const ModelConfig& cfg, const ModelParameters& p,
                                       const EncodedStates& source, const EncodedStates* guidance)
    : cfg_(cfg), p_(p) {
  auto build = [&](const EncodedStates& states, auto member) {
    CrossMemory mem;
    mem.valid = states.valid;
    for (const DecoderLayerParams& layer : p.decoder) {
      const AttentionParams& a = layer.*member;
      mem.keys.push_back(project(states.states, a.wk, a.bk));
      mem.values.push_back(project(states.states, a.wv, a.bv));
    }
    return mem;
  };
  source_ = build(source, &DecoderLayerParams::source_attn);
  if (guidance != nullptr) guidance_ = build(*guidance, &DecoderLayerParams::guidance_attn);
}

IncrementalDecoder::Cache IncrementalDecoder::start() const {
  Cache c;
  for (std::size_t l = 0; l < p_.decoder.size(); ++l) {
    c.keys.emplace_back(0, cfg_.d_model);
    c.values.emplace_back(0, cfg_.d_model);
  }
  return c;
}

Eigen::RowVectorXd IncrementalDecoder::step(Cache& cache, int token) const {
  if (cache.length >= cfg_.max_tgt) {
    throw Error(ErrorKind::kPrecondition, "decode: prefix exceeds max_tgt");
  }
  if (token < 0 || token >= cfg_.vocab_size) {
    throw Error(ErrorKind::kPrecondition, "decode: token id out of range");
  }
  const double eps = cfg_.layer_norm_eps;
  Matrix x = p_.token_embedding.value.row(token) + p_.decoder_positions.value.row(cache.length);
  for (std::size_t l = 0; l < p_.decoder.size(); ++l) {
    const DecoderLayerParams& layer = p_.decoder[l];
    const AttentionParams& sa = layer.self_attn;
    append_row(cache.keys[l], project(x, sa.wk, sa.bk));
    append_row(cache.values[l], project(x, sa.wv, sa.bv));
    Matrix a = attend(project(x, sa.wq, sa.bq), cache.keys[l], cache.values[l], nullptr, sa,
                      cfg_.n_heads);
    x = ad::layer_norm_value(x + a, layer.norm1.gain.value, layer.norm1.bias.value, eps);
    if (guidance_) {
      const AttentionParams& ga = layer.guidance_attn;
      Matrix g = attend(project(x, ga.wq, ga.bq), guidance_->keys[l], guidance_->values[l],
                        &guidance_->valid, ga, cfg_.n_heads);
      x = ad::layer_norm_value(x + g, layer.norm2.gain.value, layer.norm2.bias.value, eps);
    }
    const AttentionParams& ca = layer.source_attn;
    Matrix s = attend(project(x, ca.wq, ca.bq), source_.keys[l], source_.values[l],
                      &source_.valid, ca, cfg_.n_heads);
    x = ad::layer_norm_value(x + s, layer.norm3.gain.value, layer.norm3.bias.value, eps);
    Matrix hidden = project(x, layer.ffn.w1, layer.ffn.b1).unaryExpr(
        [](double v) { return ad::gelu_value(v); });
    Matrix f = project(hidden, layer.ffn.w2, layer.ffn.b2);
    x = ad::layer_norm_value(x + f, layer.norm4.gain.value, layer.norm4.bias.value, eps);
  }
  ++cache.length;
  return project(x, p_.output_w, p_.output_b).row(0);
}

}  // namespace factsum
