#pragma once
/*
 * Self-attention encoder: fixed sinusoidal positional encoding, multi-head
 * scaled dot-product attention and post-norm encoder layers.
 *
 * Sequences are [L, model_dim] or batched [B, L, model_dim].
 */

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lensformer/init.hpp"
#include "lensformer/ops.hpp"

namespace lensformer {

inline constexpr double kPositionalBase = 12800.0;

template <typename T>
struct PositionalEncoding {
  std::size_t d_model = 0;
  std::size_t max_len = 0;
  double base = kPositionalBase;
  Tensor<T> table;  // [max_len, d_model]

  /// First `len` rows, ready to broadcast-add onto [.., len, d_model].
  Tensor<T> rows(std::size_t len) const {
    if (len > max_len) throw DimensionError("sequence length " + std::to_string(len) + " exceeds max_len " + std::to_string(max_len));
    return Tensor<T>({len, d_model}, std::vector<T>(table.data().begin(), table.data().begin() + len * d_model));
  }
};

/// table[pos, 2i] = sin(pos / base^(2i/d)), table[pos, 2i+1] = cos(same angle).
template <typename T>
PositionalEncoding<T> positional_encoding(std::size_t d_model, std::size_t max_len, double base = kPositionalBase) {
  if (d_model == 0 || d_model % 2 != 0) throw ConfigError("positional encoding needs an even d_model, got " + std::to_string(d_model));
  if (max_len < 1) throw ConfigError("positional encoding needs max_len >= 1");
  PositionalEncoding<T> pe{d_model, max_len, base, Tensor<T>({max_len, d_model})};
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t c = 0; c < d_model; c += 2) {
      const double angle = static_cast<double>(pos) / std::pow(base, static_cast<double>(c) / static_cast<double>(d_model));
      pe.table[pos * d_model + c] = static_cast<T>(std::sin(angle));
      pe.table[pos * d_model + c + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

struct AttentionConfig {
  std::size_t num_heads = 1;
  std::size_t head_dim = 1;
  std::size_t model_dim = 1;
  // When true, model_dim must equal num_heads * head_dim (heads split the
  // model dimension). When false each head projects to its own head_dim.
  bool split_model_dim = true;
  // Layer-norm placement: false gives LN(x + f(x)), true gives x + f(LN(x)).
  bool pre_norm = true;

  void validate() const {
    if (num_heads == 0 || head_dim == 0 || model_dim == 0) throw ConfigError("attention: heads, head_dim and model_dim must be positive");
    if (split_model_dim && num_heads * head_dim != model_dim) {
      throw ConfigError("attention: model_dim " + std::to_string(model_dim) + " is not num_heads " + std::to_string(num_heads) +
                        " x head_dim " + std::to_string(head_dim));
    }
  }
};

template <typename T>
struct AttentionHead {
  Tensor<T> wq, bq, wk, bk, wv, bv;  // [model_dim, head_dim] / [head_dim]
};

template <typename T>
struct EncoderLayer {
  AttentionConfig cfg;
  std::size_t ffn_hidden = 0;
  std::vector<AttentionHead<T>> heads;
  Tensor<T> wo, bo;  // [H*head_dim, model_dim] / [model_dim]
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor<T> ln2_gamma, ln2_beta;

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    each(*this, prefix, fn);
  }
  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) const {
    each(*this, prefix, fn);
  }

 private:
  template <typename Self, typename Fn>
  static void each(Self& self, const std::string& prefix, Fn& fn) {
    auto& heads = self.heads;
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const std::string p = prefix + "attn.head" + std::to_string(h) + ".";
      fn(p + "wq", heads[h].wq);
      fn(p + "bq", heads[h].bq);
      fn(p + "wk", heads[h].wk);
      fn(p + "bk", heads[h].bk);
      fn(p + "wv", heads[h].wv);
      fn(p + "bv", heads[h].bv);
    }
    fn(prefix + "attn.wo", self.wo);
    fn(prefix + "attn.bo", self.bo);
    fn(prefix + "ln1.gamma", self.ln1_gamma);
    fn(prefix + "ln1.beta", self.ln1_beta);
    fn(prefix + "ffn.w1", self.ffn_w1);
    fn(prefix + "ffn.b1", self.ffn_b1);
    fn(prefix + "ffn.w2", self.ffn_w2);
    fn(prefix + "ffn.b2", self.ffn_b2);
    fn(prefix + "ln2.gamma", self.ln2_gamma);
    fn(prefix + "ln2.beta", self.ln2_beta);
  }
};

/// Xavier-initialised layer; biases zero, layer-norm affine identity.
template <typename T>
EncoderLayer<T> make_encoder_layer(const AttentionConfig& cfg, std::size_t ffn_hidden, ParamInit<T>& init) {
  cfg.validate();
  if (ffn_hidden == 0) ffn_hidden = 2 * cfg.model_dim;
  const std::size_t d = cfg.model_dim, dk = cfg.head_dim;
  EncoderLayer<T> layer;
  layer.cfg = cfg;
  layer.ffn_hidden = ffn_hidden;
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    AttentionHead<T> head;
    head.wq = init.xavier({d, dk}, d, dk);
    head.bq = init.filled({dk}, T(0));
    head.wk = init.xavier({d, dk}, d, dk);
    head.bk = init.filled({dk}, T(0));
    head.wv = init.xavier({d, dk}, d, dk);
    head.bv = init.filled({dk}, T(0));
    layer.heads.push_back(std::move(head));
  }
  layer.wo = init.xavier({cfg.num_heads * dk, d}, cfg.num_heads * dk, d);
  layer.bo = init.filled({d}, T(0));
  layer.ln1_gamma = init.filled({d}, T(1));
  layer.ln1_beta = init.filled({d}, T(0));
  layer.ffn_w1 = init.xavier({d, ffn_hidden}, d, ffn_hidden);
  layer.ffn_b1 = init.filled({ffn_hidden}, T(0));
  layer.ffn_w2 = init.xavier({ffn_hidden, d}, ffn_hidden, d);
  layer.ffn_b2 = init.filled({d}, T(0));
  layer.ln2_gamma = init.filled({d}, T(1));
  layer.ln2_beta = init.filled({d}, T(0));
  return layer;
}

/// softmax(Q K^T / sqrt(d_k)) V over the last two axes.
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() < 2 || q.rank() != k.rank() || k.rank() != v.rank() || q.shape().back() != k.shape().back() ||
      k.shape()[k.rank() - 2] != v.shape()[v.rank() - 2]) {
    throw DimensionError("attention: incompatible Q" + to_string(q.shape()) + " K" + to_string(k.shape()) + " V" +
                         to_string(v.shape()));
  }
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(q.shape().back()));
  auto logits = scale(matmul(q, transpose(k)), inv_sqrt_dk);
  return matmul(softmax(logits, -1), v);
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const EncoderLayer<T>& w) {
  const auto& cfg = w.cfg;
  if (x.rank() < 2 || x.shape().back() != cfg.model_dim) {
    throw DimensionError("multi-head attention: input " + to_string(x.shape()) + " does not end in model_dim " +
                         std::to_string(cfg.model_dim));
  }
  if (w.heads.size() != cfg.num_heads) throw DimensionError("multi-head attention: weight/head count mismatch");
  std::vector<Tensor<T>> outs;
  outs.reserve(cfg.num_heads);
  for (const auto& h : w.heads) {
    auto q = dense(x, h.wq, h.bq);
    auto k = dense(x, h.wk, h.bk);
    auto v = dense(x, h.wv, h.bv);
    outs.push_back(scaled_dot_attention(q, k, v));
  }
  auto joined = outs.size() == 1 ? outs.front() : concat(outs);
  return dense(joined, w.wo, w.bo);
}

/// Post-norm block: y = LN(x + MHA(x)); out = LN(y + FFN(y)).
template <typename T>
Tensor<T> encoder_layer_forward(const Tensor<T>& x, const EncoderLayer<T>& layer) {
  auto ffn = [&](const Tensor<T>& h) { return dense(elu(dense(h, layer.ffn_w1, layer.ffn_b1)), layer.ffn_w2, layer.ffn_b2); };
  if (layer.cfg.pre_norm) {
    auto y = add(x, multi_head_attention(layer_norm(x, layer.ln1_gamma, layer.ln1_beta), layer));
    return add(y, ffn(layer_norm(y, layer.ln2_gamma, layer.ln2_beta)));
  }
  auto y = layer_norm(add(x, multi_head_attention(x, layer)), layer.ln1_gamma, layer.ln1_beta);
  return layer_norm(add(y, ffn(y)), layer.ln2_gamma, layer.ln2_beta);
}

template <typename T>
Tensor<T> encoder_stack_forward(const Tensor<T>& x, const std::vector<EncoderLayer<T>>& layers) {
  if (layers.empty()) throw ConfigError("encoder stack needs at least one layer");
  Tensor<T> h = x;
  for (const auto& layer : layers) h = encoder_layer_forward(h, layer);
  return h;
}

}  // namespace lensformer
