#pragma once
/*
 * Lens-finder models: convolutional backbone -> [HW, D] sequence -> fixed
 * positional encoding -> encoder stack -> flattened FFN head -> one sigmoid
 * neuron. Two towers can run side by side; their penultimate features are
 * concatenated before the output neuron.
 */

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lensformer/init.hpp"
#include "lensformer/json_util.hpp"
#include "lensformer/transformer.hpp"

namespace lensformer {

struct ConvSpec {
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  bool pool = false;  // 2x2 max-pool after the activation
};

struct ModelConfig {
  std::string name = "lens-detector";
  std::size_t input_bands = 4;
  std::size_t input_size = 101;
  std::vector<ConvSpec> backbone;
  AttentionConfig attention;
  std::size_t num_encoders = 1;  // 0 builds the CNN-only baseline
  std::size_t encoder_ffn_hidden = 0;  // 0 means 2 * model_dim
  std::vector<std::size_t> ffn_head{256, 64};
  std::size_t towers = 1;
  double positional_base = kPositionalBase;

  std::size_t feature_channels() const { return backbone.empty() ? input_bands : backbone.back().out_channels; }

  /// Spatial side length after the backbone.
  std::size_t feature_size() const {
    std::size_t s = input_size;
    for (const auto& c : backbone) {
      if (c.kernel > s + 2 * c.padding) return 0;
      s = (s + 2 * c.padding - c.kernel) / c.stride + 1;
      if (c.pool) s /= 2;
      if (s == 0) return 0;
    }
    return s;
  }

  std::size_t sequence_length() const { return feature_size() * feature_size(); }

  void validate() const {
    if (input_bands == 0 || input_size == 0) throw ConfigError("model: input_bands and input_size must be positive");
    if (backbone.empty()) throw ConfigError("model: backbone needs at least one conv layer");
    for (const auto& c : backbone)
      if (c.out_channels == 0 || c.kernel == 0 || c.stride == 0) throw ConfigError("model: conv layers need positive channels/kernel/stride");
    if (feature_size() == 0) throw ConfigError("model: backbone shrinks a " + std::to_string(input_size) + " px input to nothing");
    if (towers != 1 && towers != 2) throw ConfigError("model: towers must be 1 or 2, got " + std::to_string(towers));
    for (auto w : ffn_head)
      if (w == 0) throw ConfigError("model: ffn_head widths must be positive");
    if (num_encoders > 0) {
      attention.validate();
      if (feature_channels() != attention.model_dim) {
        throw ConfigError("model: backbone output channels D=" + std::to_string(feature_channels()) +
                          " must equal attention model_dim " + std::to_string(attention.model_dim));
      }
      if (attention.model_dim % 2 != 0) throw ConfigError("model: model_dim must be even for positional encoding");
    }
  }
};

inline void to_json(json& j, const ConvSpec& c) {
  j = json{{"out_channels", c.out_channels}, {"kernel", c.kernel}, {"stride", c.stride}, {"padding", c.padding}, {"pool", c.pool}};
}

inline ConvSpec conv_spec_from_json(const json& j, const std::string& path) {
  jsonutil::require_known_keys(j, {"out_channels", "kernel", "stride", "padding", "pool"}, path);
  ConvSpec c;
  jsonutil::read(j, "out_channels", c.out_channels, path);
  jsonutil::read(j, "kernel", c.kernel, path);
  jsonutil::read(j, "stride", c.stride, path);
  jsonutil::read(j, "padding", c.padding, path);
  jsonutil::read(j, "pool", c.pool, path);
  return c;
}

inline void to_json(json& j, const ModelConfig& m) {
  j = json{{"name", m.name},
           {"input_bands", m.input_bands},
           {"input_size", m.input_size},
           {"backbone", m.backbone},
           {"attention",
            {{"num_heads", m.attention.num_heads},
             {"head_dim", m.attention.head_dim},
             {"model_dim", m.attention.model_dim},
             {"split_model_dim", m.attention.split_model_dim},
             {"pre_norm", m.attention.pre_norm}}},
           {"num_encoders", m.num_encoders},
           {"encoder_ffn_hidden", m.encoder_ffn_hidden},
           {"ffn_head", m.ffn_head},
           {"towers", m.towers},
           {"positional_base", m.positional_base}};
}

inline ModelConfig model_config_from_json(const json& j, const std::string& path = "") {
  jsonutil::require_known_keys(j, {"name", "input_bands", "input_size", "backbone", "attention", "num_encoders",
                                   "encoder_ffn_hidden", "ffn_head", "towers", "positional_base"},
                               path);
  ModelConfig m;
  jsonutil::read(j, "name", m.name, path);
  jsonutil::read(j, "input_bands", m.input_bands, path);
  jsonutil::read(j, "input_size", m.input_size, path);
  if (auto it = j.find("backbone"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("config error at " + path + "/backbone: expected an array");
    m.backbone.clear();
    for (std::size_t i = 0; i < it->size(); ++i)
      m.backbone.push_back(conv_spec_from_json((*it)[i], path + "/backbone/" + std::to_string(i)));
  }
  if (auto it = j.find("attention"); it != j.end()) {
    const std::string p = path + "/attention";
    jsonutil::require_known_keys(*it, {"num_heads", "head_dim", "model_dim", "split_model_dim", "pre_norm"}, p);
    jsonutil::read(*it, "num_heads", m.attention.num_heads, p);
    jsonutil::read(*it, "head_dim", m.attention.head_dim, p);
    jsonutil::read(*it, "model_dim", m.attention.model_dim, p);
    jsonutil::read(*it, "split_model_dim", m.attention.split_model_dim, p);
    jsonutil::read(*it, "pre_norm", m.attention.pre_norm, p);
  }
  jsonutil::read(j, "num_encoders", m.num_encoders, path);
  jsonutil::read(j, "encoder_ffn_hidden", m.encoder_ffn_hidden, path);
  jsonutil::read(j, "ffn_head", m.ffn_head, path);
  jsonutil::read(j, "towers", m.towers, path);
  jsonutil::read(j, "positional_base", m.positional_base, path);
  return m;
}

/// Reference scale: 8 conv layers, 8 heads over model dim 128 and 4 encoders on 101x101x4 stamps.
inline ModelConfig reference_config() {
  ModelConfig m;
  m.name = "lens-detector-15";
  m.input_bands = 4;
  m.input_size = 101;
  const std::size_t widths[] = {16, 16, 32, 32, 64, 64, 128, 128};
  for (std::size_t i = 0; i < 8; ++i) m.backbone.push_back({widths[i], 3, 1, 1, i % 2 == 1});
  m.attention = {8, 16, 128, true};
  m.num_encoders = 4;
  m.ffn_head = {256, 64};
  return m;
}

/// Desk-scale model: 32x32x4 input, 2 conv layers, 1 encoder with 2 heads
/// over a 16-wide model dimension.
inline ModelConfig desk_config() {
  ModelConfig m;
  m.name = "desk-encoder";
  m.input_bands = 4;
  m.input_size = 32;
  m.backbone = {{16, 3, 1, 1, true}, {16, 3, 1, 1, true}};
  m.attention = {2, 8, 16, true};
  m.num_encoders = 1;
  m.ffn_head = {64, 32};
  return m;
}

/// The same backbone and head with the encoder stack removed.
inline ModelConfig cnn_only(ModelConfig m) {
  m.num_encoders = 0;
  m.name += "-cnn";
  return m;
}

template <typename T>
struct ConvLayer {
  ConvSpec spec;
  Tensor<T> kernel, bias;
};

template <typename T>
struct DenseLayer {
  Tensor<T> w, b;
};

template <typename T>
struct Tower {
  std::vector<ConvLayer<T>> convs;
  std::vector<EncoderLayer<T>> encoders;
  std::vector<DenseLayer<T>> head;
};

template <typename T>
class DetectorModel {
 public:

  DetectorModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
    config_.validate();
    ParamInit<T> init(seed_);
    for (std::size_t t = 0; t < config_.towers; ++t) towers_.push_back(make_tower(init));
    const std::size_t feat = config_.ffn_head.empty() ? flat_width() : config_.ffn_head.back();
    output_.w = init.xavier({config_.towers * feat, 1}, config_.towers * feat, 1);
    output_.b = init.filled({1}, T(0));
    if (config_.num_encoders > 0) {
      pe_ = positional_encoding<T>(config_.attention.model_dim, config_.sequence_length(), config_.positional_base);
    }
  }

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  /// Visits every trainable tensor in a fixed order with a stable name.
  template <typename Fn>
  void visit(Fn&& fn) {
    each(*this, fn);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    each(*this, fn);
  }

  std::vector<NamedTensor<T>> parameters() const {
    std::vector<NamedTensor<T>> out;
    visit([&](const std::string& n, const Tensor<T>& t) { out.push_back({n, t}); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
    return n;
  }

  void zero_grad() {
    visit([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
  }

  /// Deep copy: no storage shared with this model.
  DetectorModel clone() const { return cast<T>(); }

  /// Penultimate features of one tower for a [B, bands, S, S] batch.
  Tensor<T> tower_features(std::size_t tower, const Tensor<T>& batch) const {
    const auto& tw = towers_.at(tower);
    Tensor<T> h = batch;
    for (const auto& c : tw.convs) {
      h = elu(add_channel_bias(conv2d(h, c.kernel, c.spec.stride, c.spec.padding), c.bias));
      if (c.spec.pool) h = max_pool2d(h, 2);
    }
    const std::size_t b = h.dim(0), d = h.dim(1), len = h.dim(2) * h.dim(3);
    if (!tw.encoders.empty()) {
      // [B, D, H, W] -> [B, HW, D]
      h = transpose(reshape(h, {b, d, len}));
      h = add(h, pe_.rows(len));
      h = encoder_stack_forward(h, tw.encoders);
    }
    h = reshape(h, {b, len * d});
    for (const auto& dl : tw.head) h = elu(dense(h, dl.w, dl.b));
    return h;
  }

  /// Lens probabilities, shape [B], every value strictly inside (0, 1).
  Tensor<T> forward(const Tensor<T>& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != config_.input_bands || batch.dim(2) != config_.input_size ||
        batch.dim(3) != config_.input_size) {
      throw DimensionError("detector expects [B," + std::to_string(config_.input_bands) + "," +
                           std::to_string(config_.input_size) + "," + std::to_string(config_.input_size) + "], got " +
                           to_string(batch.shape()));
    }
    std::vector<Tensor<T>> feats;
    for (std::size_t t = 0; t < towers_.size(); ++t) feats.push_back(tower_features(t, batch));
    auto joined = feats.size() == 1 ? feats.front() : concat(feats);
    auto p = sigmoid(dense(joined, output_.w, output_.b));
    return reshape(p, {batch.dim(0)});
  }

  /// Copies every tensor into a model of another precision.
  template <typename U>
  DetectorModel<U> cast() const {
    DetectorModel<U> out(config_, seed_);
    auto src = parameters();
    std::size_t i = 0;
    out.visit([&](const std::string&, Tensor<U>& t) {
      const auto& s = src[i++].tensor;
      for (std::size_t k = 0; k < t.numel(); ++k) t[k] = static_cast<U>(s[k]);
    });
    return out;
  }

 private:
  template <typename Self, typename Fn>
  static void each(Self& self, Fn& fn) {
    for (std::size_t t = 0; t < self.towers_.size(); ++t) {
      const std::string p = self.config_.towers == 1 ? std::string() : "tower" + std::to_string(t) + ".";
      auto& tw = self.towers_[t];
      for (std::size_t i = 0; i < tw.convs.size(); ++i) {
        fn(p + "backbone.conv" + std::to_string(i) + ".kernel", tw.convs[i].kernel);
        fn(p + "backbone.conv" + std::to_string(i) + ".bias", tw.convs[i].bias);
      }
      for (std::size_t e = 0; e < tw.encoders.size(); ++e) tw.encoders[e].visit(p + "encoder" + std::to_string(e) + ".", fn);
      for (std::size_t i = 0; i < tw.head.size(); ++i) {
        fn(p + "head.dense" + std::to_string(i) + ".w", tw.head[i].w);
        fn(p + "head.dense" + std::to_string(i) + ".b", tw.head[i].b);
      }
    }
    fn("output.w", self.output_.w);
    fn("output.b", self.output_.b);
  }

  std::size_t flat_width() const { return config_.sequence_length() * config_.feature_channels(); }

  Tower<T> make_tower(ParamInit<T>& init) const {
    Tower<T> tw;
    std::size_t cin = config_.input_bands;
    for (const auto& c : config_.backbone) {
      const std::size_t area = c.kernel * c.kernel;
      tw.convs.push_back({c, init.xavier({c.out_channels, cin, c.kernel, c.kernel}, cin * area, c.out_channels * area),
                          init.filled({c.out_channels}, T(0))});
      cin = c.out_channels;
    }
    for (std::size_t e = 0; e < config_.num_encoders; ++e)
      tw.encoders.push_back(make_encoder_layer<T>(config_.attention, config_.encoder_ffn_hidden, init));
    std::size_t in = flat_width();
    for (auto w : config_.ffn_head) {
      tw.head.push_back({init.xavier({in, w}, in, w), init.filled({w}, T(0))});
      in = w;
    }
    return tw;
  }

  ModelConfig config_;
  std::uint64_t seed_;
  std::vector<Tower<T>> towers_;
  DenseLayer<T> output_;
  PositionalEncoding<T> pe_;
};

/// Builds and Xavier-initialises a model; deterministic under `seed`.
template <typename T>
DetectorModel<T> build(const ModelConfig& config, std::uint64_t seed) {
  return DetectorModel<T>(config, seed);
}

/// Two independently initialised towers joined by one dense + sigmoid neuron.
template <typename T>
DetectorModel<T> build_two_tower(const ModelConfig& config, std::uint64_t seed) {
  if (config.towers != 2) throw ConfigError("build_two_tower needs towers == 2, got " + std::to_string(config.towers));
  return DetectorModel<T>(config, seed);
}

/// label = 1 iff p >= threshold.
template <typename T>
std::vector<int> classify(const Tensor<T>& probabilities, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ContractError("classify: threshold must lie in [0,1]");
  std::vector<int> labels(probabilities.numel());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<double>(probabilities[i]) >= threshold ? 1 : 0;
  return labels;
}

}  // namespace lensformer
