#pragma once
/*
 * Training loop: BCE loss, ADAM, staged learning-rate schedule, quarter-turn
 * augmentation, seeded train/validation split, per-stage checkpoints.
 *
 * Determinism: the split depends on the seed only, and epoch g (1-based,
 * counted across stages) shuffles with mix_seed(seed, g). ADAM state starts
 * fresh at every stage, so a stage-end checkpoint is enough to resume.
 */

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lensformer/checkpoint.hpp"
#include "lensformer/detector.hpp"
#include "lensformer/stamp.hpp"

namespace lensformer {

struct TrainStage {
  double lr = 1e-4;
  std::size_t epochs = 1;
};

enum class RescaleMode { kNone, kPerBand, kPerStamp };

inline std::string to_string(RescaleMode m) {
  switch (m) {
    case RescaleMode::kNone: return "none";
    case RescaleMode::kPerBand: return "band";
    case RescaleMode::kPerStamp: return "stamp";
  }
  return "none";
}

inline RescaleMode rescale_mode_from_string(const std::string& s) {
  if (s == "none") return RescaleMode::kNone;
  if (s == "band") return RescaleMode::kPerBand;
  if (s == "stamp") return RescaleMode::kPerStamp;
  throw ConfigError("rescale mode must be none, band or stamp, got '" + s + "'");
}

inline constexpr double kDefaultLearningRate = 1e-4;
inline constexpr double kLearningRateWarning = 1e-3;

struct TrainConfig {
  std::vector<TrainStage> stages{{kDefaultLearningRate, 30}};
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  bool augment_rotations = true;
  bool augment_rescale = true;
  RescaleMode rescale_mode = RescaleMode::kPerBand;

  /// Throws on invalid settings; returns advisory warnings.
  std::vector<std::string> validate() const {
    if (stages.empty()) throw ConfigError("train: stage list is empty");
    std::vector<std::string> warnings;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const auto& s = stages[i];
      if (!(s.lr > 0) || !std::isfinite(s.lr)) throw ConfigError("train: stage " + std::to_string(i + 1) + " learning rate must be > 0");
      if (s.epochs < 1) throw ConfigError("train: stage " + std::to_string(i + 1) + " needs at least one epoch");
      if (s.lr > kLearningRateWarning) {
        warnings.push_back("stage " + std::to_string(i + 1) + " learning rate " + std::to_string(s.lr) +
                           " is above 1e-3; performance usually drops there");
      }
    }
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("train: val_fraction must lie in (0,1)");
    return warnings;
  }

  RescaleMode preprocess() const { return augment_rescale ? rescale_mode : RescaleMode::kNone; }

  std::size_t total_epochs() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.epochs;
    return n;
  }
};

/// Desk-scale schedule: 30 epochs at 1e-4, batches of 16, no rotations
/// (they quadruple the epoch cost).
inline TrainConfig desk_train_config() {
  TrainConfig c;
  c.batch_size = 16;
  c.augment_rotations = false;
  return c;
}

/// "1e-4:300,1e-5:100" -> stages.
inline std::vector<TrainStage> parse_stages(const std::string& text) {
  std::vector<TrainStage> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("bad stage '" + item + "': expected lr:epochs");
    try {
      std::size_t used = 0;
      const double lr = std::stod(item.substr(0, colon), &used);
      if (used != colon) throw std::invalid_argument("lr");
      const std::string ep = item.substr(colon + 1);
      const long long epochs = std::stoll(ep, &used);
      if (used != ep.size() || epochs < 0) throw std::invalid_argument("epochs");
      out.push_back({lr, static_cast<std::size_t>(epochs)});
    } catch (const std::logic_error&) {
      throw ConfigError("bad stage '" + item + "': expected lr:epochs");
    }
  }
  if (out.empty()) throw ConfigError("stage list is empty");
  return out;
}

inline void to_json(json& j, const TrainConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back({{"lr", s.lr}, {"epochs", s.epochs}});
  j = json{{"stages", stages},
           {"batch_size", c.batch_size},
           {"val_fraction", c.val_fraction},
           {"augment_rotations", c.augment_rotations},
           {"augment_rescale", c.augment_rescale},
           {"rescale_mode", to_string(c.rescale_mode)}};
}

inline TrainConfig train_config_from_json(const json& j, const std::string& path = "", TrainConfig c = {}) {
  jsonutil::require_known_keys(j, {"stages", "batch_size", "val_fraction", "augment_rotations", "augment_rescale", "rescale_mode"}, path);
  if (auto it = j.find("stages"); it != j.end()) {
    if (it->is_string()) {
      c.stages = parse_stages(it->get<std::string>());
    } else if (it->is_array()) {
      c.stages.clear();
      for (std::size_t i = 0; i < it->size(); ++i) {
        const std::string p = path + "/stages/" + std::to_string(i);
        jsonutil::require_known_keys((*it)[i], {"lr", "epochs"}, p);
        TrainStage s;
        jsonutil::read((*it)[i], "lr", s.lr, p);
        jsonutil::read((*it)[i], "epochs", s.epochs, p);
        c.stages.push_back(s);
      }
    } else {
      throw ConfigError("config error at " + path + "/stages: expected an array or \"lr:epochs,...\"");
    }
  }
  jsonutil::read(j, "batch_size", c.batch_size, path);
  jsonutil::read(j, "val_fraction", c.val_fraction, path);
  jsonutil::read(j, "augment_rotations", c.augment_rotations, path);
  jsonutil::read(j, "augment_rescale", c.augment_rescale, path);
  if (auto it = j.find("rescale_mode"); it != j.end()) {
    try {
      c.rescale_mode = rescale_mode_from_string(it->get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError("config error at " + path + "/rescale_mode: " + e.what());
    }
  }
  return c;
}

// ------------------------------------------------------------------- ADAM

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<Shape> shapes;
  std::vector<std::vector<T>> m, v;
};

/// One bias-corrected ADAM update, p -= lr * m_hat / (sqrt(v_hat) + eps).
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, const std::vector<std::vector<T>>& grads, AdamState<T>& state, double lr) {
  if (!(lr > 0)) throw ContractError("adam_step: learning rate must be > 0");
  if (grads.size() != params.size()) throw ContractError("adam_step: parameter/gradient count mismatch");
  if (state.shapes.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.shapes.push_back(p.shape());
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.shapes.size() != params.size()) throw ContractError("adam_step: state tracks a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != state.shapes[i] || grads[i].size() != params[i].numel())
      throw ContractError("adam_step: shape mismatch for parameter " + std::to_string(i) + " " + to_string(params[i].shape()));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T a = static_cast<T>(lr / c1), inv_c2 = static_cast<T>(1.0 / c2), eps = static_cast<T>(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      p[k] -= a * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
    }
  }
}

/// Uses each tensor's accumulated gradient (absent gradient = zero).
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, double lr) {
  std::vector<std::vector<T>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    if (p.has_grad())
      grads.emplace_back(p.grad().begin(), p.grad().end());
    else
      grads.emplace_back(p.numel(), T(0));
  }
  adam_step(params, grads, state, lr);
}

// ------------------------------------------------------------ augmentation

/// Quarter turns of a [bands, S, S] cube: out[r][c] = in[c][S-1-r] per turn.
inline Tensor<float> rotate90(const Tensor<float>& x, int turns) {
  if (x.rank() != 3 || x.dim(1) != x.dim(2)) throw ContractError("rotate90: stamp must be square [bands,S,S], got " + to_string(x.shape()));
  turns = ((turns % 4) + 4) % 4;
  Tensor<float> cur = x.clone();
  const std::size_t bands = x.dim(0), s = x.dim(1);
  for (int t = 0; t < turns; ++t) {
    Tensor<float> next(x.shape());
    for (std::size_t b = 0; b < bands; ++b)
      for (std::size_t r = 0; r < s; ++r)
        for (std::size_t c = 0; c < s; ++c) next[(b * s + r) * s + c] = cur[(b * s + c) * s + (s - 1 - r)];
    cur = std::move(next);
  }
  return cur;
}

/// The four quarter-turn rotations (n = 0..3) with label and metadata kept.
inline std::vector<ImageStamp> augment(const ImageStamp& stamp) {
  std::vector<ImageStamp> out;
  for (int n = 0; n < 4; ++n) out.push_back({rotate90(stamp.pixels, n), stamp.label, stamp.meta});
  return out;
}

/// Min-max to [0,1], per band or over the whole stamp; a constant range maps to zeros.
inline Tensor<float> rescale(const Tensor<float>& x, RescaleMode mode = RescaleMode::kPerBand) {
  if (mode == RescaleMode::kNone) return x.clone();
  if (x.rank() != 3) throw DimensionError("rescale: expected [bands,S,S], got " + to_string(x.shape()));
  Tensor<float> out(x.shape(), 0.0f);
  const std::size_t groups = mode == RescaleMode::kPerBand ? x.dim(0) : 1;
  const std::size_t len = x.numel() / groups;
  for (std::size_t g = 0; g < groups; ++g) {
    const float* p = x.raw() + g * len;
    float lo = p[0], hi = p[0];
    for (std::size_t i = 1; i < len; ++i) {
      lo = std::min(lo, p[i]);
      hi = std::max(hi, p[i]);
    }
    if (!(hi > lo)) continue;
    const double inv = 1.0 / (static_cast<double>(hi) - lo);
    for (std::size_t i = 0; i < len; ++i) out[g * len + i] = static_cast<float>((static_cast<double>(p[i]) - lo) * inv);
  }
  return out;
}

inline ImageStamp rescale(const ImageStamp& s, RescaleMode mode = RescaleMode::kPerBand) { return {rescale(s.pixels, mode), s.label, s.meta}; }

// ------------------------------------------------------------------ split

struct Split {
  std::vector<std::size_t> train, val;
};

/// Seeded shuffle; the first round(n * val_fraction) entries (at least one,
/// at most n-1) form the validation set. Both halves are returned sorted.
inline Split split_indices(std::size_t n, double val_fraction, std::uint64_t seed) {
  if (n < 2) throw ConfigError("need at least two samples to split");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, 0x5011));
  std::shuffle(perm.begin(), perm.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
  n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  Split s{{perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end()}, {perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val)}};
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

// ------------------------------------------------------------ batches

/// A reference to stamp `index` turned by `turns` quarter turns.
struct SampleRef {
  std::size_t index = 0;
  int turns = 0;
};

template <typename T>
Tensor<T> make_batch(const Dataset& data, const std::vector<SampleRef>& refs, RescaleMode mode) {
  const auto& shape = data.at(refs.at(0).index).pixels.shape();
  const std::size_t per = shape_numel(shape);
  Tensor<T> batch({refs.size(), shape[0], shape[1], shape[2]});
  for (std::size_t b = 0; b < refs.size(); ++b) {
    const auto& src = data.at(refs[b].index).pixels;
    Tensor<float> img = refs[b].turns ? rotate90(src, refs[b].turns) : src;
    if (mode != RescaleMode::kNone) img = rescale(img, mode);
    for (std::size_t i = 0; i < per; ++i) batch[b * per + i] = static_cast<T>(img[i]);
  }
  return batch;
}

/// Probabilities for every stamp (or the listed subset), in order.
template <typename T>
std::vector<double> predict(const DetectorModel<T>& model, const Dataset& data, RescaleMode mode, std::size_t batch_size = 64,
                            const std::vector<std::size_t>* subset = nullptr) {
  NoGradGuard<T> guard;
  const std::size_t n = subset ? subset->size() : data.size();
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::vector<SampleRef> refs;
    for (std::size_t i = start; i < std::min(n, start + batch_size); ++i) refs.push_back({subset ? (*subset)[i] : i, 0});
    auto p = model.forward(make_batch<T>(data, refs, mode));
    for (auto v : p.data()) out.push_back(static_cast<double>(v));
  }
  return out;
}

// ----------------------------------------------------------------- train

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based, counted across stages
  std::size_t stage = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

inline std::string history_csv_header() { return "epoch,stage,lr,train_loss,val_loss,val_accuracy\n"; }

inline std::string history_csv_row(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.stage, r.lr, r.train_loss, r.val_loss, r.val_accuracy);
  return buf;
}

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::string last_checkpoint)
      : std::runtime_error(what), last_checkpoint_(std::move(last_checkpoint)) {}
  const std::string& last_checkpoint() const { return last_checkpoint_; }

 private:
  std::string last_checkpoint_;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::size_t stage_offset = 0;   // stages already completed (resume)
  std::size_t epoch_offset = 0;   // epochs already completed (resume)
  std::string last_checkpoint;    // reported if the first new stage fails
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::vector<std::string> checkpoints;
  std::vector<std::string> warnings;
};

inline std::string checkpoint_name(std::size_t stage, std::size_t epoch) {
  return "stage" + std::to_string(stage) + "_epoch" + std::to_string(epoch) + ".ckpt";
}

template <typename T>
void check_compatible(const DetectorModel<T>& model, const Dataset& data) {
  if (data.empty()) throw ConfigError("dataset is empty");
  const auto& c = model.config();
  for (const auto& s : data) {
    if (s.pixels.rank() != 3 || s.pixels.dim(0) != c.input_bands || s.pixels.dim(1) != c.input_size || s.pixels.dim(2) != c.input_size) {
      throw ConfigError("stamp " + s.meta.id + " has shape " + to_string(s.pixels.shape()) + " but the model expects [" +
                        std::to_string(c.input_bands) + "," + std::to_string(c.input_size) + "," + std::to_string(c.input_size) + "]");
    }
  }
}

inline json checkpoint_meta(const TrainConfig& cfg, std::size_t stages_done, std::size_t epochs_done) {
  return json{{"stages_completed", stages_done},
              {"epochs_completed", epochs_done},
              {"preprocess", to_string(cfg.preprocess())},
              {"train", cfg},
              {"train_seed", cfg.seed}};
}

/// Trains `model` in place through every stage of `cfg`.
template <typename T>
TrainResult train(DetectorModel<T>& model, const Dataset& data, const TrainConfig& cfg, const TrainOptions& opt = {}) {
  TrainResult result;
  result.warnings = cfg.validate();
  check_compatible(model, data);
  const Split split = split_indices(data.size(), cfg.val_fraction, cfg.seed);
  std::size_t pos = 0;
  for (auto i : split.train) pos += data[i].label == 1;
  if (pos == 0 || pos == split.train.size()) throw ConfigError("training split contains a single class");

  const RescaleMode mode = cfg.preprocess();
  const int turns = cfg.augment_rotations ? 4 : 1;
  std::vector<SampleRef> pool;
  for (auto i : split.train)
    for (int t = 0; t < turns; ++t) pool.push_back({i, t});

  std::vector<Tensor<T>> params;
  model.visit([&](const std::string&, Tensor<T>& t) { params.push_back(t); });

  std::ofstream history;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    const auto path = opt.out_dir / "history.csv";
    const bool fresh = opt.epoch_offset == 0 || !std::filesystem::exists(path);
    history.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!history) throw IoError("cannot write " + path.string());
    if (fresh) history << history_csv_header();
  }

  std::string last_good = opt.last_checkpoint;
  std::size_t epoch = opt.epoch_offset;
  for (std::size_t k = 0; k < cfg.stages.size(); ++k) {
    const auto& stage = cfg.stages[k];
    const std::size_t stage_no = opt.stage_offset + k + 1;
    AdamState<T> adam;
    for (std::size_t e = 0; e < stage.epochs; ++e) {
      ++epoch;
      std::vector<SampleRef> order = pool;
      std::mt19937_64 rng(mix_seed(mix_seed(cfg.seed, 0xE90C), epoch));
      std::shuffle(order.begin(), order.end(), rng);

      double loss_sum = 0.0;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        std::vector<SampleRef> refs(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
        Tensor<T> labels({refs.size()});
        for (std::size_t b = 0; b < refs.size(); ++b) labels[b] = static_cast<T>(data[refs[b].index].label);
        auto& tape = Tape<T>::current();
        tape.clear();
        model.zero_grad();
        auto loss = binary_cross_entropy(model.forward(make_batch<T>(data, refs, mode)), labels);
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv)) {
          tape.clear();
          throw TrainingError("non-finite training loss in stage " + std::to_string(stage_no) + ", epoch " + std::to_string(epoch) +
                                  "; last good checkpoint: " + (last_good.empty() ? std::string("none") : last_good),
                              last_good);
        }
        backward(loss);
        adam_step(params, adam, stage.lr);
        loss_sum += lv * static_cast<double>(refs.size());
      }

      EpochRecord rec;
      rec.epoch = epoch;
      rec.stage = stage_no;
      rec.lr = stage.lr;
      rec.train_loss = loss_sum / static_cast<double>(order.size());
      const auto probs = predict(model, data, mode, 64, &split.val);
      double vloss = 0.0, correct = 0.0;
      for (std::size_t i = 0; i < probs.size(); ++i) {
        const int y = data[split.val[i]].label;
        const double p = std::clamp(probs[i], kBceEpsilon, 1.0 - kBceEpsilon);
        vloss -= y ? std::log(p) : std::log(1.0 - p);
        correct += ((probs[i] >= 0.5) == (y == 1)) ? 1.0 : 0.0;
      }
      rec.val_loss = vloss / static_cast<double>(probs.size());
      rec.val_accuracy = correct / static_cast<double>(probs.size());
      result.history.push_back(rec);
      if (history.is_open()) history << history_csv_row(rec) << std::flush;
      if (opt.on_epoch) opt.on_epoch(rec);
    }
    if (!opt.out_dir.empty()) {
      const auto path = opt.out_dir / checkpoint_name(stage_no, epoch);
      save_checkpoint(path, model, checkpoint_meta(cfg, stage_no, epoch));
      last_good = path.string();
      result.checkpoints.push_back(last_good);
    }
  }
  return result;
}

/// Runs `cfg.stages` as further stages after a checkpoint written by
/// train(): stage and epoch numbering continue from the checkpoint, so
/// resuming stage 2 reproduces an uninterrupted two-stage run.
inline DetectorModel<float> resume(const Checkpoint& ck, const Dataset& data, const TrainConfig& cfg, TrainOptions opt = {},
                                   TrainResult* result = nullptr) {
  auto model = restore_model<float>(ck);
  check_compatible(model, data);
  opt.stage_offset = ck.meta.value("stages_completed", std::size_t{0});
  opt.epoch_offset = ck.meta.value("epochs_completed", std::size_t{0});
  auto r = train(model, data, cfg, opt);
  if (result) *result = std::move(r);
  return model;
}

/// Starts from checkpoint weights with fresh optimiser state and a fresh
/// epoch count. An empty stage list means no additional epochs: the
/// checkpoint's model comes back unchanged.
inline DetectorModel<float> fine_tune(const Checkpoint& ck, const Dataset& data, const TrainConfig& cfg, const TrainOptions& opt = {},
                                      TrainResult* result = nullptr) {
  auto model = restore_model<float>(ck);
  check_compatible(model, data);
  TrainResult r;
  if (!cfg.stages.empty()) r = train(model, data, cfg, opt);
  if (result) *result = std::move(r);
  return model;
}

}  // namespace lensformer
