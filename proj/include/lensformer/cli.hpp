#pragma once
// Command-line driver: simulate, train, eval and report. run() is the whole
// program; tools/lensformer.cpp only forwards argv.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data
// error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lensformer/checkpoint.hpp"
#include "lensformer/detector.hpp"
#include "lensformer/json_util.hpp"
#include "lensformer/lenssim.hpp"
#include "lensformer/metrics.hpp"
#include "lensformer/report.hpp"
#include "lensformer/training.hpp"

namespace lensformer::cli {

namespace fs = std::filesystem;

/// Input data that cannot be used with the chosen model (exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricsConfig {
  double threshold = 0.5;
  std::vector<double> thresholds = default_thresholds();
  std::size_t tpr10_max_fp = 9;
  std::vector<std::string> stratify;
  std::map<std::string, std::vector<double>> bins;  // key -> interior edges; absent = quartiles
};

struct PathsConfig {
  std::string data;        // manifest file or the directory holding manifest.jsonl
  std::string out;
  std::string checkpoint;  // model for eval, or the checkpoint to resume from
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string model_preset = "desk";
  ModelConfig model = desk_config();
  TrainConfig train = desk_train_config();
  std::string sim_preset = "desk";
  SimConfig sim = desk_sim_config();
  std::size_t n = 2000;
  double lens_fraction = 0.5;
  MetricsConfig metrics;
  PathsConfig paths;
};

inline ModelConfig model_preset(const std::string& name) {
  if (name == "desk") return desk_config();
  if (name == "desk-cnn") return cnn_only(desk_config());
  if (name == "reference") return reference_config();
  if (name == "reference-cnn") return cnn_only(reference_config());
  if (name == "two-tower") {
    auto m = reference_config();
    m.name = "lens-detector-16";
    m.towers = 2;
    return m;
  }
  throw ConfigError("unknown model preset '" + name + "' (desk, desk-cnn, reference, reference-cnn, two-tower)");
}

inline SimConfig sim_preset(const std::string& name) {
  if (name == "desk") return desk_sim_config();
  if (name == "full") return SimConfig{};
  throw ConfigError("unknown simulator preset '" + name + "' (desk, full)");
}

inline json to_json(const MetricsConfig& m) {
  return json{{"threshold", m.threshold}, {"thresholds", m.thresholds}, {"tpr10_max_fp", m.tpr10_max_fp},
              {"stratify", m.stratify},   {"bins", m.bins}};
}

inline json to_json(const RunConfig& c) {
  json model = c.model;
  model["preset"] = c.model_preset;
  json sim = c.sim;
  sim["preset"] = c.sim_preset;
  sim["n"] = c.n;
  sim["lens_fraction"] = c.lens_fraction;
  return json{{"seed", c.seed},
              {"model", model},
              {"train", c.train},
              {"simulator", sim},
              {"metrics", to_json(c.metrics)},
              {"paths", {{"data", c.paths.data}, {"out", c.paths.out}, {"checkpoint", c.paths.checkpoint}}}};
}

/// Parses a run config; every section is optional and unknown keys are
/// rejected with their JSON pointer.
inline RunConfig run_config_from_json(const json& j) {
  jsonutil::require_known_keys(j, {"seed", "model", "train", "simulator", "metrics", "paths"}, "");
  RunConfig c;
  jsonutil::read(j, "seed", c.seed, "");

  if (auto it = j.find("model"); it != j.end()) {
    if (!it->is_object()) throw ConfigError("config error at /model: expected an object");
    json patch = *it;
    if (patch.contains("preset")) {
      jsonutil::read(patch, "preset", c.model_preset, "/model");
      patch.erase("preset");
    }
    json base = model_preset(c.model_preset);
    base.merge_patch(patch);
    c.model = model_config_from_json(base, "/model");
  }
  if (auto it = j.find("train"); it != j.end()) c.train = train_config_from_json(*it, "/train", c.train);
  if (auto it = j.find("simulator"); it != j.end()) {
    if (!it->is_object()) throw ConfigError("config error at /simulator: expected an object");
    json patch = *it;
    jsonutil::read(patch, "preset", c.sim_preset, "/simulator");
    jsonutil::read(patch, "n", c.n, "/simulator");
    jsonutil::read(patch, "lens_fraction", c.lens_fraction, "/simulator");
    for (const char* k : {"preset", "n", "lens_fraction"}) patch.erase(k);
    c.sim = sim_config_from_json(patch, "/simulator", sim_preset(c.sim_preset));
  }
  if (auto it = j.find("metrics"); it != j.end()) {
    const std::string p = "/metrics";
    jsonutil::require_known_keys(*it, {"threshold", "thresholds", "tpr10_max_fp", "stratify", "bins"}, p);
    jsonutil::read(*it, "threshold", c.metrics.threshold, p);
    jsonutil::read(*it, "thresholds", c.metrics.thresholds, p);
    jsonutil::read(*it, "tpr10_max_fp", c.metrics.tpr10_max_fp, p);
    jsonutil::read(*it, "stratify", c.metrics.stratify, p);
    jsonutil::read(*it, "bins", c.metrics.bins, p);
  }
  if (auto it = j.find("paths"); it != j.end()) {
    jsonutil::require_known_keys(*it, {"data", "out", "checkpoint"}, "/paths");
    jsonutil::read(*it, "data", c.paths.data, "/paths");
    jsonutil::read(*it, "out", c.paths.out, "/paths");
    jsonutil::read(*it, "checkpoint", c.paths.checkpoint, "/paths");
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

inline void validate(const RunConfig& c) {
  c.model.validate();
  c.train.validate();
  c.sim.validate();
  if (!(c.metrics.threshold >= 0 && c.metrics.threshold <= 1)) throw ConfigError("config error at /metrics/threshold: must lie in [0,1]");
  for (double t : c.metrics.thresholds)
    if (!(t >= 0 && t <= 1)) throw ConfigError("config error at /metrics/thresholds: values must lie in [0,1]");
}

/// Lines go to stderr as-is and to <out>/run.log with a UTC timestamp.
/// Timestamps appear nowhere else.
class RunLog {
 public:
  RunLog(const fs::path& out_dir, std::ostream& err, const std::string& command) : err_(err) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    file_.open(out_dir / "run.log", std::ios::app);
    if (!file_) throw IoError("cannot write " + (out_dir / "run.log").string());
    stamp() << "lensformer " << command << "\n";
  }
  void line(const std::string& msg) {
    err_ << msg << "\n";
    record(msg);
  }
  void record(const std::string& msg) {
    stamp() << msg << "\n";
    file_.flush();
  }

 private:
  std::ostream& stamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    return file_ << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << " ";
  }
  std::ofstream file_;
  std::ostream& err_;
};

inline void write_effective_config(const fs::path& out_dir, const json& j) { io::write_file(out_dir / "effective_config.json", j.dump(2) + "\n"); }

inline fs::path manifest_path(const std::string& data) {
  if (data.empty()) throw ConfigError("no dataset given (use --data or /paths/data)");
  fs::path p(data);
  return fs::is_directory(p) ? p / "manifest.jsonl" : p;
}

inline std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("bad number '" + item + "' in list '" + text + "'");
    }
  }
  return out;
}

/// Flag > LENSFORMER_SEED > config file > default.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t config_seed) {
  if (flag) return *flag;
  if (const char* env = std::getenv("LENSFORMER_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      return v;
    } catch (const std::logic_error&) {
      throw ConfigError(std::string("LENSFORMER_SEED must be a non-negative integer, got '") + env + "'");
    }
  }
  return config_seed;
}

template <typename T>
void require_compatible(const DetectorModel<T>& model, const Dataset& data) {
  try {
    check_compatible(model, data);
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
}

// --------------------------------------------------------------- commands

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

inline void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("-c,--config", a.config, "run config JSON");
  cmd->add_option("-o,--out", a.out, "output directory");
  cmd->add_option("--seed", a.seed, "seed (overrides LENSFORMER_SEED and the config)");
}

inline RunConfig prepare(const CommonArgs& a) {
  RunConfig c = load_run_config(a.config);
  c.seed = resolve_seed(a.seed, c.seed);
  if (!a.out.empty()) c.paths.out = a.out;
  if (c.paths.out.empty()) throw ConfigError("no output directory given (use --out or /paths/out)");
  return c;
}

struct SimulateArgs {
  CommonArgs common;
  std::optional<std::size_t> n;
  std::optional<double> lens_fraction;
  std::optional<std::size_t> bands;
  std::optional<std::string> preset;
};

inline int cmd_simulate(const SimulateArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig c = prepare(a.common);
  if (a.preset) {
    c.sim_preset = *a.preset;
    c.sim = sim_preset(*a.preset);
  }
  if (a.n) c.n = *a.n;
  if (a.lens_fraction) c.lens_fraction = *a.lens_fraction;
  if (a.bands && *a.bands != c.sim.bands) {
    if (*a.bands != 1) throw ConfigError("--bands accepts 1 (r band only) or the configured " + std::to_string(c.sim.bands));
    c.sim = c.sim.single_band();
  }
  c.sim.validate();
  if (c.n < 2) throw ConfigError("--n must be at least 2");
  if (!(c.lens_fraction > 0 && c.lens_fraction < 1)) throw ConfigError("--lens-fraction must lie in (0,1)");

  const fs::path dir(c.paths.out);
  RunLog log(dir, err, "simulate");
  write_effective_config(dir, to_json(c));
  const auto rows = generate_dataset(c.sim, c.n, c.lens_fraction, c.seed, dir);
  std::size_t lenses = 0;
  double lo = 0, hi = 0;
  for (const auto& r : rows) {
    if (r.label != 1) continue;
    lo = lenses ? std::min(lo, r.theta_e) : r.theta_e;
    hi = lenses ? std::max(hi, r.theta_e) : r.theta_e;
    ++lenses;
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "simulated %zu stamps (%zu lenses, %zu non-lenses, %zu bands, %zux%zu px); theta_e in [%.3f, %.3f] arcsec",
                rows.size(), lenses, rows.size() - lenses, c.sim.bands, c.sim.size, c.sim.size, lo, hi);
  out << buf << "\n";
  log.record(buf);
  return 0;
}

struct TrainArgs {
  CommonArgs common;
  std::string data;
  std::optional<std::string> stages;
  std::optional<std::size_t> batch_size;
  std::optional<std::string> model;
  std::optional<std::string> rescale;
  bool no_rotations = false;
  std::string resume;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig c = prepare(a.common);
  if (!a.data.empty()) c.paths.data = a.data;
  if (!a.resume.empty()) c.paths.checkpoint = a.resume;
  if (a.stages) c.train.stages = parse_stages(*a.stages);
  if (a.batch_size) c.train.batch_size = *a.batch_size;
  if (a.model) {
    c.model_preset = *a.model;
    c.model = model_preset(*a.model);
  }
  if (a.rescale) {
    c.train.rescale_mode = rescale_mode_from_string(*a.rescale);
    c.train.augment_rescale = c.train.rescale_mode != RescaleMode::kNone;
  }
  if (a.no_rotations) c.train.augment_rotations = false;
  c.train.seed = c.seed;

  std::optional<Checkpoint> ck;
  if (!c.paths.checkpoint.empty()) {
    ck = load_checkpoint(c.paths.checkpoint);
    c.model = ck->config;
    c.model_preset = "checkpoint";
  }
  validate(c);
  const auto manifest = manifest_path(c.paths.data);

  const fs::path dir(c.paths.out);
  RunLog log(dir, err, "train");
  write_effective_config(dir, to_json(c));
  for (const auto& w : c.train.validate()) log.line("warning: " + w);
  const Dataset data = load_dataset(manifest);
  log.line("loaded " + std::to_string(data.size()) + " stamps from " + manifest.string());

  TrainOptions opt;
  opt.out_dir = dir;
  opt.on_epoch = [&](const EpochRecord& r) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "stage %zu epoch %zu lr %.3g: train loss %.5f, val loss %.5f, val accuracy %.4f", r.stage, r.epoch, r.lr,
                  r.train_loss, r.val_loss, r.val_accuracy);
    log.line(buf);
  };
  DetectorModel<float> model = ck ? restore_model<float>(*ck) : build<float>(c.model, c.seed);
  require_compatible(model, data);
  TrainResult result;
  try {
    if (ck) {
      opt.last_checkpoint = c.paths.checkpoint;
      model = resume(*ck, data, c.train, opt, &result);
    } else {
      result = train(model, data, c.train, opt);
    }
  } catch (const TrainingError& e) {
    log.line(std::string("error: ") + e.what());
    return 2;
  }
  const std::size_t epochs = result.history.empty() ? 0 : result.history.back().epoch;
  const std::size_t stages = (ck ? ck->meta.value("stages_completed", std::size_t{0}) : 0) + c.train.stages.size();
  save_checkpoint(dir / "model.ckpt", model, checkpoint_meta(c.train, stages, epochs));
  const auto& last = result.history.back();
  char buf[200];
  std::snprintf(buf, sizeof buf, "trained to epoch %zu: train loss %.5f, val loss %.5f, val accuracy %.4f; model at %s", epochs, last.train_loss,
                last.val_loss, last.val_accuracy, (dir / "model.ckpt").string().c_str());
  out << buf << "\n";
  log.record(buf);
  return 0;
}

struct EvalArgs {
  CommonArgs common;
  std::string model;
  std::string data;
  std::optional<double> threshold;
  std::optional<std::string> thresholds;
  std::vector<std::string> stratify;
  std::optional<std::size_t> tpr10_max_fp;
};

/// Samples with the lens metadata the stratified reports key on.
inline std::vector<ScoredSample> scored_samples(const Dataset& data, const std::vector<double>& probs) {
  std::vector<ScoredSample> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& m = data[i].meta;
    out.push_back({m.id, probs[i], data[i].label, {{"theta_e", m.theta_e}, {"flux_ratio", m.flux_ratio}}});
  }
  return out;
}

inline std::string strata_csv(const StratifiedReport& r) {
  std::string s = "key,lo,hi,n,positives,threshold,tp,fp,tn,fn,fn_rate\n";
  for (const auto& b : r.bins)
    for (const auto& cm : b.confusions) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%zu,%zu,%.17g,%zu,%zu,%zu,%zu,%.17g\n", r.key.c_str(), b.lo, b.hi, b.n, b.positives, cm.threshold,
                    cm.tp, cm.fp, cm.tn, cm.fn, false_negative_rate(cm));
      s += buf;
    }
  return s;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig c = prepare(a.common);
  if (!a.model.empty()) c.paths.checkpoint = a.model;
  if (!a.data.empty()) c.paths.data = a.data;
  if (a.threshold) c.metrics.threshold = *a.threshold;
  if (a.thresholds) c.metrics.thresholds = parse_list(*a.thresholds);
  if (!a.stratify.empty()) c.metrics.stratify = a.stratify;
  if (a.tpr10_max_fp) c.metrics.tpr10_max_fp = *a.tpr10_max_fp;
  for (const auto& k : c.metrics.stratify)
    if (k != "theta_e" && k != "flux_ratio") throw ConfigError("cannot stratify by '" + k + "' (theta_e, flux_ratio)");
  if (c.paths.checkpoint.empty()) throw ConfigError("no model given (use --model or /paths/checkpoint)");
  const auto manifest = manifest_path(c.paths.data);

  const auto ck = load_checkpoint(c.paths.checkpoint);
  c.model = ck.config;
  c.model_preset = "checkpoint";
  validate(c);
  const fs::path dir(c.paths.out);
  RunLog log(dir, err, "eval");
  write_effective_config(dir, to_json(c));

  const auto model = restore_model<float>(ck);
  const Dataset data = load_dataset(manifest);
  require_compatible(model, data);
  const RescaleMode mode = rescale_mode_from_string(ck.meta.value("preprocess", std::string("band")));
  const auto samples = scored_samples(data, predict(model, data, mode));

  auto report = evaluate(samples, c.metrics.threshold, c.metrics.thresholds, {c.metrics.tpr10_max_fp});
  // Einstein radius and flux ratio only exist for lenses, so strata cover
  // the positive class and chiefly report false-negative rates.
  std::vector<ScoredSample> lenses;
  for (const auto& s : samples)
    if (s.label == 1) lenses.push_back(s);
  for (const auto& key : c.metrics.stratify) {
    auto it = c.metrics.bins.find(key);
    report.strata.push_back(stratified_report(lenses, key, it == c.metrics.bins.end() ? std::vector<double>{} : it->second, c.metrics.thresholds));
    io::write_file(dir / ("strata_" + key + ".csv"), strata_csv(report.strata.back()));
  }

  io::write_file(dir / "scores.csv", scores_csv(samples));
  io::write_file(dir / "report.json", report_json(report, ck.config.name).dump(2) + "\n");
  io::write_file(dir / "roc.csv", roc_csv(report.roc));
  io::write_file(dir / "roc.svg", roc_svg({{ck.config.name, report.roc}}));
  io::write_file(dir / "confusion.csv", confusion_csv(report.confusions));
  io::write_file(dir / "confusion.svg", confusion_grid_svg(report.confusions));

  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu stamps: accuracy %.4f (threshold %g), AUROC %.4f, TPR0 %.4f, TPR10 %.4f", report.n, report.accuracy,
                report.threshold, report.auroc, report.tpr0, report.tpr10);
  out << buf << "\n";
  log.record(buf);
  return 0;
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::string sort = "auroc";
  std::string out;
};

inline int cmd_report(const ReportArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<ReportRow> rows;
  for (const auto& run : a.runs) {
    const fs::path p = fs::path(run) / "report.json";
    if (!fs::exists(p)) {
      err << "warning: skipping " << run << ": no report.json\n";
      continue;
    }
    json j;
    try {
      j = json::parse(io::read_file(p));
      rows.push_back({fs::path(run).lexically_normal().filename().string().empty() ? run : fs::path(run).lexically_normal().filename().string(),
                      j.value("model", std::string()), j.at("accuracy").get<double>(), j.at("auroc").get<double>(), j.at("tpr0").get<double>(),
                      j.at("tpr10").get<double>()});
    } catch (const json::exception& e) {
      err << "warning: skipping " << run << ": unreadable report.json (" << e.what() << ")\n";
    }
  }
  sort_rows(rows, a.sort);
  if (rows.empty()) throw IoError("no readable reports among the given runs");
  out << comparison_table(rows);
  if (!a.out.empty()) {
    io::write_file(fs::path(a.out) / "comparison.csv", comparison_csv(rows));
    io::write_file(fs::path(a.out) / "comparison.txt", comparison_table(rows));
  }
  return 0;
}

// ------------------------------------------------------------------ entry

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Transformer lens finder: simulate, train, eval, report"};
  app.name("lensformer");
  app.require_subcommand(1);

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "generate a synthetic stamp dataset");
  add_common(sim, sa.common);
  sim->add_option("--n", sa.n, "number of stamps");
  sim->add_option("--lens-fraction", sa.lens_fraction, "fraction of lenses");
  sim->add_option("--bands", sa.bands, "1 for single-band (r) stamps");
  sim->add_option("--preset", sa.preset, "simulator preset: desk or full");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a detector");
  add_common(tr, ta.common);
  tr->add_option("-d,--data", ta.data, "dataset manifest or directory");
  tr->add_option("--stages", ta.stages, "schedule, e.g. 1e-4:30,1e-5:10");
  tr->add_option("--batch-size", ta.batch_size, "mini-batch size");
  tr->add_option("--model", ta.model, "model preset: desk, desk-cnn, reference, reference-cnn, two-tower");
  tr->add_option("--rescale", ta.rescale, "preprocessing: band, stamp or none");
  tr->add_flag("--no-rotations", ta.no_rotations, "disable quarter-turn augmentation");
  tr->add_option("--resume", ta.resume, "continue from this checkpoint with the given stages");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "score a dataset and write reports");
  add_common(ev, ea.common);
  ev->add_option("-m,--model", ea.model, "checkpoint to evaluate");
  ev->add_option("-d,--data", ea.data, "dataset manifest or directory");
  ev->add_option("--threshold", ea.threshold, "classification threshold for accuracy");
  ev->add_option("--thresholds", ea.thresholds, "confusion-matrix thresholds, comma separated");
  ev->add_option("--stratify", ea.stratify, "theta_e and/or flux_ratio");
  ev->add_option("--tpr10-max-fp", ea.tpr10_max_fp, "false positives allowed by TPR10 (default 9)");

  ReportArgs ra;
  auto* rp = app.add_subcommand("report", "compare evaluated runs");
  rp->add_option("runs", ra.runs, "eval output directories")->required();
  rp->add_option("--sort", ra.sort, "accuracy, auroc, tpr0 or tpr10");
  rp->add_option("-o,--out", ra.out, "directory for comparison.csv");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    for (auto* sub : app.get_subcommands()) err << sub->help();
    return 1;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sa, out, err);
    if (tr->parsed()) return cmd_train(ta, out, err);
    if (ev->parsed()) return cmd_eval(ea, out, err);
    return cmd_report(ra, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

inline int run(int argc, char** argv) { return run(std::vector<std::string>(argv + 1, argv + argc)); }

}  // namespace lensformer::cli
