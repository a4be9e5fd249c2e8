#pragma once
// File forms of evaluation results: scores CSV, report JSON, ROC CSV/SVG,
// confusion-matrix grid SVG and the multi-run comparison table.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lensformer/json_util.hpp"
#include "lensformer/metrics.hpp"
#include "lensformer/stamp.hpp"

namespace lensformer {

namespace detail {
inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}
inline std::string exact(double v) { return fmt("%.17g", v); }
}  // namespace detail

// ------------------------------------------------------------- scores CSV

/// id,score,label[,theta_e,flux_ratio]; scores keep 17 significant digits
/// so every metric recomputes bit-for-bit from the file.
inline std::string scores_csv(const std::vector<ScoredSample>& samples) {
  bool with_meta = !samples.empty();
  for (const auto& s : samples) with_meta = with_meta && s.meta.count("theta_e") && s.meta.count("flux_ratio");
  std::string out = with_meta ? "id,score,label,theta_e,flux_ratio\n" : "id,score,label\n";
  for (const auto& s : samples) {
    out += s.id + "," + detail::exact(s.score) + "," + std::to_string(s.label);
    if (with_meta) out += "," + detail::exact(s.meta.at("theta_e")) + "," + detail::exact(s.meta.at("flux_ratio"));
    out += "\n";
  }
  return out;
}

inline std::vector<ScoredSample> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scores file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
  }
  if (cols.size() < 3 || cols[0] != "id" || cols[1] != "score" || cols[2] != "label") throw IoError(path.string() + ": bad header");
  std::vector<ScoredSample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> f;
    for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
    if (f.size() != cols.size()) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols.size()) + " fields");
    try {
      ScoredSample s{f[0], std::stod(f[1]), std::stoi(f[2]), {}};
      for (std::size_t i = 3; i < f.size(); ++i) s.meta[cols[i]] = std::stod(f[i]);
      out.push_back(std::move(s));
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": unparsable number");
    }
  }
  return out;
}

// ------------------------------------------------------------ report JSON

inline json confusion_json(const ConfusionMatrix& cm) {
  json j{{"threshold", cm.threshold}, {"tp", cm.tp}, {"fp", cm.fp}, {"tn", cm.tn}, {"fn", cm.fn}};
  if (cm.total()) {
    j["accuracy"] = accuracy(cm);
    j["tpr"] = true_positive_rate(cm);
    j["fpr"] = false_positive_rate(cm);
    j["fn_rate"] = false_negative_rate(cm);
  }
  return j;
}

inline json report_json(const EvalReport& r, const std::string& model_name = "") {
  json j{{"model", model_name}, {"n", r.n},           {"positives", r.positives}, {"threshold", r.threshold},
         {"accuracy", r.accuracy}, {"auroc", r.auroc}, {"tpr0", r.tpr0},           {"tpr10", r.tpr10}};
  j["confusion"] = json::array();
  for (const auto& cm : r.confusions) j["confusion"].push_back(confusion_json(cm));
  j["strata"] = json::array();
  for (const auto& st : r.strata) {
    json s{{"key", st.key}, {"edges", st.edges}, {"bins", json::array()}};
    for (const auto& b : st.bins) {
      json bj{{"lo", std::isfinite(b.lo) ? json(b.lo) : json(nullptr)},
              {"hi", std::isfinite(b.hi) ? json(b.hi) : json(nullptr)},
              {"n", b.n},
              {"positives", b.positives},
              {"confusion", json::array()}};
      for (const auto& cm : b.confusions) bj["confusion"].push_back(confusion_json(cm));
      if (b.auroc) bj["auroc"] = *b.auroc;
      s["bins"].push_back(bj);
    }
    j["strata"].push_back(s);
  }
  return j;
}

inline std::string roc_csv(const RocCurve& roc) {
  std::string out = "threshold,fpr,tpr\n";
  for (const auto& p : roc.points) out += (std::isinf(p.threshold) ? std::string("inf") : detail::exact(p.threshold)) + "," + detail::exact(p.fpr) + "," + detail::exact(p.tpr) + "\n";
  return out;
}

inline std::string confusion_csv(const std::vector<ConfusionMatrix>& cms) {
  std::string out = "threshold,tp,fp,tn,fn,accuracy\n";
  for (const auto& cm : cms)
    out += detail::exact(cm.threshold) + "," + std::to_string(cm.tp) + "," + std::to_string(cm.fp) + "," + std::to_string(cm.tn) + "," +
           std::to_string(cm.fn) + "," + (cm.total() ? detail::exact(accuracy(cm)) : std::string()) + "\n";
  return out;
}

// ------------------------------------------------------------------- SVG

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct LabeledRoc {
  std::string label;
  RocCurve roc;
};

/// TPR against FPR on a unit square, one polyline per curve.
inline std::string roc_svg(const std::vector<LabeledRoc>& curves, const std::string& title = "ROC") {
  const double w = 420, h = 420, m = 50, side = 320;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << svg_escape(title) << "</text>\n";
  o << "<rect x=\"" << m << "\" y=\"" << m << "\" width=\"" << side << "\" height=\"" << side << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << m << "\" y1=\"" << m + side << "\" x2=\"" << m + side << "\" y2=\"" << m << "\" stroke=\"#aaa\" stroke-dasharray=\"4 4\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double f = i / 5.0;
    o << "<text x=\"" << m + f * side << "\" y=\"" << m + side + 16 << "\" text-anchor=\"middle\">" << detail::fmt("%.1f", f) << "</text>\n";
    o << "<text x=\"" << m - 6 << "\" y=\"" << m + side - f * side + 4 << "\" text-anchor=\"end\">" << detail::fmt("%.1f", f) << "</text>\n";
  }
  o << "<text x=\"" << m + side / 2 << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\">False positive rate</text>\n";
  o << "<text x=\"14\" y=\"" << m + side / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " << m + side / 2
    << ")\">True positive rate</text>\n";
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const char* col = colors[c % 6];
    o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : curves[c].roc.points) o << detail::fmt("%.2f", m + p.fpr * side) << "," << detail::fmt("%.2f", m + side - p.tpr * side) << " ";
    o << "\"/>\n";
    const double ly = m + side - 12.0 - 16.0 * static_cast<double>(curves.size() - 1 - c);
    o << "<text x=\"" << m + side - 8 << "\" y=\"" << ly << "\" text-anchor=\"end\" fill=\"" << col << "\">"
      << svg_escape(curves[c].label) << " (AUROC " << detail::fmt("%.3f", curves[c].roc.auroc) << ")</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

/// One 2x2 matrix per threshold: rows true class 0/1, columns predicted 0/1.
inline std::string confusion_grid_svg(const std::vector<ConfusionMatrix>& cms, const std::string& title = "Confusion matrices") {
  const double cell = 70, gap = 40, top = 60, left = 30;
  const double w = left * 2 + static_cast<double>(cms.size()) * (2 * cell + gap), h = top + 2 * cell + 40;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << svg_escape(title) << "</text>\n";
  for (std::size_t k = 0; k < cms.size(); ++k) {
    const auto& cm = cms[k];
    const double x0 = left + static_cast<double>(k) * (2 * cell + gap);
    o << "<text x=\"" << x0 + cell << "\" y=\"" << top - 10 << "\" text-anchor=\"middle\">threshold " << detail::fmt("%g", cm.threshold) << "</text>\n";
    const std::size_t counts[2][2] = {{cm.tn, cm.fp}, {cm.fn, cm.tp}};
    const double row_total[2] = {static_cast<double>(cm.tn + cm.fp), static_cast<double>(cm.fn + cm.tp)};
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) {
        const double frac = row_total[r] > 0 ? static_cast<double>(counts[r][c]) / row_total[r] : 0.0;
        const int shade = static_cast<int>(std::lround(255 - 160 * frac));
        o << "<rect x=\"" << x0 + c * cell << "\" y=\"" << top + r * cell << "\" width=\"" << cell << "\" height=\"" << cell
          << "\" fill=\"rgb(" << shade << "," << shade << ",255)\" stroke=\"black\"/>\n";
        o << "<text x=\"" << x0 + c * cell + cell / 2 << "\" y=\"" << top + r * cell + cell / 2 + 4 << "\" text-anchor=\"middle\">"
          << counts[r][c] << "</text>\n";
      }
  }
  o << "<text x=\"" << w / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">rows: true 0/1, columns: predicted 0/1</text>\n";
  o << "</svg>\n";
  return o.str();
}

// ------------------------------------------------------- comparison table

struct ReportRow {
  std::string run;
  std::string model;
  double accuracy = 0, auroc = 0, tpr0 = 0, tpr10 = 0;
};

/// Sorts descending by accuracy, auroc, tpr0 or tpr10.
inline void sort_rows(std::vector<ReportRow>& rows, const std::string& key) {
  auto get = [&](const ReportRow& r) {
    if (key == "accuracy") return r.accuracy;
    if (key == "auroc") return r.auroc;
    if (key == "tpr0") return r.tpr0;
    if (key == "tpr10") return r.tpr10;
    throw ConfigError("unknown sort key '" + key + "' (accuracy, auroc, tpr0, tpr10)");
  };
  get(ReportRow{});
  std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) { return get(a) > get(b); });
}

inline std::string comparison_csv(const std::vector<ReportRow>& rows) {
  std::string out = "run,model,accuracy,auroc,tpr0,tpr10\n";
  for (const auto& r : rows)
    out += r.run + "," + r.model + "," + detail::exact(r.accuracy) + "," + detail::exact(r.auroc) + "," + detail::exact(r.tpr0) + "," +
           detail::exact(r.tpr10) + "\n";
  return out;
}

inline std::string comparison_table(const std::vector<ReportRow>& rows) {
  std::size_t wr = 3, wm = 5;
  for (const auto& r : rows) {
    wr = std::max(wr, r.run.size());
    wm = std::max(wm, r.model.size());
  }
  auto pad = [](std::string s, std::size_t n) { return s + std::string(n > s.size() ? n - s.size() : 0, ' '); };
  std::string out = pad("run", wr) + "  " + pad("model", wm) + "  accuracy   AUROC   TPR0    TPR10\n";
  for (const auto& r : rows)
    out += pad(r.run, wr) + "  " + pad(r.model, wm) + "  " + detail::fmt("%8.4f", r.accuracy) + "  " + detail::fmt("%6.4f", r.auroc) +
           "  " + detail::fmt("%6.4f", r.tpr0) + "  " + detail::fmt("%6.4f", r.tpr10) + "\n";
  return out;
}

}  // namespace lensformer
