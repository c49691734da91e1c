// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Equal error rate, corpus scoring and the system x condition report.
// Score polarity is global: higher scores mean "more bona fide".

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "amulet/dataset.hpp"
#include "amulet/errors.hpp"

namespace amulet::eval {

struct ScoreSet {
  std::vector<double> bona_scores;
  std::vector<double> spoof_scores;
  std::string condition;
  std::string system;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

/// Sweeps every distinct score t as a threshold with FRR(t) = #{bona < t}/nb
/// and FAR(t) = #{spoof >= t}/ns, then linearly interpolates FAR - FRR
/// between the two adjacent thresholds where it changes sign.
inline EerResult compute_eer(const ScoreSet& s) {
  if (s.bona_scores.empty() || s.spoof_scores.empty()) {
    throw InputError("compute_eer: both bona fide and spoof scores are required");
  }
  std::vector<double> bona = s.bona_scores, spoof = s.spoof_scores;
  std::sort(bona.begin(), bona.end());
  std::sort(spoof.begin(), spoof.end());
  std::vector<double> thr;
  thr.reserve(bona.size() + spoof.size());
  std::merge(bona.begin(), bona.end(), spoof.begin(), spoof.end(), std::back_inserter(thr));
  thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
  // One step past the top score: every bona fide rejected, no spoof accepted.
  thr.push_back(std::nextafter(thr.back(), std::numeric_limits<double>::infinity()));

  const double nb = static_cast<double>(bona.size()), ns = static_cast<double>(spoof.size());
  std::size_t ib = 0, is = 0;  // counts of bona < t and spoof < t
  double prev_frr = 0.0, prev_far = 1.0, prev_t = thr.front();
  for (std::size_t j = 0; j < thr.size(); ++j) {
    const double t = thr[j];
    while (ib < bona.size() && bona[ib] < t) ++ib;
    while (is < spoof.size() && spoof[is] < t) ++is;
    const double frr = static_cast<double>(ib) / nb;
    const double far = static_cast<double>(spoof.size() - is) / ns;
    const double d = far - frr;
    if (j > 0 && d <= 0.0) {
      const double d_prev = prev_far - prev_frr;
      const double lambda = d_prev / (d_prev - d);
      return {prev_frr + lambda * (frr - prev_frr), prev_t + lambda * (t - prev_t)};
    }
    prev_frr = frr;
    prev_far = far;
    prev_t = t;
  }
  // FAR - FRR is -1 at the last threshold, so the loop always returns.
  throw InternalError("compute_eer: no FAR/FRR crossing found");
}

/// Scores every eval-split entry of `manifest` with `scorer`.
template <typename Scorer>
ScoreSet score_corpus(Scorer&& scorer, const dataset::Manifest& manifest, const std::string& condition,
                      const std::string& system = "", int jobs = 1) {
  std::vector<const dataset::ManifestEntry*> items;
  for (const auto& e : manifest.entries)
    if (e.split == dataset::Split::eval) items.push_back(&e);
  if (items.empty()) throw InputError("score_corpus: manifest has no eval entries");
  std::vector<double> scores(items.size());
  dataset::parallel_for(items.size(), jobs, [&](std::size_t i) {
    scores[i] = scorer(dataset::load_clip(manifest, *items[i]));
  });
  ScoreSet out;
  out.condition = condition;
  out.system = system;
  for (std::size_t i = 0; i < items.size(); ++i) {
    (items[i]->label == Label::bonafide ? out.bona_scores : out.spoof_scores).push_back(scores[i]);
  }
  return out;
}

// ---------------------------------------------------------------- reporting

struct ReportCell {
  std::optional<double> eer_percent;  // nullopt = NA
  std::size_t n_bona = 0;
  std::size_t n_spoof = 0;
};

struct EvalReport {
  std::string title;
  std::vector<std::string> systems;
  std::vector<std::string> conditions;
  std::vector<std::vector<ReportCell>> cells;            // [system][condition]
  std::vector<std::optional<double>> averages;           // per system, over non-NA cells
  std::vector<std::optional<std::size_t>> trainable;     // per system
  std::vector<std::string> footnotes;

  const ReportCell& cell(const std::string& system, const std::string& condition) const {
    const auto si = std::find(systems.begin(), systems.end(), system) - systems.begin();
    const auto ci = std::find(conditions.begin(), conditions.end(), condition) - conditions.begin();
    if (si >= static_cast<long>(systems.size()) || ci >= static_cast<long>(conditions.size())) {
      throw InputError("report has no cell " + system + " x " + condition);
    }
    return cells[si][ci];
  }
  std::optional<double> average(const std::string& system) const {
    const auto si = std::find(systems.begin(), systems.end(), system) - systems.begin();
    if (si >= static_cast<long>(systems.size())) throw InputError("report has no system " + system);
    return averages[si];
  }
};

inline std::optional<double> row_average(const std::vector<ReportCell>& row) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : row) {
    if (c.eer_percent) {
      sum += *c.eer_percent;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

/// Assembles the system x condition EER matrix. Every (system, condition)
/// pair needs a score set or an entry in `na`.
inline EvalReport build_report(const std::string& title, const std::vector<std::string>& systems,
                               const std::vector<std::string>& conditions, const std::vector<ScoreSet>& sets,
                               const std::map<std::string, std::size_t>& trainable_params = {},
                               const std::set<std::pair<std::string, std::string>>& na = {}) {
  std::map<std::pair<std::string, std::string>, const ScoreSet*> index;
  for (const auto& s : sets) index[{s.system, s.condition}] = &s;
  EvalReport r;
  r.title = title;
  r.systems = systems;
  r.conditions = conditions;
  std::string missing;
  for (const auto& sys : systems) {
    std::vector<ReportCell> row;
    for (const auto& cond : conditions) {
      ReportCell c;
      auto it = index.find({sys, cond});
      if (it != index.end()) {
        c.eer_percent = 100.0 * compute_eer(*it->second).eer;
        c.n_bona = it->second->bona_scores.size();
        c.n_spoof = it->second->spoof_scores.size();
      } else if (!na.count({sys, cond})) {
        missing += " " + sys + "x" + cond;
      }
      row.push_back(c);
    }
    r.averages.push_back(row_average(row));
    r.cells.push_back(std::move(row));
    auto tp = trainable_params.find(sys);
    r.trainable.push_back(tp == trainable_params.end() ? std::nullopt : std::optional<std::size_t>(tp->second));
  }
  if (!missing.empty()) throw InputError("build_report: missing cells without NA marker:" + missing);
  return r;
}

inline std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Machine-readable artifact: system,condition,eer_percent,n_bona,n_spoof,trainable_params.
inline std::string render_csv(const EvalReport& r) {
  std::string out = "system,condition,eer_percent,n_bona,n_spoof,trainable_params\n";
  for (std::size_t s = 0; s < r.systems.size(); ++s) {
    for (std::size_t c = 0; c < r.conditions.size(); ++c) {
      const auto& cell = r.cells[s][c];
      out += r.systems[s] + "," + r.conditions[c] + ",";
      out += cell.eer_percent ? fmt_full(*cell.eer_percent) : "NA";
      out += "," + std::to_string(cell.n_bona) + "," + std::to_string(cell.n_spoof) + ",";
      out += r.trainable[s] ? std::to_string(*r.trainable[s]) : "NA";
      out += "\n";
    }
  }
  return out;
}

struct CsvRow {
  std::string system, condition;
  std::optional<double> eer_percent;
  std::size_t n_bona = 0, n_spoof = 0;
  std::optional<std::size_t> trainable_params;
};

inline std::vector<CsvRow> parse_csv(const std::string& text) {
  std::vector<CsvRow> rows;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) f.push_back(tok);
    if (f.size() != 6) throw InputError("report CSV: expected 6 fields in '" + line + "'");
    CsvRow r;
    r.system = f[0];
    r.condition = f[1];
    if (f[2] != "NA") r.eer_percent = std::stod(f[2]);
    r.n_bona = std::stoul(f[3]);
    r.n_spoof = std::stoul(f[4]);
    if (f[5] != "NA") r.trainable_params = std::stoul(f[5]);
    rows.push_back(r);
  }
  return rows;
}

/// Plain-text table: one row per system, EER (%) per condition, the row
/// average and the trainable-parameter count.
inline std::string render_text(const EvalReport& r) {
  std::size_t w0 = 6;
  for (const auto& s : r.systems) w0 = std::max(w0, s.size());
  std::ostringstream os;
  os << r.title << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(w0), "Model");
  os << buf;
  for (const auto& c : r.conditions) {
    std::snprintf(buf, sizeof buf, " %12s", c.c_str());
    os << buf;
  }
  os << "         Avg.           TP\n";
  for (std::size_t s = 0; s < r.systems.size(); ++s) {
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(w0), r.systems[s].c_str());
    os << buf;
    for (const auto& cell : r.cells[s]) {
      if (cell.eer_percent) std::snprintf(buf, sizeof buf, " %12.2f", *cell.eer_percent);
      else std::snprintf(buf, sizeof buf, " %12s", "NA");
      os << buf;
    }
    if (r.averages[s]) std::snprintf(buf, sizeof buf, " %12.2f", *r.averages[s]);
    else std::snprintf(buf, sizeof buf, " %12s", "NA");
    os << buf;
    if (r.trainable[s]) std::snprintf(buf, sizeof buf, " %12zu", *r.trainable[s]);
    else std::snprintf(buf, sizeof buf, " %12s", "-");
    os << buf << "\n";
  }
  for (const auto& f : r.footnotes) os << "  * " << f << "\n";
  return os.str();
}

/// 100 * trainable(ase) / trainable(fft).
inline double param_ratio(double ase_trainable, double fft_trainable) {
  if (!(fft_trainable > 0.0)) throw InputError("param_ratio: full fine-tuning parameter count is zero");
  return 100.0 * ase_trainable / fft_trainable;
}

}  // namespace amulet::eval
