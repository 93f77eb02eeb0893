//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation of sampled molecule sets against ground truth: frequency
// ranking with isomorphism-aware grouping, top-k accuracy, top-k max
// Tanimoto, top-k min edit distance, and expert-threshold match rates.
//

#ifndef MSDIFF_EVALMETRICS_EVALMETRICS_HPP
#define MSDIFF_EVALMETRICS_EVALMETRICS_HPP

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "msdiff/chem/canonical.hpp"
#include "msdiff/chem/isomorphism.hpp"
#include "msdiff/chem/mol_graph.hpp"
#include "msdiff/fp/fingerprint.hpp"
#include "msdiff/mces/mces.hpp"
#include "msdiff/util/errors.hpp"

namespace msdiff {

/// Expert-defined structural similarity thresholds: a prediction is a
/// meaningful match at Tanimoto 0.4 and a close match at 0.675.
inline constexpr double kMeaningfulTanimoto = 0.4;
inline constexpr double kCloseTanimoto = 0.675;

/// Fingerprint settings used by every similarity metric; identical to the
/// conditioning fingerprint.
inline constexpr int kMetricFingerprintWidth = 2048;
inline constexpr int kMetricFingerprintRadius = 2;

struct RankedEntry {
  MolecularGraph graph;  // first-seen representative of its class
  int count = 0;
  std::string key;  // canonical form, also the tie-break ordering
};

struct RankedPredictions {
  std::vector<RankedEntry> entries;  // by count desc, then key asc
  int total_samples = 0;
  int invalid_samples = 0;  // dropped before ranking
};

/// Filters invalid graphs, groups the survivors by canonical form, and
/// orders classes by descending frequency with byte-wise key ties.
inline RankedPredictions rank_samples(std::span<const MolecularGraph> samples) {
  RankedPredictions rp;
  rp.total_samples = static_cast<int>(samples.size());
  std::map<std::string, std::size_t> by_key;
  for (const MolecularGraph &g : samples) {
    if (!is_valid(g).ok()) {
      ++rp.invalid_samples;
      continue;
    }
    std::string key = canonical_key(g);
    auto it = by_key.find(key);
    if (it == by_key.end()) {
      by_key.emplace(std::move(key), rp.entries.size());
      RankedEntry e;
      e.graph = g;
      e.count = 1;
      e.key = canonical_key(g);
      rp.entries.push_back(std::move(e));
    } else {
      ++rp.entries[it->second].count;
    }
  }
  std::sort(rp.entries.begin(), rp.entries.end(),
            [](const RankedEntry &a, const RankedEntry &b) {
              if (a.count != b.count) return a.count > b.count;
              return a.key < b.key;
            });
  return rp;
}

/// 1 iff any of the first k entries is isomorphic to the truth.
inline int topk_accuracy(const RankedPredictions &rp,
                         const MolecularGraph &truth, int k) {
  if (k < 1) throw DataError("topk_accuracy: k must be >= 1");
  int limit = std::min<int>(k, static_cast<int>(rp.entries.size()));
  for (int i = 0; i < limit; ++i)
    if (is_isomorphic(rp.entries[static_cast<std::size_t>(i)].graph, truth))
      return 1;
  return 0;
}

/// Max fingerprint similarity over the first k entries; 0 when none exist.
inline double topk_tanimoto(const RankedPredictions &rp,
                            const MolecularGraph &truth, int k,
                            int width = kMetricFingerprintWidth) {
  if (k < 1) throw DataError("topk_tanimoto: k must be >= 1");
  Fingerprint truth_fp =
      morgan_fingerprint(truth, width, kMetricFingerprintRadius);
  double best = 0.0;
  int limit = std::min<int>(k, static_cast<int>(rp.entries.size()));
  for (int i = 0; i < limit; ++i) {
    const MolecularGraph &g = rp.entries[static_cast<std::size_t>(i)].graph;
    best = std::max(
        best,
        tanimoto(morgan_fingerprint(g, width, kMetricFingerprintRadius),
                 truth_fp));
  }
  return best;
}

/// Min exact edit distance over the first k entries; empty when none exist
/// (the caller excludes such spectra from aggregates).
inline std::optional<double> topk_mces(const RankedPredictions &rp,
                                       const MolecularGraph &truth, int k) {
  if (k < 1) throw DataError("topk_mces: k must be >= 1");
  std::optional<double> best;
  int limit = std::min<int>(k, static_cast<int>(rp.entries.size()));
  for (int i = 0; i < limit; ++i) {
    McesResult r =
        mces_distance(rp.entries[static_cast<std::size_t>(i)].graph, truth);
    if (!best || r.distance < *best) best = r.distance;
  }
  return best;
}

struct MatchRates {
  int meaningful = 0;
  int close = 0;
};

/// Pure threshold logic, split out so the boundary semantics (inclusive at
/// both thresholds) are testable without fingerprints.
inline MatchRates match_rates_from_similarity(double tanimoto_value) {
  MatchRates r;
  r.meaningful = tanimoto_value >= kMeaningfulTanimoto ? 1 : 0;
  r.close = tanimoto_value >= kCloseTanimoto ? 1 : 0;
  return r;
}

inline MatchRates match_rates(const RankedPredictions &rp,
                              const MolecularGraph &truth, int k,
                              int width = kMetricFingerprintWidth) {
  return match_rates_from_similarity(topk_tanimoto(rp, truth, k, width));
}

struct SpectrumEvaluation {
  std::string id;
  int total_samples = 0;
  int valid_samples = 0;
  int top1_accuracy = 0;
  int top10_accuracy = 0;
  double top1_tanimoto = 0.0;
  double top10_tanimoto = 0.0;
  std::optional<double> top1_mces;
  std::optional<double> top10_mces;
  MatchRates top1_match;
  MatchRates top10_match;
};

inline SpectrumEvaluation evaluate_spectrum(const std::string &id,
                                            const RankedPredictions &rp,
                                            const MolecularGraph &truth) {
  SpectrumEvaluation row;
  row.id = id;
  row.total_samples = rp.total_samples;
  row.valid_samples = rp.total_samples - rp.invalid_samples;
  row.top1_accuracy = topk_accuracy(rp, truth, 1);
  row.top10_accuracy = topk_accuracy(rp, truth, 10);
  row.top1_tanimoto = topk_tanimoto(rp, truth, 1);
  row.top10_tanimoto = topk_tanimoto(rp, truth, 10);
  row.top1_mces = topk_mces(rp, truth, 1);
  row.top10_mces = topk_mces(rp, truth, 10);
  row.top1_match = match_rates_from_similarity(row.top1_tanimoto);
  row.top10_match = match_rates_from_similarity(row.top10_tanimoto);
  return row;
}

/// Aggregates over spectra. Accuracy and match rates average over every
/// spectrum; Tanimoto and edit-distance means skip spectra that produced no
/// valid samples, with the skip count reported separately.
struct MetricsReport {
  std::vector<SpectrumEvaluation> rows;
  int spectra = 0;
  int mces_excluded = 0;  // spectra with no ranked predictions
  double validity = 0.0;  // valid samples / total samples
  double top1_accuracy = 0.0;
  double top10_accuracy = 0.0;
  double top1_tanimoto = 0.0;
  double top10_tanimoto = 0.0;
  std::optional<double> top1_mces;
  std::optional<double> top10_mces;
  double top1_meaningful = 0.0;
  double top1_close = 0.0;
  double top10_meaningful = 0.0;
  double top10_close = 0.0;
};

inline MetricsReport aggregate_metrics(std::vector<SpectrumEvaluation> rows) {
  if (rows.empty()) throw DataError("aggregate_metrics: no rows");
  MetricsReport report;
  report.spectra = static_cast<int>(rows.size());
  long total = 0, valid = 0;
  double t1 = 0, t10 = 0, m1 = 0, m10 = 0;
  int scored = 0;
  for (const SpectrumEvaluation &r : rows) {
    total += r.total_samples;
    valid += r.valid_samples;
    report.top1_accuracy += r.top1_accuracy;
    report.top10_accuracy += r.top10_accuracy;
    report.top1_meaningful += r.top1_match.meaningful;
    report.top1_close += r.top1_match.close;
    report.top10_meaningful += r.top10_match.meaningful;
    report.top10_close += r.top10_match.close;
    if (r.top1_mces && r.top10_mces) {
      ++scored;
      t1 += r.top1_tanimoto;
      t10 += r.top10_tanimoto;
      m1 += *r.top1_mces;
      m10 += *r.top10_mces;
    } else {
      ++report.mces_excluded;
    }
  }
  double n = static_cast<double>(rows.size());
  report.validity =
      total > 0 ? static_cast<double>(valid) / static_cast<double>(total) : 0.0;
  report.top1_accuracy /= n;
  report.top10_accuracy /= n;
  report.top1_meaningful /= n;
  report.top1_close /= n;
  report.top10_meaningful /= n;
  report.top10_close /= n;
  if (scored > 0) {
    report.top1_tanimoto = t1 / scored;
    report.top10_tanimoto = t10 / scored;
    report.top1_mces = m1 / scored;
    report.top10_mces = m10 / scored;
  }
  report.rows = std::move(rows);
  return report;
}

/// Per-spectrum rows then a summary block. Plain decimal fractions except
/// the lines whose names carry '%', which are scaled to percentages.
inline std::string metrics_tsv(const MetricsReport &report) {
  std::ostringstream out;
  out.precision(6);
  auto mces_cell = [](const std::optional<double> &v) {
    if (!v) return std::string("-");
    std::ostringstream s;
    s.precision(6);
    s << *v;
    return s.str();
  };
  out << "id\tsamples\tvalid\ttop1_accuracy\ttop10_accuracy\ttop1_tanimoto"
         "\ttop10_tanimoto\ttop1_mces\ttop10_mces\ttop1_meaningful"
         "\ttop1_close\ttop10_meaningful\ttop10_close\n";
  for (const SpectrumEvaluation &r : report.rows) {
    out << r.id << '\t' << r.total_samples << '\t' << r.valid_samples << '\t'
        << r.top1_accuracy << '\t' << r.top10_accuracy << '\t'
        << r.top1_tanimoto << '\t' << r.top10_tanimoto << '\t'
        << mces_cell(r.top1_mces) << '\t' << mces_cell(r.top10_mces) << '\t'
        << r.top1_match.meaningful << '\t' << r.top1_match.close << '\t'
        << r.top10_match.meaningful << '\t' << r.top10_match.close << '\n';
  }
  out << "\n";
  out << "Top-1 Accuracy\t" << report.top1_accuracy << '\n';
  out << "Top-1 MCES\t" << mces_cell(report.top1_mces) << '\n';
  out << "Top-1 Tanimoto\t" << report.top1_tanimoto << '\n';
  out << "Top-10 Accuracy\t" << report.top10_accuracy << '\n';
  out << "Top-10 MCES\t" << mces_cell(report.top10_mces) << '\n';
  out << "Top-10 Tanimoto\t" << report.top10_tanimoto << '\n';
  out << "% Valid\t" << 100.0 * report.validity << '\n';
  out << "Top-1 % Meaningful match\t" << 100.0 * report.top1_meaningful
      << '\n';
  out << "Top-1 % Close match\t" << 100.0 * report.top1_close << '\n';
  out << "Top-10 % Meaningful match\t" << 100.0 * report.top10_meaningful
      << '\n';
  out << "Top-10 % Close match\t" << 100.0 * report.top10_close << '\n';
  out << "Spectra\t" << report.spectra << '\n';
  out << "MCES excluded spectra\t" << report.mces_excluded << '\n';
  return out.str();
}

}  // namespace msdiff

#endif  // MSDIFF_EVALMETRICS_EVALMETRICS_HPP
