// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "sffda/errors.hpp"

namespace sffda {

/// Positive class = anxiety (label 1).
struct ConfusionCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline void check_inputs(const std::vector<int>& labels, const std::vector<double>& probs) {
  if (labels.size() != probs.size()) {
    throw ConfigError("labels (" + std::to_string(labels.size()) + ") and probs (" +
                      std::to_string(probs.size()) + ") differ in length");
  }
  if (labels.empty()) throw DataError("no samples to evaluate");
  for (int y : labels)
    if (y != 0 && y != 1) throw DataError("labels must be 0 or 1");
}

/// Predicts positive iff prob >= thr.
inline ConfusionCounts confusion(const std::vector<int>& labels, const std::vector<double>& probs, double thr) {
  check_inputs(labels, probs);
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = probs[i] >= thr;
    if (labels[i] == 1) {
      (pred ? c.tp : c.fn)++;
    } else {
      (pred ? c.fp : c.tn)++;
    }
  }
  return c;
}

struct Metrics {
  double precision = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  std::vector<std::string> warnings;  // one per 0/0 sentinel
};

inline Metrics metrics(const ConfusionCounts& c) {
  Metrics m;
  auto ratio = [&m](std::size_t num, std::size_t den, const char* name) {
    if (den == 0) {
      m.warnings.push_back(std::string(name) + " undefined (0/0), reported as 0");
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.precision = ratio(c.tp, c.tp + c.fp, "precision");
  m.sensitivity = ratio(c.tp, c.tp + c.fn, "sensitivity");
  m.specificity = ratio(c.tn, c.tn + c.fp, "specificity");
  m.accuracy = ratio(c.tp + c.tn, c.total(), "accuracy");
  m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, "F1");
  return m;
}

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

struct Roc {
  std::vector<RocPoint> curve;  // descending threshold, starting at (0,0)
  double auc = 0.0;
};

/// Threshold sweep over the distinct probabilities (positive iff prob >= t),
/// anchored at (0,0) with threshold +inf. AUC by the trapezoidal rule.
inline Roc roc_auc(const std::vector<int>& labels, const std::vector<double>& probs) {
  check_inputs(labels, probs);
  const auto P = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t N = labels.size() - P;
  if (P == 0 || N == 0) throw DataError("ROC needs both classes present");
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  Roc roc;
  roc.curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double t = probs[order[k]];
    while (k < order.size() && probs[order[k]] == t) {
      (labels[order[k]] == 1 ? tp : fp)++;
      ++k;
    }
    const RocPoint pt{t, static_cast<double>(fp) / static_cast<double>(N),
                      static_cast<double>(tp) / static_cast<double>(P)};
    const RocPoint& prev = roc.curve.back();
    roc.auc += (pt.fpr - prev.fpr) * (pt.tpr + prev.tpr) / 2.0;
    roc.curve.push_back(pt);
  }
  return roc;
}

/// Shortest decimal text that reads back to the same double.
inline std::string format_number(double v) {
  if (v == std::numeric_limits<double>::infinity()) return "inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_roc(std::ostream& out, const Roc& roc) {
  out << "threshold\tfpr\ttpr\n";
  for (const auto& p : roc.curve) {
    out << format_number(p.threshold) << '\t' << format_number(p.fpr) << '\t' << format_number(p.tpr) << '\n';
  }
}

struct Report {
  ConfusionCounts counts;
  Metrics metrics;
  double auc = 0.0;
  double thr = 0.5;
  std::map<std::string, double> importance;  // stream -> accuracy drop
};

/// key<TAB>value lines.
inline void write_report(std::ostream& out, const Report& r) {
  out << "Pre\t" << format_number(r.metrics.precision) << '\n'
      << "Sen\t" << format_number(r.metrics.sensitivity) << '\n'
      << "Spe\t" << format_number(r.metrics.specificity) << '\n'
      << "Acc\t" << format_number(r.metrics.accuracy) << '\n'
      << "F1\t" << format_number(r.metrics.f1) << '\n'
      << "AUC\t" << format_number(r.auc) << '\n'
      << "thr\t" << format_number(r.thr) << '\n'
      << "TP\t" << r.counts.tp << '\n'
      << "TN\t" << r.counts.tn << '\n'
      << "FP\t" << r.counts.fp << '\n'
      << "FN\t" << r.counts.fn << '\n';
  for (const auto& [stream, score] : r.importance) out << "importance." << stream << '\t' << format_number(score) << '\n';
  for (const auto& w : r.metrics.warnings) out << "warning\t" << w << '\n';
}

}  // namespace sffda
