/* Copyright 2026 The Flowsense Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef FLOWSENSE_METRICS_HPP_
#define FLOWSENSE_METRICS_HPP_

#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowsense/common.hpp"
#include "flowsense/confidence.hpp"
#include "flowsense/labels.hpp"

namespace flowsense {

inline constexpr const char* kAbstainToken = "ABSTAIN";

/// C x C counts (rows = true class, columns = predicted) plus per-true-class
/// abstention counts kept outside the grid. Grid + abstentions = all samples.
struct ConfusionMatrix {
  std::vector<std::vector<size_t>> counts;  // [true][pred]
  std::vector<size_t> abstained;            // [true]

  explicit ConfusionMatrix(int num_classes = 0)
      : counts(static_cast<size_t>(num_classes),
               std::vector<size_t>(static_cast<size_t>(num_classes), 0)),
        abstained(static_cast<size_t>(num_classes), 0) {}

  int num_classes() const { return static_cast<int>(counts.size()); }

  size_t total() const {
    size_t t = 0;
    for (const auto& row : counts)
      for (size_t v : row) t += v;
    for (size_t v : abstained) t += v;
    return t;
  }

  size_t correct() const {
    size_t t = 0;
    for (size_t c = 0; c < counts.size(); ++c) t += counts[c][c];
    return t;
  }
};

inline ConfusionMatrix confusion(const std::vector<std::pair<int, Decision>>& decisions,
                                 int num_classes) {
  ConfusionMatrix m(num_classes);
  for (const auto& [true_label, d] : decisions) {
    if (true_label < 0 || true_label >= num_classes)
      throw DataError("true label out of range in confusion()");
    if (d.abstained())
      ++m.abstained[static_cast<size_t>(true_label)];
    else
      ++m.counts[static_cast<size_t>(true_label)][static_cast<size_t>(*d.predicted)];
  }
  return m;
}

/// How abstained samples enter the F1 computation. The paper's figures track
/// the quality of retained predictions, which is the kExclude reading; the
/// kCountAsMiss reading charges each abstention as a false negative of its
/// true class (never as a false positive). Both are reported.
enum class AbstainPolicy { kExclude, kCountAsMiss };

namespace metrics_detail {

struct PerClass {
  double tp = 0, fp = 0, fn = 0;
};

inline std::vector<PerClass> tally(const ConfusionMatrix& m, AbstainPolicy policy) {
  auto c = static_cast<size_t>(m.num_classes());
  std::vector<PerClass> out(c);
  for (size_t t = 0; t < c; ++t)
    for (size_t p = 0; p < c; ++p) {
      if (t == p) {
        out[t].tp += static_cast<double>(m.counts[t][p]);
      } else {
        out[t].fn += static_cast<double>(m.counts[t][p]);
        out[p].fp += static_cast<double>(m.counts[t][p]);
      }
    }
  if (policy == AbstainPolicy::kCountAsMiss)
    for (size_t t = 0; t < c; ++t) out[t].fn += static_cast<double>(m.abstained[t]);
  return out;
}

/// 2TP / (2TP + FP + FN); a class with no actual and no predicted positives
/// contributes 0.
inline double f1(const PerClass& pc) {
  double denom = 2.0 * pc.tp + pc.fp + pc.fn;
  return denom == 0.0 ? 0.0 : 2.0 * pc.tp / denom;
}

}  // namespace metrics_detail

/// Unweighted mean of per-class F1.
inline double macro_f1(const ConfusionMatrix& m,
                       AbstainPolicy policy = AbstainPolicy::kCountAsMiss) {
  if (m.num_classes() == 0) return 0.0;
  auto per_class = metrics_detail::tally(m, policy);
  double sum = 0.0;
  for (const auto& pc : per_class) sum += metrics_detail::f1(pc);
  return sum / static_cast<double>(m.num_classes());
}

/// Support-weighted mean of per-class F1. Supports follow the policy: with
/// kCountAsMiss they include abstained samples, with kExclude only retained
/// ones.
inline double weighted_f1(const ConfusionMatrix& m,
                          AbstainPolicy policy = AbstainPolicy::kCountAsMiss) {
  auto per_class = metrics_detail::tally(m, policy);
  double sum = 0.0, weight_sum = 0.0;
  for (size_t t = 0; t < per_class.size(); ++t) {
    double support = 0.0;
    for (size_t p = 0; p < per_class.size(); ++p)
      support += static_cast<double>(m.counts[t][p]);
    if (policy == AbstainPolicy::kCountAsMiss)
      support += static_cast<double>(m.abstained[t]);
    sum += support * metrics_detail::f1(per_class[t]);
    weight_sum += support;
  }
  return weight_sum == 0.0 ? 0.0 : sum / weight_sum;
}

/// Fraction of samples classified correctly; abstentions count as incorrect,
/// so for a plain classifier (no abstentions) this is ordinary accuracy.
inline double accuracy(const ConfusionMatrix& m) {
  size_t total = m.total();
  return total == 0 ? 0.0 : static_cast<double>(m.correct()) / static_cast<double>(total);
}

struct Coverage {
  double overall = 0.0;   // correct and retained / all samples
  double relevant = 0.0;  // same, restricted to true label != background
};

inline Coverage coverage(const ConfusionMatrix& m, int background) {
  Coverage cov;
  size_t total = m.total();
  if (total > 0) cov.overall = static_cast<double>(m.correct()) / static_cast<double>(total);
  double rel_correct = 0.0, rel_total = 0.0;
  for (size_t t = 0; t < m.counts.size(); ++t) {
    if (static_cast<int>(t) == background) continue;
    rel_correct += static_cast<double>(m.counts[t][t]);
    for (size_t p = 0; p < m.counts.size(); ++p) rel_total += static_cast<double>(m.counts[t][p]);
    rel_total += static_cast<double>(m.abstained[t]);
  }
  if (rel_total > 0.0) cov.relevant = rel_correct / rel_total;
  return cov;
}

inline Coverage coverage(const std::vector<std::pair<int, Decision>>& decisions, int num_classes,
                         int background) {
  return coverage(confusion(decisions, num_classes), background);
}

// ---- threshold sweeps ------------------------------------------------------

struct SweepRow {
  double threshold = 0.0;
  double macro_f1 = 0.0;                  // abstain-excluded (default variant)
  double macro_f1_abstain_as_miss = 0.0;  // abstentions charged as FN
  double accuracy = 0.0;
  double weighted_f1 = 0.0;  // abstain-excluded
  double overall_coverage = 0.0;
  double relevant_coverage = 0.0;
};

inline SweepRow evaluate_threshold(double threshold,
                                   const std::vector<std::pair<int, Decision>>& decisions,
                                   int num_classes, int background) {
  ConfusionMatrix m = confusion(decisions, num_classes);
  SweepRow row;
  row.threshold = threshold;
  row.macro_f1 = macro_f1(m, AbstainPolicy::kExclude);
  row.macro_f1_abstain_as_miss = macro_f1(m, AbstainPolicy::kCountAsMiss);
  row.accuracy = accuracy(m);
  row.weighted_f1 = weighted_f1(m, AbstainPolicy::kExclude);
  Coverage cov = coverage(m, background);
  row.overall_coverage = cov.overall;
  row.relevant_coverage = cov.relevant;
  return row;
}

/// One row per grid threshold; `evaluate` maps a threshold to decisions.
inline std::vector<SweepRow> sweep(
    const std::function<std::vector<std::pair<int, Decision>>(double)>& evaluate,
    const std::vector<double>& grid, int num_classes, int background) {
  if (grid.empty()) throw DataError("sweep grid is empty");
  std::vector<SweepRow> rows;
  rows.reserve(grid.size());
  for (double t : grid)
    rows.push_back(evaluate_threshold(t, evaluate(t), num_classes, background));
  return rows;
}

/// Grid spec: comma-separated values and "start:stop:step" ranges (inclusive
/// endpoints, within half a step). "0:10:0.5" or "0.4:0.95:0.05,0.99".
inline std::vector<double> parse_threshold_grid(const std::string& spec) {
  std::vector<double> grid;
  for (const auto& part : split(spec, ',')) {
    if (part.empty()) continue;
    auto range = split(part, ':');
    try {
      if (range.size() == 3) {
        double start = std::stod(range[0]);
        double stop = std::stod(range[1]);
        double step = std::stod(range[2]);
        if (step <= 0.0) throw DataError("grid step must be positive: " + part);
        for (int i = 0;; ++i) {
          double v = start + step * i;
          if (v > stop + step * 0.5) break;
          grid.push_back(v);
        }
      } else if (range.size() == 1) {
        grid.push_back(std::stod(range[0]));
      } else {
        throw DataError("bad grid element: " + part);
      }
    } catch (const std::invalid_argument&) {
      throw DataError("bad number in grid spec: " + part);
    }
  }
  if (grid.empty()) throw DataError("empty threshold grid: " + spec);
  return grid;
}

inline const std::string kSweepCsvHeader =
    "threshold,macro_f1,macro_f1_abstain_as_miss,accuracy,weighted_f1,"
    "overall_coverage,relevant_coverage";

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << kSweepCsvHeader << "\n";
  for (const auto& r : rows)
    out << dtos(r.threshold) << ',' << dtos(r.macro_f1) << ','
        << dtos(r.macro_f1_abstain_as_miss) << ',' << dtos(r.accuracy) << ','
        << dtos(r.weighted_f1) << ',' << dtos(r.overall_coverage) << ','
        << dtos(r.relevant_coverage) << "\n";
}

inline std::vector<SweepRow> read_sweep_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open sweep file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != kSweepCsvHeader)
    throw DataError("unrecognized sweep csv header in " + path);
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split(line, ',');
    if (f.size() != 7) throw DataError("bad sweep row in " + path);
    SweepRow r;
    r.threshold = std::stod(f[0]);
    r.macro_f1 = std::stod(f[1]);
    r.macro_f1_abstain_as_miss = std::stod(f[2]);
    r.accuracy = std::stod(f[3]);
    r.weighted_f1 = std::stod(f[4]);
    r.overall_coverage = std::stod(f[5]);
    r.relevant_coverage = std::stod(f[6]);
    rows.push_back(r);
  }
  return rows;
}

// ---- decision records ------------------------------------------------------

struct DecisionRecord {
  std::string flow_id;
  std::string session_id;
  std::string true_label;
  std::string predicted;  // class name or ABSTAIN
  double score = 0.0;
  std::optional<int> cluster;
};

inline void write_decisions_csv(const std::string& path,
                                const std::vector<DecisionRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "flow_id,session_id,true_label,predicted,score,cluster\n";
  for (const auto& r : records) {
    out << r.flow_id << ',' << r.session_id << ',' << r.true_label << ',' << r.predicted << ','
        << dtos(r.score) << ',';
    if (r.cluster) out << *r.cluster;
    out << "\n";
  }
}

inline std::vector<DecisionRecord> read_decisions_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open decisions file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "flow_id,session_id,true_label,predicted,score,cluster")
    throw DataError("unrecognized decisions csv header in " + path);
  std::vector<DecisionRecord> out;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split(line, ',');
    if (f.size() != 6)
      throw DataError(path + ":" + std::to_string(lineno) + ": bad decision row");
    DecisionRecord r;
    r.flow_id = f[0];
    r.session_id = f[1];
    r.true_label = f[2];
    r.predicted = f[3];
    r.score = std::stod(f[4]);
    if (!f[5].empty()) r.cluster = std::stoi(f[5]);
    out.push_back(std::move(r));
  }
  return out;
}

/// Deterministic class space for a decision file: sorted union of true and
/// predicted labels, plus the background name.
inline LabelSpace decision_label_space(const std::vector<DecisionRecord>& records,
                                       const std::string& background) {
  std::vector<std::string> names;
  auto add = [&names](const std::string& n) {
    if (n.empty() || n == kAbstainToken) return;
    for (const auto& e : names)
      if (e == n) return;
    names.push_back(n);
  };
  for (const auto& r : records) {
    add(r.true_label);
    add(r.predicted);
  }
  add(background);
  std::sort(names.begin(), names.end());
  return LabelSpace(names, background);
}

inline std::vector<std::pair<int, Decision>> decisions_from_records(
    const std::vector<DecisionRecord>& records, const LabelSpace& classes) {
  std::vector<std::pair<int, Decision>> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Decision d;
    d.score = r.score;
    d.cluster = r.cluster;
    if (r.predicted != kAbstainToken) d.predicted = classes.id(r.predicted);
    out.push_back({classes.id(r.true_label), d});
  }
  return out;
}

/// Full evaluation report: confusion matrix (plot-ready), abstentions, and
/// every metric under both abstention policies.
inline nlohmann::json evaluation_report(const std::vector<DecisionRecord>& records,
                                        const std::string& background) {
  LabelSpace classes = decision_label_space(records, background);
  auto decisions = decisions_from_records(records, classes);
  ConfusionMatrix m = confusion(decisions, classes.size());
  Coverage cov = coverage(m, classes.background());

  nlohmann::json j;
  j["classes"] = classes.names();
  j["background"] = background;
  j["total_samples"] = m.total();
  j["abstained"] = m.abstained;
  j["confusion"] = m.counts;  // rows true, columns predicted
  j["metrics"] = {
      {"macro_f1", macro_f1(m, AbstainPolicy::kExclude)},
      {"macro_f1_abstain_as_miss", macro_f1(m, AbstainPolicy::kCountAsMiss)},
      {"weighted_f1", weighted_f1(m, AbstainPolicy::kExclude)},
      {"weighted_f1_abstain_as_miss", weighted_f1(m, AbstainPolicy::kCountAsMiss)},
      {"accuracy", accuracy(m)},
      {"overall_coverage", cov.overall},
      {"relevant_coverage", cov.relevant}};
  j["f1_convention"] =
      "default macro_f1/weighted_f1 exclude abstained samples; *_abstain_as_miss "
      "charge each abstention as a false negative of its true class; coverage "
      "always counts abstentions against";
  return j;
}

inline void write_confusion_csv(const std::string& path, const ConfusionMatrix& m,
                                const LabelSpace& classes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "true\\pred";
  for (const auto& n : classes.names()) out << ',' << n;
  out << ",ABSTAINED\n";
  for (int t = 0; t < classes.size(); ++t) {
    out << classes.name(t);
    for (int p = 0; p < classes.size(); ++p)
      out << ',' << m.counts[static_cast<size_t>(t)][static_cast<size_t>(p)];
    out << ',' << m.abstained[static_cast<size_t>(t)] << "\n";
  }
}

}  // namespace flowsense

#endif  // FLOWSENSE_METRICS_HPP_
