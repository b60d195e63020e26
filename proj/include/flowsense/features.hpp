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
#ifndef FLOWSENSE_FEATURES_HPP_
#define FLOWSENSE_FEATURES_HPP_

#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowsense/common.hpp"
#include "flowsense/flow.hpp"
#include "flowsense/rng.hpp"

namespace flowsense {

inline constexpr int kTimeSeriesLen = 40;
inline constexpr int kSizeSequenceLen = 256;

/// 40x2 time-series feature: row i = (arrival time relative to flow start,
/// direction-signed size). Server-direction sizes are negated; rows beyond
/// the flow length are zero.
struct TimeSeriesFeature {
  std::array<std::array<double, 2>, kTimeSeriesLen> rows{};
};

/// 256-long packet size sequence, zero-padded.
struct SizeSequenceFeature {
  std::array<double, kSizeSequenceLen> values{};
};

inline double signed_size(const FlowPacket& p) {
  double s = static_cast<double>(p.size);
  return p.direction == Direction::kServerToClient ? -s : s;
}

/// First 40 packets as (relative time, signed size); shorter flows are
/// zero-padded (imported data; ingest guarantees >= 40).
inline TimeSeriesFeature extract_timeseries(const Flow& flow) {
  TimeSeriesFeature f;
  size_t n = std::min<size_t>(flow.packets.size(), kTimeSeriesLen);
  for (size_t i = 0; i < n; ++i) {
    f.rows[i][0] = flow.packets[i].rel_time;
    f.rows[i][1] = signed_size(flow.packets[i]);
  }
  return f;
}

/// First 256 packet sizes (unsigned), zero-padded.
inline SizeSequenceFeature extract_size_sequence(const Flow& flow) {
  SizeSequenceFeature f;
  size_t n = std::min<size_t>(flow.packets.size(), kSizeSequenceLen);
  for (size_t i = 0; i < n; ++i) f.values[i] = static_cast<double>(flow.packets[i].size);
  return f;
}

enum class ShiftDirection { kLeft, kRight };

struct AugmentationSpec {
  int shift_steps = 1;  // 1 <= n < 40
  ShiftDirection direction = ShiftDirection::kLeft;
  uint64_t rng_seed = 0;  // seed that produced this spec, kept for provenance

  void validate() const {
    if (shift_steps < 1 || shift_steps >= kTimeSeriesLen)
      throw DataError("augmentation shift_steps out of range [1, 40)");
  }
};

/// Translation-shift augmentation. Left shift by n moves rows toward index 0
/// and fills the vacated trailing slots from the flow's packets past the 40th
/// when available, else zeros. Right shift by n moves rows toward index 39 and
/// fills the vacated leading slots by replicating the first row of the shifted
/// subsequence verbatim -- including its arrival time, so the time column of an
/// augmented right shift is not monotone at the seam. That is intentional.
inline TimeSeriesFeature augment_translate(const TimeSeriesFeature& feature,
                                           const Flow& source_flow,
                                           const AugmentationSpec& spec) {
  spec.validate();
  const int n = spec.shift_steps;
  TimeSeriesFeature out;
  if (spec.direction == ShiftDirection::kRight) {
    for (int i = 0; i < kTimeSeriesLen; ++i)
      out.rows[static_cast<size_t>(i)] =
          i < n ? feature.rows[0] : feature.rows[static_cast<size_t>(i - n)];
    return out;
  }
  for (int i = 0; i < kTimeSeriesLen; ++i) {
    int j = i + n;
    if (j < kTimeSeriesLen) {
      out.rows[static_cast<size_t>(i)] = feature.rows[static_cast<size_t>(j)];
    } else if (static_cast<size_t>(j) < source_flow.packets.size()) {
      const auto& p = source_flow.packets[static_cast<size_t>(j)];
      out.rows[static_cast<size_t>(i)] = {p.rel_time, signed_size(p)};
    }  // else zero padding
  }
  return out;
}

enum class FeatureKind { kTimeSeries, kSizeSequence };

inline FeatureKind feature_kind_from_name(const std::string& s) {
  if (s == "timeseries") return FeatureKind::kTimeSeries;
  if (s == "sizeseq") return FeatureKind::kSizeSequence;
  throw DataError("unknown feature kind: " + s);
}

inline const char* feature_kind_name(FeatureKind k) {
  return k == FeatureKind::kTimeSeries ? "timeseries" : "sizeseq";
}

struct FeatureRow {
  std::string flow_id;
  std::string session_id;
  std::string label;
  std::vector<double> values;  // 80 flattened (t,s) pairs, or 256 sizes
};

struct FeatureDataset {
  FeatureKind kind = FeatureKind::kTimeSeries;
  std::vector<FeatureRow> rows;

  size_t dim() const { return kind == FeatureKind::kTimeSeries ? 80 : 256; }
};

inline FeatureRow featurize_flow(const Flow& flow, FeatureKind kind) {
  FeatureRow row;
  row.flow_id = flow.flow_id;
  row.session_id = flow.session_id;
  row.label = flow.label.value_or("");
  if (kind == FeatureKind::kTimeSeries) {
    auto f = extract_timeseries(flow);
    row.values.reserve(80);
    for (const auto& r : f.rows) {
      row.values.push_back(r[0]);
      row.values.push_back(r[1]);
    }
  } else {
    auto f = extract_size_sequence(flow);
    row.values.assign(f.values.begin(), f.values.end());
  }
  return row;
}

inline FeatureDataset featurize_flows(const std::vector<Flow>& flows, FeatureKind kind) {
  FeatureDataset ds;
  ds.kind = kind;
  ds.rows.reserve(flows.size());
  for (const auto& f : flows) ds.rows.push_back(featurize_flow(f, kind));
  return ds;
}

inline TimeSeriesFeature timeseries_from_row(const FeatureRow& row) {
  if (row.values.size() != 80) throw DataError("feature row is not 40x2: " + row.flow_id);
  TimeSeriesFeature f;
  for (int i = 0; i < kTimeSeriesLen; ++i) {
    f.rows[static_cast<size_t>(i)][0] = row.values[static_cast<size_t>(2 * i)];
    f.rows[static_cast<size_t>(i)][1] = row.values[static_cast<size_t>(2 * i + 1)];
  }
  return f;
}

// ---- CSV persistence -------------------------------------------------------
// One sample per line: flow_id,session_id,label,<values...>. Header names the
// value columns t0,s0,...,t39,s39 (timeseries) or v0..v255 (sizeseq).

namespace feature_csv_detail {
inline void check_field(const std::string& s) {
  if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos)
    throw DataError("csv field may not contain comma or newline: " + s);
}
}  // namespace feature_csv_detail

inline void write_features_csv(const std::string& path, const FeatureDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "flow_id,session_id,label";
  if (ds.kind == FeatureKind::kTimeSeries) {
    for (int i = 0; i < kTimeSeriesLen; ++i) out << ",t" << i << ",s" << i;
  } else {
    for (int i = 0; i < kSizeSequenceLen; ++i) out << ",v" << i;
  }
  out << "\n";
  for (const auto& row : ds.rows) {
    feature_csv_detail::check_field(row.flow_id);
    feature_csv_detail::check_field(row.session_id);
    feature_csv_detail::check_field(row.label);
    if (row.values.size() != ds.dim())
      throw DataError("feature row has wrong width: " + row.flow_id);
    out << row.flow_id << ',' << row.session_id << ',' << row.label;
    for (double v : row.values) out << ',' << dtos(v);
    out << "\n";
  }
}

inline FeatureDataset read_features_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open features file: " + path);
  std::string header;
  if (!std::getline(in, header)) throw DataError("empty features file: " + path);
  auto cols = split(header, ',');
  FeatureDataset ds;
  if (cols.size() == 3 + 80 && cols[3] == "t0") ds.kind = FeatureKind::kTimeSeries;
  else if (cols.size() == 3 + 256 && cols[3] == "v0") ds.kind = FeatureKind::kSizeSequence;
  else throw DataError("unrecognized features csv header in " + path);

  std::string line;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split(line, ',');
    if (fields.size() != cols.size())
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(cols.size()) + " fields, got " +
                      std::to_string(fields.size()));
    FeatureRow row;
    row.flow_id = fields[0];
    row.session_id = fields[1];
    row.label = fields[2];
    row.values.reserve(fields.size() - 3);
    for (size_t i = 3; i < fields.size(); ++i) {
      try {
        row.values.push_back(std::stod(fields[i]));
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(lineno) + ": bad number '" + fields[i] + "'");
      }
    }
    ds.rows.push_back(std::move(row));
  }
  return ds;
}

// ---- Class balancing -------------------------------------------------------

enum class BalanceStrategy { kAugment, kOversample };

inline BalanceStrategy balance_strategy_from_name(const std::string& s) {
  if (s == "augment") return BalanceStrategy::kAugment;
  if (s == "oversample") return BalanceStrategy::kOversample;
  throw DataError("unknown balance strategy: " + s);
}

/// Brings every class to exactly target_count samples. Deficits are filled by
/// translation-augmenting randomly sampled originals (timeseries only; the
/// source flows must be supplied) or by resampling with replacement. Originals
/// are never removed, so a class above target_count is an error. `max_shift`
/// bounds the uniformly drawn shift size.
inline FeatureDataset balance(const FeatureDataset& dataset, BalanceStrategy strategy,
                              size_t target_count, uint64_t rng_seed,
                              const std::map<std::string, Flow>* flows_by_id = nullptr,
                              const std::vector<std::string>* expected_classes = nullptr,
                              int max_shift = 10) {
  std::map<std::string, std::vector<size_t>> by_class;
  for (size_t i = 0; i < dataset.rows.size(); ++i)
    by_class[dataset.rows[i].label].push_back(i);

  if (expected_classes)
    for (const auto& c : *expected_classes)
      if (!by_class.count(c)) throw DataError("class has no samples to balance: " + c);

  for (const auto& [label, idx] : by_class)
    if (idx.size() > target_count)
      throw DataError("class " + label + " has " + std::to_string(idx.size()) +
                      " samples, above the balance target " + std::to_string(target_count));

  if (strategy == BalanceStrategy::kAugment) {
    if (dataset.kind != FeatureKind::kTimeSeries)
      throw DataError("augment balancing applies to timeseries features; use oversample");
    if (!flows_by_id)
      throw DataError("augment balancing requires the source flows");
  }

  FeatureDataset out = dataset;
  Rng rng(rng_seed);
  if (max_shift > kTimeSeriesLen - 1) max_shift = kTimeSeriesLen - 1;

  for (const auto& [label, idx] : by_class) {
    size_t deficit = target_count - idx.size();
    for (size_t k = 0; k < deficit; ++k) {
      const FeatureRow& src = dataset.rows[idx[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int64_t>(idx.size()) - 1))]];
      FeatureRow row;
      row.session_id = src.session_id;
      row.label = src.label;
      if (strategy == BalanceStrategy::kOversample) {
        row.flow_id = src.flow_id + "~dup" + std::to_string(k);
        row.values = src.values;
      } else {
        auto fit = flows_by_id->find(src.flow_id);
        if (fit == flows_by_id->end())
          throw DataError("augment balancing: no source flow for " + src.flow_id);
        AugmentationSpec spec;
        spec.shift_steps = static_cast<int>(rng.uniform_int(1, max_shift));
        spec.direction = rng.bernoulli(0.5) ? ShiftDirection::kLeft : ShiftDirection::kRight;
        spec.rng_seed = rng_seed;
        TimeSeriesFeature aug =
            augment_translate(timeseries_from_row(src), fit->second, spec);
        row.flow_id = src.flow_id + "~aug" + std::to_string(k);
        row.values.reserve(80);
        for (const auto& r : aug.rows) {
          row.values.push_back(r[0]);
          row.values.push_back(r[1]);
        }
      }
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

}  // namespace flowsense

#endif  // FLOWSENSE_FEATURES_HPP_
