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
#ifndef FLOWSENSE_EMBEDDINGS_HPP_
#define FLOWSENSE_EMBEDDINGS_HPP_

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "flowsense/common.hpp"
#include "flowsense/encoder.hpp"
#include "flowsense/features.hpp"

namespace flowsense {

/// One encoder output: an embedding vector with its label and session.
struct EmbeddingRecord {
  std::string flow_id;
  std::string session_id;
  std::string label;
  std::vector<double> values;
};

/// Runs the embedding-head encoder over a dataset, order-preserving, and
/// L2-normalizes each output vector.
inline std::vector<EmbeddingRecord> embed_dataset(EncoderModel& model,
                                                  const FeatureDataset& features,
                                                  size_t chunk = 256) {
  if (features.kind != FeatureKind::kTimeSeries)
    throw DataError("the encoder embeds timeseries features");
  std::vector<EmbeddingRecord> out;
  out.reserve(features.rows.size());
  for (size_t start = 0; start < features.rows.size(); start += chunk) {
    size_t count = std::min(chunk, features.rows.size() - start);
    std::vector<FeatureRow> slice(features.rows.begin() + static_cast<long>(start),
                                  features.rows.begin() + static_cast<long>(start + count));
    Matrix x = rows_to_matrix(slice, features.dim());
    Matrix emb = embed_batch(model, x);
    for (size_t i = 0; i < count; ++i) {
      EmbeddingRecord rec;
      const FeatureRow& src = features.rows[start + i];
      rec.flow_id = src.flow_id;
      rec.session_id = src.session_id;
      rec.label = src.label;
      double norm = emb.row(static_cast<Eigen::Index>(i)).norm();
      if (norm == 0.0) norm = 1.0;
      rec.values.resize(static_cast<size_t>(emb.cols()));
      for (Eigen::Index j = 0; j < emb.cols(); ++j)
        rec.values[static_cast<size_t>(j)] = emb(static_cast<Eigen::Index>(i), j) / norm;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

/// CSV schema: flow_id,session_id,label,e0..e{D-1}.
inline void write_embeddings_csv(const std::string& path,
                                 const std::vector<EmbeddingRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  size_t dim = records.empty() ? 64 : records.front().values.size();
  out << "flow_id,session_id,label";
  for (size_t i = 0; i < dim; ++i) out << ",e" << i;
  out << "\n";
  for (const auto& r : records) {
    if (r.values.size() != dim)
      throw DataError("embedding width mismatch for " + r.flow_id);
    out << r.flow_id << ',' << r.session_id << ',' << r.label;
    for (double v : r.values) out << ',' << dtos(v);
    out << "\n";
  }
}

/// Parses and validates an embeddings CSV, e.g. one produced by an external
/// encoder. Every row must have the header's dimension and finite values;
/// violations are fatal and name the row.
inline std::vector<EmbeddingRecord> import_embeddings(const std::string& path,
                                                      int expected_dim = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embeddings file: " + path);
  std::string header;
  if (!std::getline(in, header)) throw DataError("empty embeddings file: " + path);
  auto cols = split(header, ',');
  if (cols.size() < 4 || cols[0] != "flow_id" || cols[1] != "session_id" || cols[2] != "label")
    throw DataError("unrecognized embeddings csv header in " + path);
  size_t dim = cols.size() - 3;
  if (expected_dim > 0 && dim != static_cast<size_t>(expected_dim))
    throw DataError(path + ": expected " + std::to_string(expected_dim) +
                    "-dimensional embeddings, header has " + std::to_string(dim));

  std::vector<EmbeddingRecord> out;
  std::string line;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split(line, ',');
    if (fields.size() != cols.size())
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(dim) + " value columns, got " +
                      std::to_string(fields.size() >= 3 ? fields.size() - 3 : 0));
    EmbeddingRecord rec;
    rec.flow_id = fields[0];
    rec.session_id = fields[1];
    rec.label = fields[2];
    rec.values.reserve(dim);
    for (size_t i = 3; i < fields.size(); ++i) {
      double v;
      try {
        v = std::stod(fields[i]);
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(lineno) + ": bad number '" + fields[i] + "'");
      }
      if (!std::isfinite(v))
        throw DataError(path + ":" + std::to_string(lineno) + ": non-finite embedding value");
      rec.values.push_back(v);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace flowsense

#endif  // FLOWSENSE_EMBEDDINGS_HPP_
