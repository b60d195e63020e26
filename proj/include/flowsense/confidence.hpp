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
#ifndef FLOWSENSE_CONFIDENCE_HPP_
#define FLOWSENSE_CONFIDENCE_HPP_

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flowsense/common.hpp"
#include "flowsense/embeddings.hpp"
#include "flowsense/labels.hpp"

namespace flowsense {

/// Per-class mean embedding directions, computed on training data. Centroids
/// are means of L2-normalized embeddings (direction means); they are not
/// renormalized, which cosine similarity does not care about.
struct CentroidSet {
  LabelSpace classes;
  Eigen::MatrixXd centroids;  // C x D, row per class in class order

  int dim() const { return static_cast<int>(centroids.cols()); }
};

inline CentroidSet compute_centroids(const std::vector<EmbeddingRecord>& train,
                                     const LabelSpace& classes) {
  if (train.empty()) throw DataError("compute_centroids: no embeddings");
  size_t dim = train.front().values.size();
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(classes.size(), static_cast<Eigen::Index>(dim));
  std::vector<size_t> counts(static_cast<size_t>(classes.size()), 0);
  for (const auto& r : train) {
    if (r.values.size() != dim)
      throw DataError("embedding width mismatch for " + r.flow_id);
    int c = classes.id(r.label);
    double norm = 0.0;
    for (double v : r.values) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw DataError("zero-norm embedding for " + r.flow_id);
    for (size_t j = 0; j < dim; ++j)
      sums(c, static_cast<Eigen::Index>(j)) += r.values[j] / norm;
    ++counts[static_cast<size_t>(c)];
  }
  CentroidSet cs;
  cs.classes = classes;
  cs.centroids = Eigen::MatrixXd(classes.size(), static_cast<Eigen::Index>(dim));
  for (int c = 0; c < classes.size(); ++c) {
    if (counts[static_cast<size_t>(c)] == 0)
      throw DataError("no training embeddings for class " + classes.name(c));
    cs.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<size_t>(c)]);
    if (cs.centroids.row(c).norm() == 0.0)
      throw DataError("zero centroid for class " + classes.name(c));
  }
  return cs;
}

/// Cosine similarities between one embedding and every class centroid,
/// in class order. Entries lie in [-1, 1].
inline Eigen::VectorXd similarity_vector(const Eigen::VectorXd& embedding,
                                         const CentroidSet& centroids) {
  double en = embedding.norm();
  if (en == 0.0 || !embedding.allFinite())
    throw DataError("similarity_vector: zero or non-finite embedding");
  Eigen::VectorXd out(centroids.classes.size());
  for (int c = 0; c < centroids.classes.size(); ++c) {
    double cn = centroids.centroids.row(c).norm();
    if (cn == 0.0) throw DataError("similarity_vector: zero centroid");
    out(c) = centroids.centroids.row(c).dot(embedding) / (en * cn);
  }
  return out;
}

inline Eigen::VectorXd record_vector(const EmbeddingRecord& r) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(r.values.size()));
  for (size_t i = 0; i < r.values.size(); ++i) v(static_cast<Eigen::Index>(i)) = r.values[i];
  return v;
}

/// Similarity vectors for a set of embeddings, as rows of an N x C matrix.
inline Eigen::MatrixXd similarity_matrix(const std::vector<EmbeddingRecord>& records,
                                         const CentroidSet& centroids) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(records.size()), centroids.classes.size());
  for (size_t i = 0; i < records.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = similarity_vector(record_vector(records[i]), centroids);
  return out;
}

/// A classification decision: a class or an abstention, with the confidence
/// score that drove it (mixture log-likelihood for the GMM path, max softmax
/// probability for the baseline) and the winning cluster on the GMM path.
struct Decision {
  std::optional<int> predicted;  // class id; nullopt = abstain
  double score = 0.0;
  std::optional<int> cluster;

  bool abstained() const { return !predicted.has_value(); }
};

/// Softmax-threshold baseline: abstain when the top probability is below the
/// threshold; otherwise the argmax class, ties broken by class order.
inline Decision classify_softmax(const Eigen::VectorXd& probs, double threshold) {
  int best = 0;
  for (int c = 1; c < probs.size(); ++c)
    if (probs(c) > probs(best)) best = c;
  Decision d;
  d.score = probs(best);
  if (probs(best) >= threshold) d.predicted = best;
  return d;
}

}  // namespace flowsense

#endif  // FLOWSENSE_CONFIDENCE_HPP_
