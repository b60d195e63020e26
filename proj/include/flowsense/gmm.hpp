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
#ifndef FLOWSENSE_GMM_HPP_
#define FLOWSENSE_GMM_HPP_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "flowsense/common.hpp"
#include "flowsense/confidence.hpp"
#include "flowsense/labels.hpp"
#include "flowsense/rng.hpp"

namespace flowsense {

/// Full-covariance Gaussian mixture fit by EM, with majority-vote cluster
/// labels and a log-likelihood abstention threshold calibrated at a training
/// percentile.
struct GmmModel {
  Eigen::VectorXd weights;                    // K, sums to 1
  Eigen::MatrixXd means;                      // K x C
  std::vector<Eigen::MatrixXd> covariances;   // K of C x C, positive definite
  std::vector<int> cluster_labels;            // K class ids; empty until assigned
  std::optional<double> threshold;            // absent until calibrated

  uint64_t seed = 0;
  int iterations = 0;
  double final_log_likelihood = 0.0;
  std::vector<double> loglik_history;          // one entry per E-step evaluation
  std::vector<double> train_log_likelihoods;   // sorted, final-parameter values

  int k() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }
};

struct GmmFitConfig {
  int max_iters = 200;
  double tol = 1e-6;      // absolute log-likelihood improvement
  double ridge = 1e-6;    // added to covariance diagonals
  uint64_t seed = 0;
};

namespace gmm_detail {

struct Component {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_norm = 0.0;  // -(C log 2pi + log det) / 2
};

inline Component prepare(const Eigen::MatrixXd& cov) {
  Component c;
  c.llt.compute(cov);
  if (c.llt.info() != Eigen::Success)
    throw DataError("gmm covariance is not positive definite");
  double log_det = 0.0;
  const auto& l = c.llt.matrixL();
  for (Eigen::Index i = 0; i < cov.rows(); ++i) log_det += 2.0 * std::log(l(i, i));
  c.log_norm = -0.5 * (static_cast<double>(cov.rows()) * std::log(2.0 * M_PI) + log_det);
  return c;
}

inline double log_gaussian(const Component& c, const Eigen::VectorXd& mean,
                           const Eigen::VectorXd& x) {
  Eigen::VectorXd d = x - mean;
  Eigen::VectorXd y = c.llt.matrixL().solve(d);
  return c.log_norm - 0.5 * y.squaredNorm();
}

inline std::vector<Component> prepare_all(const GmmModel& m) {
  std::vector<Component> cs;
  cs.reserve(static_cast<size_t>(m.k()));
  for (const auto& cov : m.covariances) cs.push_back(prepare(cov));
  return cs;
}

/// Per-sample log joint, log(pi_k) + log N(x; mu_k, Sigma_k), for all k.
inline Eigen::VectorXd log_joint(const GmmModel& m, const std::vector<Component>& cs,
                                 const Eigen::VectorXd& x) {
  Eigen::VectorXd lj(m.k());
  for (int k = 0; k < m.k(); ++k)
    lj(k) = std::log(m.weights(k)) + log_gaussian(cs[static_cast<size_t>(k)], m.means.row(k), x);
  return lj;
}

inline double logsumexp(const Eigen::VectorXd& v) {
  double mx = v.maxCoeff();
  return mx + std::log((v.array() - mx).exp().sum());
}

inline Eigen::MatrixXd add_ridge_until_pd(Eigen::MatrixXd cov, double ridge) {
  cov += ridge * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) return cov;
    ridge *= 10.0;
    cov += ridge * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
  }
  throw DataError("gmm covariance could not be made positive definite");
}

}  // namespace gmm_detail

/// Mixture log-likelihood of one sample, via log-sum-exp.
inline double loglik(const GmmModel& model, const Eigen::VectorXd& x) {
  auto cs = gmm_detail::prepare_all(model);
  return gmm_detail::logsumexp(gmm_detail::log_joint(model, cs, x));
}

/// Mixture log-likelihood per row of x, with component factors computed once.
inline Eigen::VectorXd loglik_batch(const GmmModel& model, const Eigen::MatrixXd& x) {
  auto cs = gmm_detail::prepare_all(model);
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out(i) = gmm_detail::logsumexp(gmm_detail::log_joint(model, cs, x.row(i)));
  return out;
}

/// Standard EM over similarity vectors (rows of x). Means are seeded
/// k-means++ style from data points, covariances start at the global
/// covariance, weights uniform. Per-iteration log-likelihood is recorded and
/// the training-sample log-likelihoods under the final parameters are kept
/// (sorted) for percentile calibration. Collapsed components (weight below
/// 1e-8) are re-seeded from a random point with a warning.
inline GmmModel fit_gmm(const Eigen::MatrixXd& x, int k, const GmmFitConfig& cfg = {},
                        const WarningSink& warn = default_warning_sink()) {
  using namespace gmm_detail;
  const auto n = x.rows();
  const auto dim = x.cols();
  if (k < 1) throw DataError("gmm needs at least one component");
  if (n < k)
    throw DataError("gmm needs at least as many samples as components (" +
                    std::to_string(n) + " < " + std::to_string(k) + ")");
  if (!x.allFinite()) throw DataError("gmm input contains non-finite values");

  Rng rng(cfg.seed);

  Eigen::RowVectorXd global_mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - global_mean;
  Eigen::MatrixXd global_cov = (centered.transpose() * centered) / static_cast<double>(n);
  global_cov = add_ridge_until_pd(global_cov, cfg.ridge);

  // k-means++ seeding of the means.
  GmmModel m;
  m.seed = cfg.seed;
  m.weights = Eigen::VectorXd::Constant(k, 1.0 / k);
  m.means = Eigen::MatrixXd(k, dim);
  m.covariances.assign(static_cast<size_t>(k), global_cov);
  {
    std::vector<Eigen::Index> chosen;
    chosen.push_back(static_cast<Eigen::Index>(rng.uniform_int(0, n - 1)));
    Eigen::VectorXd min_d2 = (x.rowwise() - x.row(chosen[0])).rowwise().squaredNorm();
    while (static_cast<int>(chosen.size()) < k) {
      double total = min_d2.sum();
      Eigen::Index pick;
      if (total <= 0.0) {
        pick = static_cast<Eigen::Index>(rng.uniform_int(0, n - 1));
      } else {
        double r = rng.uniform() * total;
        double acc = 0.0;
        pick = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
          acc += min_d2(i);
          if (acc >= r) { pick = i; break; }
        }
      }
      chosen.push_back(pick);
      min_d2 = min_d2.cwiseMin((x.rowwise() - x.row(pick)).rowwise().squaredNorm());
    }
    for (int j = 0; j < k; ++j) m.means.row(j) = x.row(chosen[static_cast<size_t>(j)]);
  }

  Eigen::MatrixXd resp(n, k);
  Eigen::VectorXd sample_ll(n);
  double prev_ll = -std::numeric_limits<double>::infinity();
  int m_steps = 0;
  bool converged = false;

  auto e_step = [&]() {
    auto cs = prepare_all(m);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd lj = log_joint(m, cs, x.row(i));
      double lse = logsumexp(lj);
      resp.row(i) = (lj.array() - lse).exp();
      sample_ll(i) = lse;
      total += lse;
    }
    return total;
  };

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    double ll = e_step();
    m.loglik_history.push_back(ll);
    if (iter > 0 && std::abs(ll - prev_ll) < cfg.tol) {
      converged = true;
      break;
    }
    prev_ll = ll;

    // M-step.
    Eigen::VectorXd nk = resp.colwise().sum();
    for (int j = 0; j < k; ++j) {
      if (nk(j) < 1e-8 * static_cast<double>(n)) {
        warn("gmm component " + std::to_string(j) + " collapsed; re-seeding");
        m.means.row(j) = x.row(rng.uniform_int(0, n - 1));
        m.covariances[static_cast<size_t>(j)] = global_cov;
        m.weights(j) = 1.0 / static_cast<double>(n);
        continue;
      }
      m.weights(j) = nk(j) / static_cast<double>(n);
      m.means.row(j) = (resp.col(j).transpose() * x) / nk(j);
      Eigen::MatrixXd xc = x.rowwise() - m.means.row(j);
      Eigen::MatrixXd cov =
          (xc.transpose() * (xc.array().colwise() * resp.col(j).array()).matrix()) / nk(j);
      m.covariances[static_cast<size_t>(j)] = add_ridge_until_pd(std::move(cov), cfg.ridge);
    }
    m.weights /= m.weights.sum();
    ++m_steps;
  }

  if (!converged) {
    // Record the log-likelihood of the final parameters.
    m.loglik_history.push_back(e_step());
  }
  m.iterations = m_steps;
  m.final_log_likelihood = m.loglik_history.back();
  m.train_log_likelihoods.assign(sample_ll.data(), sample_ll.data() + n);
  std::sort(m.train_log_likelihoods.begin(), m.train_log_likelihoods.end());
  return m;
}

/// Hard-assigns each training vector to its maximum-posterior component.
inline std::vector<int> hard_assign(const GmmModel& model, const Eigen::MatrixXd& x) {
  auto cs = gmm_detail::prepare_all(model);
  std::vector<int> out(static_cast<size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::VectorXd lj = gmm_detail::log_joint(model, cs, x.row(i));
    Eigen::Index best;
    lj.maxCoeff(&best);
    out[static_cast<size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

/// Per-cluster true-label composition, the cluster-analysis report.
struct ClusterComposition {
  std::vector<std::map<int, size_t>> counts;  // per cluster: class id -> count
};

/// Labels each cluster by the majority true label of its hard-assigned
/// training samples. Ties break toward the smaller class id, empty clusters
/// inherit the nearest non-empty cluster's label, and duplicate labels across
/// clusters are allowed; all three cases warn.
inline ClusterComposition assign_cluster_labels(GmmModel& model, const Eigen::MatrixXd& x,
                                                const std::vector<int>& label_ids,
                                                const LabelSpace& classes,
                                                const WarningSink& warn = default_warning_sink()) {
  if (static_cast<size_t>(x.rows()) != label_ids.size())
    throw DataError("assign_cluster_labels: labels/vectors size mismatch");
  auto assigned = hard_assign(model, x);
  ClusterComposition comp;
  comp.counts.assign(static_cast<size_t>(model.k()), {});
  for (size_t i = 0; i < assigned.size(); ++i)
    ++comp.counts[static_cast<size_t>(assigned[i])][label_ids[i]];

  model.cluster_labels.assign(static_cast<size_t>(model.k()), -1);
  for (int j = 0; j < model.k(); ++j) {
    const auto& counts = comp.counts[static_cast<size_t>(j)];
    if (counts.empty()) continue;
    int best = -1;
    size_t best_count = 0;
    bool tie = false;
    for (const auto& [label, count] : counts) {
      if (count > best_count) {
        best = label;
        best_count = count;
        tie = false;
      } else if (count == best_count) {
        tie = true;  // map iterates in class order, the earlier label stays
      }
    }
    if (tie)
      warn("cluster " + std::to_string(j) + " majority tie; using class order to break it");
    model.cluster_labels[static_cast<size_t>(j)] = best;
  }

  for (int j = 0; j < model.k(); ++j) {
    if (model.cluster_labels[static_cast<size_t>(j)] != -1) continue;
    warn("cluster " + std::to_string(j) + " is empty; inheriting the nearest cluster's label");
    double best_d = std::numeric_limits<double>::infinity();
    int best_j = -1;
    for (int o = 0; o < model.k(); ++o) {
      if (model.cluster_labels[static_cast<size_t>(o)] == -1 || o == j) continue;
      double d = (model.means.row(o) - model.means.row(j)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best_j = o;
      }
    }
    if (best_j == -1) throw DataError("all gmm clusters are empty");
    model.cluster_labels[static_cast<size_t>(j)] = model.cluster_labels[static_cast<size_t>(best_j)];
  }

  std::map<int, int> label_uses;
  for (int l : model.cluster_labels) ++label_uses[l];
  for (const auto& [label, uses] : label_uses)
    if (uses > 1)
      warn("class " + classes.name(label) + " is the majority of " + std::to_string(uses) +
           " clusters");
  return comp;
}

/// Threshold at the p-th percentile of sorted values, lower-value convention:
/// threshold = sorted[floor(p*N/100)], so exactly floor(p*N/100) samples fall
/// strictly below it when values are distinct (+inf when the index reaches N,
/// i.e. everything falls below). With ties the strict-below count can be
/// smaller.
inline double percentile_threshold(const std::vector<double>& sorted_values, double p) {
  if (p < 0.0 || p > 100.0) throw DataError("percentile must be in [0, 100]");
  if (sorted_values.empty()) throw DataError("cannot calibrate on an empty training set");
  auto n = sorted_values.size();
  auto idx = static_cast<size_t>(std::floor(p * static_cast<double>(n) / 100.0));
  if (idx >= n) return std::numeric_limits<double>::infinity();
  return sorted_values[idx];
}

/// Calibrates the abstention threshold from the stored training
/// log-likelihoods.
inline void calibrate_threshold(GmmModel& model, double percentile) {
  model.threshold = percentile_threshold(model.train_log_likelihoods, percentile);
}

/// Calibrates against explicitly supplied training vectors.
inline void calibrate_threshold(GmmModel& model, const Eigen::MatrixXd& train_vectors,
                                double percentile) {
  Eigen::VectorXd ll = loglik_batch(model, train_vectors);
  std::vector<double> sorted(ll.data(), ll.data() + ll.size());
  std::sort(sorted.begin(), sorted.end());
  model.threshold = percentile_threshold(sorted, percentile);
}

/// ABSTAIN when the mixture log-likelihood falls below the threshold, else
/// the majority label of the maximum-posterior cluster.
inline Decision classify_gmm(const GmmModel& model, const Eigen::VectorXd& x) {
  if (model.cluster_labels.empty()) throw DataError("gmm clusters are not labeled");
  if (!model.threshold) throw DataError("gmm threshold is not calibrated");
  auto cs = gmm_detail::prepare_all(model);
  Eigen::VectorXd lj = gmm_detail::log_joint(model, cs, x);
  Decision d;
  d.score = gmm_detail::logsumexp(lj);
  Eigen::Index best;
  lj.maxCoeff(&best);
  d.cluster = static_cast<int>(best);
  if (d.score >= *model.threshold)
    d.predicted = model.cluster_labels[static_cast<size_t>(best)];
  return d;
}

/// Batch version; component factorizations are shared across samples.
inline std::vector<Decision> classify_gmm_batch(const GmmModel& model, const Eigen::MatrixXd& x) {
  if (model.cluster_labels.empty()) throw DataError("gmm clusters are not labeled");
  if (!model.threshold) throw DataError("gmm threshold is not calibrated");
  auto cs = gmm_detail::prepare_all(model);
  std::vector<Decision> out(static_cast<size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::VectorXd lj = gmm_detail::log_joint(model, cs, x.row(i));
    Decision& d = out[static_cast<size_t>(i)];
    d.score = gmm_detail::logsumexp(lj);
    Eigen::Index best;
    lj.maxCoeff(&best);
    d.cluster = static_cast<int>(best);
    if (d.score >= *model.threshold)
      d.predicted = model.cluster_labels[static_cast<size_t>(best)];
  }
  return out;
}

// ---- pipeline artifact -----------------------------------------------------

inline constexpr int kGmmSchemaVersion = 1;

/// Everything classify needs: the class space, the training centroids that
/// turn an embedding into a similarity vector, and the fitted mixture.
struct GmmArtifact {
  CentroidSet centroids;
  GmmModel gmm;
  ClusterComposition composition;
};

inline nlohmann::json gmm_artifact_to_json(const GmmArtifact& art) {
  nlohmann::json j;
  j["schema_version"] = kGmmSchemaVersion;
  j["classes"] = art.centroids.classes.names();
  j["background"] = art.centroids.classes.name(art.centroids.classes.background());
  nlohmann::json cent = nlohmann::json::array();
  for (int c = 0; c < art.centroids.classes.size(); ++c) {
    std::vector<double> row(static_cast<size_t>(art.centroids.centroids.cols()));
    for (Eigen::Index i = 0; i < art.centroids.centroids.cols(); ++i)
      row[static_cast<size_t>(i)] = art.centroids.centroids(c, i);
    cent.push_back(row);
  }
  j["centroids"] = std::move(cent);

  const GmmModel& m = art.gmm;
  nlohmann::json g;
  g["weights"] = std::vector<double>(m.weights.data(), m.weights.data() + m.weights.size());
  nlohmann::json means = nlohmann::json::array();
  for (int k = 0; k < m.k(); ++k) {
    std::vector<double> row(static_cast<size_t>(m.dim()));
    for (int c = 0; c < m.dim(); ++c) row[static_cast<size_t>(c)] = m.means(k, c);
    means.push_back(row);
  }
  g["means"] = std::move(means);
  nlohmann::json covs = nlohmann::json::array();
  for (const auto& cov : m.covariances) {
    std::vector<double> flat;  // row-major
    flat.reserve(static_cast<size_t>(cov.size()));
    for (Eigen::Index r = 0; r < cov.rows(); ++r)
      for (Eigen::Index c = 0; c < cov.cols(); ++c) flat.push_back(cov(r, c));
    covs.push_back(flat);
  }
  g["covariances"] = std::move(covs);
  nlohmann::json labels = nlohmann::json::array();
  for (int l : m.cluster_labels) labels.push_back(art.centroids.classes.name(l));
  g["cluster_labels"] = std::move(labels);
  if (m.threshold) g["threshold"] = *m.threshold;
  else g["threshold"] = nullptr;
  g["metadata"] = {{"seed", m.seed},
                   {"iterations", m.iterations},
                   {"final_log_likelihood", m.final_log_likelihood},
                   {"loglik_history", m.loglik_history},
                   {"train_log_likelihoods", m.train_log_likelihoods}};
  nlohmann::json comp = nlohmann::json::array();
  for (size_t k = 0; k < art.composition.counts.size(); ++k) {
    nlohmann::json entry;
    entry["cluster"] = k;
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [label, count] : art.composition.counts[k])
      counts[art.centroids.classes.name(label)] = count;
    entry["counts"] = std::move(counts);
    comp.push_back(std::move(entry));
  }
  g["cluster_composition"] = std::move(comp);
  j["gmm"] = std::move(g);
  return j;
}

inline GmmArtifact gmm_artifact_from_json(const nlohmann::json& j) {
  int version = j.at("schema_version").get<int>();
  if (version != kGmmSchemaVersion)
    throw DataError("unsupported gmm schema_version " + std::to_string(version));
  GmmArtifact art;
  auto names = j.at("classes").get<std::vector<std::string>>();
  art.centroids.classes = LabelSpace(names, j.at("background").get<std::string>());
  const auto& cent = j.at("centroids");
  if (cent.empty()) throw DataError("gmm artifact has no centroids");
  size_t dim = cent.at(0).size();
  art.centroids.centroids =
      Eigen::MatrixXd(static_cast<Eigen::Index>(cent.size()), static_cast<Eigen::Index>(dim));
  for (size_t c = 0; c < cent.size(); ++c)
    for (size_t i = 0; i < dim; ++i)
      art.centroids.centroids(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i)) =
          cent.at(c).at(i).get<double>();

  const auto& g = j.at("gmm");
  auto weights = g.at("weights").get<std::vector<double>>();
  GmmModel& m = art.gmm;
  m.weights = Eigen::Map<Eigen::VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  const auto& means = g.at("means");
  size_t kk = means.size();
  size_t mdim = means.at(0).size();
  m.means = Eigen::MatrixXd(static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(mdim));
  for (size_t k2 = 0; k2 < kk; ++k2)
    for (size_t c = 0; c < mdim; ++c)
      m.means(static_cast<Eigen::Index>(k2), static_cast<Eigen::Index>(c)) =
          means.at(k2).at(c).get<double>();
  for (const auto& flat : g.at("covariances")) {
    Eigen::MatrixXd cov(static_cast<Eigen::Index>(mdim), static_cast<Eigen::Index>(mdim));
    size_t i = 0;
    for (Eigen::Index r = 0; r < cov.rows(); ++r)
      for (Eigen::Index c = 0; c < cov.cols(); ++c) cov(r, c) = flat.at(i++).get<double>();
    m.covariances.push_back(std::move(cov));
  }
  for (const auto& name : g.at("cluster_labels"))
    m.cluster_labels.push_back(art.centroids.classes.id(name.get<std::string>()));
  if (!g.at("threshold").is_null()) m.threshold = g.at("threshold").get<double>();
  const auto& meta = g.at("metadata");
  m.seed = meta.at("seed").get<uint64_t>();
  m.iterations = meta.at("iterations").get<int>();
  m.final_log_likelihood = meta.at("final_log_likelihood").get<double>();
  m.loglik_history = meta.at("loglik_history").get<std::vector<double>>();
  m.train_log_likelihoods = meta.at("train_log_likelihoods").get<std::vector<double>>();
  if (g.contains("cluster_composition"))
    for (const auto& entry : g.at("cluster_composition")) {
      std::map<int, size_t> counts;
      for (const auto& [name, count] : entry.at("counts").items())
        counts[art.centroids.classes.id(name)] = count.get<size_t>();
      art.composition.counts.push_back(std::move(counts));
    }
  return art;
}

inline void save_gmm_artifact(const std::string& path, const GmmArtifact& art) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << gmm_artifact_to_json(art).dump(2) << "\n";
}

inline GmmArtifact load_gmm_artifact(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open gmm model: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad gmm model file " + path + ": " + e.what());
  }
  return gmm_artifact_from_json(j);
}

}  // namespace flowsense

#endif  // FLOWSENSE_GMM_HPP_
