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
#ifndef FLOWSENSE_ENCODER_HPP_
#define FLOWSENSE_ENCODER_HPP_

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowsense/autodiff.hpp"
#include "flowsense/common.hpp"
#include "flowsense/features.hpp"
#include "flowsense/rng.hpp"

namespace flowsense {

using Matrix = Eigen::MatrixXd;

// Bidirectional LSTM sequence encoder:
//   input 40x2 -> BiLSTM (rnn1 units/dir, sequence-returning) -> LayerNorm
//   -> BiLSTM (rnn2 units/dir, last state) -> LayerNorm -> Dropout
//   -> Dense(dense_units, GELU) -> [Dense(C) softmax | embedding output]
// Widths are configurable; the defaults match the reference architecture.

enum class EncoderHead { kSoftmax, kEmbedding };

inline EncoderHead encoder_head_from_name(const std::string& s) {
  if (s == "softmax") return EncoderHead::kSoftmax;
  if (s == "embedding") return EncoderHead::kEmbedding;
  throw DataError("unknown encoder head: " + s);
}

struct EncoderConfig {
  int input_dim = 2;
  int seq_len = kTimeSeriesLen;
  int rnn1_units = 128;  // per direction
  int rnn2_units = 64;   // per direction
  double dropout = 0.1;
  int dense_units = 64;  // embedding dimension
  EncoderHead head = EncoderHead::kSoftmax;
  int num_classes = 0;  // softmax head only
  double layer_norm_eps = 1e-5;

  void validate() const {
    if (input_dim <= 0 || seq_len <= 0 || rnn1_units <= 0 || rnn2_units <= 0 ||
        dense_units <= 0)
      throw DataError("encoder widths must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw DataError("dropout must be in [0, 1)");
    if (head == EncoderHead::kSoftmax && num_classes < 2)
      throw DataError("softmax head needs at least 2 classes");
  }
};

struct EncoderModel {
  EncoderConfig config;
  uint64_t init_seed = 0;
  std::vector<std::string> classes;  // label order used by the softmax head

  struct LstmDir {
    Matrix wx, wh, b;  // gate order [i, f, g, o]
  };
  LstmDir l1_fwd, l1_bwd, l2_fwd, l2_bwd;
  Matrix ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  Matrix dense_w, dense_b;
  Matrix head_w, head_b;  // softmax head only

  std::vector<std::pair<std::string, Matrix*>> params() {
    std::vector<std::pair<std::string, Matrix*>> p = {
        {"l1_fwd.wx", &l1_fwd.wx}, {"l1_fwd.wh", &l1_fwd.wh}, {"l1_fwd.b", &l1_fwd.b},
        {"l1_bwd.wx", &l1_bwd.wx}, {"l1_bwd.wh", &l1_bwd.wh}, {"l1_bwd.b", &l1_bwd.b},
        {"l2_fwd.wx", &l2_fwd.wx}, {"l2_fwd.wh", &l2_fwd.wh}, {"l2_fwd.b", &l2_fwd.b},
        {"l2_bwd.wx", &l2_bwd.wx}, {"l2_bwd.wh", &l2_bwd.wh}, {"l2_bwd.b", &l2_bwd.b},
        {"ln1_gamma", &ln1_gamma}, {"ln1_beta", &ln1_beta},
        {"ln2_gamma", &ln2_gamma}, {"ln2_beta", &ln2_beta},
        {"dense_w", &dense_w},     {"dense_b", &dense_b}};
    if (config.head == EncoderHead::kSoftmax) {
      p.push_back({"head_w", &head_w});
      p.push_back({"head_b", &head_b});
    }
    return p;
  }

  static EncoderModel init(const EncoderConfig& cfg, uint64_t seed) {
    cfg.validate();
    EncoderModel m;
    m.config = cfg;
    m.init_seed = seed;
    Rng rng(seed);
    auto uniform_fan_in = [&rng](int rows, int cols, int fan_in) {
      double bound = std::sqrt(1.0 / fan_in);
      Matrix w(rows, cols);
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
      return w;
    };
    auto init_lstm = [&](int in_dim, int units) {
      LstmDir d;
      d.wx = uniform_fan_in(in_dim, 4 * units, in_dim);
      d.wh = uniform_fan_in(units, 4 * units, units);
      d.b = Matrix::Zero(1, 4 * units);
      d.b.middleCols(units, units).setOnes();  // forget-gate bias 1
      return d;
    };
    m.l1_fwd = init_lstm(cfg.input_dim, cfg.rnn1_units);
    m.l1_bwd = init_lstm(cfg.input_dim, cfg.rnn1_units);
    m.l2_fwd = init_lstm(2 * cfg.rnn1_units, cfg.rnn2_units);
    m.l2_bwd = init_lstm(2 * cfg.rnn1_units, cfg.rnn2_units);
    m.ln1_gamma = Matrix::Ones(1, 2 * cfg.rnn1_units);
    m.ln1_beta = Matrix::Zero(1, 2 * cfg.rnn1_units);
    m.ln2_gamma = Matrix::Ones(1, 2 * cfg.rnn2_units);
    m.ln2_beta = Matrix::Zero(1, 2 * cfg.rnn2_units);
    m.dense_w = uniform_fan_in(2 * cfg.rnn2_units, cfg.dense_units, 2 * cfg.rnn2_units);
    m.dense_b = Matrix::Zero(1, cfg.dense_units);
    if (cfg.head == EncoderHead::kSoftmax) {
      m.head_w = uniform_fan_in(cfg.dense_units, cfg.num_classes, cfg.dense_units);
      m.head_b = Matrix::Zero(1, cfg.num_classes);
    }
    return m;
  }
};

// ---- forward graph ---------------------------------------------------------

struct EncoderGraph {
  ad::Tape tape;
  ad::Var output;  // embedding (B x dense) or logits (B x C)
  std::vector<std::pair<Matrix*, ad::Var>> param_vars;
};

namespace encoder_detail {

struct LstmVars {
  ad::Var wx, wh, b;
};

inline LstmVars load_lstm(ad::Tape& tape, EncoderModel::LstmDir& d,
                          std::vector<std::pair<Matrix*, ad::Var>>& pv) {
  LstmVars v{tape.leaf(d.wx), tape.leaf(d.wh), tape.leaf(d.b)};
  pv.push_back({&d.wx, v.wx});
  pv.push_back({&d.wh, v.wh});
  pv.push_back({&d.b, v.b});
  return v;
}

/// Runs one LSTM direction over the step inputs; returns per-step hidden
/// states (aligned to the original step order).
inline std::vector<ad::Var> lstm_pass(ad::Tape& tape, const LstmVars& w,
                                      const std::vector<ad::Var>& steps, int units,
                                      bool reverse) {
  const auto batch = steps.front().tape->value(steps.front()).rows();
  ad::Var h = tape.leaf(Matrix::Zero(batch, units));
  ad::Var c = tape.leaf(Matrix::Zero(batch, units));
  std::vector<ad::Var> hs(steps.size());
  for (size_t k = 0; k < steps.size(); ++k) {
    size_t t = reverse ? steps.size() - 1 - k : k;
    ad::Var gates = ad::add_rowvec(ad::add(ad::matmul(steps[t], w.wx), ad::matmul(h, w.wh)), w.b);
    ad::Var gi = ad::sigmoid(ad::slice_cols(gates, 0, units));
    ad::Var gf = ad::sigmoid(ad::slice_cols(gates, units, units));
    ad::Var gg = ad::tanh(ad::slice_cols(gates, 2 * units, units));
    ad::Var go = ad::sigmoid(ad::slice_cols(gates, 3 * units, units));
    c = ad::add(ad::emul(gf, c), ad::emul(gi, gg));
    h = ad::emul(go, ad::tanh(c));
    hs[t] = h;
  }
  return hs;
}

}  // namespace encoder_detail

/// Builds the forward graph for a batch. `x` is B x (seq_len * input_dim),
/// one flattened (t, size) pair per step. In training mode a dropout mask is
/// drawn from `dropout_rng`; in eval mode dropout is the identity.
inline EncoderGraph encoder_forward(EncoderModel& model, const Matrix& x, bool training = false,
                                    Rng* dropout_rng = nullptr) {
  using namespace encoder_detail;
  const EncoderConfig& cfg = model.config;
  if (x.cols() != cfg.seq_len * cfg.input_dim)
    throw DataError("encoder input has wrong width: expected " +
                    std::to_string(cfg.seq_len * cfg.input_dim) + ", got " +
                    std::to_string(x.cols()));

  EncoderGraph g;
  ad::Tape& tape = g.tape;

  std::vector<ad::Var> steps;
  steps.reserve(static_cast<size_t>(cfg.seq_len));
  for (int t = 0; t < cfg.seq_len; ++t)
    steps.push_back(tape.leaf(x.middleCols(t * cfg.input_dim, cfg.input_dim)));

  LstmVars l1f = load_lstm(tape, model.l1_fwd, g.param_vars);
  LstmVars l1b = load_lstm(tape, model.l1_bwd, g.param_vars);
  LstmVars l2f = load_lstm(tape, model.l2_fwd, g.param_vars);
  LstmVars l2b = load_lstm(tape, model.l2_bwd, g.param_vars);
  ad::Var ln1_g = tape.leaf(model.ln1_gamma);
  ad::Var ln1_b = tape.leaf(model.ln1_beta);
  ad::Var ln2_g = tape.leaf(model.ln2_gamma);
  ad::Var ln2_b = tape.leaf(model.ln2_beta);
  g.param_vars.push_back({&model.ln1_gamma, ln1_g});
  g.param_vars.push_back({&model.ln1_beta, ln1_b});
  g.param_vars.push_back({&model.ln2_gamma, ln2_g});
  g.param_vars.push_back({&model.ln2_beta, ln2_b});
  ad::Var dense_w = tape.leaf(model.dense_w);
  ad::Var dense_b = tape.leaf(model.dense_b);
  g.param_vars.push_back({&model.dense_w, dense_w});
  g.param_vars.push_back({&model.dense_b, dense_b});

  auto h1f = lstm_pass(tape, l1f, steps, cfg.rnn1_units, false);
  auto h1b = lstm_pass(tape, l1b, steps, cfg.rnn1_units, true);

  std::vector<ad::Var> seq;
  seq.reserve(h1f.size());
  for (size_t t = 0; t < h1f.size(); ++t)
    seq.push_back(ad::layer_norm(ad::concat_cols(h1f[t], h1b[t]), ln1_g, ln1_b,
                                 cfg.layer_norm_eps));

  auto h2f = lstm_pass(tape, l2f, seq, cfg.rnn2_units, false);
  auto h2b = lstm_pass(tape, l2b, seq, cfg.rnn2_units, true);
  // Last state per direction: forward at the final step, backward at step 0.
  ad::Var state = ad::concat_cols(h2f.back(), h2b.front());
  state = ad::layer_norm(state, ln2_g, ln2_b, cfg.layer_norm_eps);

  if (training && cfg.dropout > 0.0) {
    if (!dropout_rng) throw DataError("training forward pass needs a dropout rng");
    Matrix mask(x.rows(), 2 * cfg.rnn2_units);
    double keep = 1.0 - cfg.dropout;
    for (Eigen::Index r = 0; r < mask.rows(); ++r)
      for (Eigen::Index c2 = 0; c2 < mask.cols(); ++c2)
        mask(r, c2) = dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    state = ad::dropout(state, mask);
  }

  ad::Var embedding = ad::gelu(ad::add_rowvec(ad::matmul(state, dense_w), dense_b));

  if (model.config.head == EncoderHead::kSoftmax) {
    ad::Var head_w = tape.leaf(model.head_w);
    ad::Var head_b = tape.leaf(model.head_b);
    g.param_vars.push_back({&model.head_w, head_w});
    g.param_vars.push_back({&model.head_b, head_b});
    g.output = ad::add_rowvec(ad::matmul(embedding, head_w), head_b);  // logits
  } else {
    g.output = embedding;
  }
  return g;
}

// ---- inference helpers -----------------------------------------------------

inline Matrix rows_to_matrix(const std::vector<FeatureRow>& rows, size_t dim) {
  Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].values.size() != dim)
      throw DataError("feature row has wrong width: " + rows[i].flow_id);
    for (size_t j = 0; j < dim; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i].values[j];
  }
  return x;
}

/// Softmax probabilities for a batch (eval mode). Rows sum to 1.
inline Matrix predict_probs(EncoderModel& model, const Matrix& x) {
  if (model.config.head != EncoderHead::kSoftmax)
    throw DataError("predict_probs requires a softmax-head model");
  EncoderGraph g = encoder_forward(model, x, false, nullptr);
  ad::Var probs = ad::softmax_rows(g.output);
  return g.tape.value(probs);
}

/// Raw (unnormalized) embeddings for a batch (eval mode).
inline Matrix embed_batch(EncoderModel& model, const Matrix& x) {
  if (model.config.head != EncoderHead::kEmbedding)
    throw DataError("embed_batch requires an embedding-head model");
  EncoderGraph g = encoder_forward(model, x, false, nullptr);
  return g.tape.value(g.output);
}

// ---- training --------------------------------------------------------------

enum class LossKind { kCrossEntropy, kSupCon };

inline LossKind loss_from_name(const std::string& s) {
  if (s == "ce") return LossKind::kCrossEntropy;
  if (s == "supcon") return LossKind::kSupCon;
  throw DataError("unknown loss: " + s);
}

struct TrainConfig {
  LossKind loss = LossKind::kCrossEntropy;
  double tau = 0.07;  // contrastive temperature
  int batch_size = 64;
  int epochs = 30;
  double learning_rate = 1e-3;
  uint64_t seed = 0;

  void validate() const {
    if (tau <= 0.0) throw DataError("temperature must be positive");
    if (batch_size < 2) throw DataError("batch size must be at least 2");
    if (epochs < 0) throw DataError("epochs must be non-negative");
  }
};

struct TrainResult {
  std::vector<double> epoch_loss;
};

/// Trains in place; deterministic for a fixed seed (single-threaded).
/// Labels are indices into `model.classes`.
inline TrainResult train_encoder(EncoderModel& model, const Matrix& x,
                                 const std::vector<int>& labels, const TrainConfig& cfg,
                                 const WarningSink& warn = default_warning_sink()) {
  cfg.validate();
  if (static_cast<size_t>(x.rows()) != labels.size())
    throw DataError("train_encoder: labels/batch size mismatch");
  if (cfg.loss == LossKind::kCrossEntropy && model.config.head != EncoderHead::kSoftmax)
    throw DataError("cross-entropy training requires a softmax head");
  if (cfg.loss == LossKind::kSupCon && model.config.head != EncoderHead::kEmbedding)
    throw DataError("contrastive training requires an embedding head");

  {
    std::map<int, size_t> counts;
    for (int l : labels) ++counts[l];
    size_t lo = SIZE_MAX, hi = 0;
    for (auto& [l, c] : counts) {
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
    if (!counts.empty() && lo != hi)
      warn("training set is not class-balanced (" + std::to_string(lo) + ".." +
           std::to_string(hi) + " per class); consider balancing first");
  }

  auto params = model.params();
  std::vector<Matrix> adam_m, adam_v;
  for (auto& [name, p] : params) {
    adam_m.push_back(Matrix::Zero(p->rows(), p->cols()));
    adam_v.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  long step = 0;

  Rng rng(cfg.seed);
  TrainResult result;
  std::vector<size_t> order(static_cast<size_t>(x.rows()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    size_t loss_count = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      size_t count = std::min<size_t>(static_cast<size_t>(cfg.batch_size), order.size() - start);
      if (count < 2) continue;
      Matrix bx(static_cast<Eigen::Index>(count), x.cols());
      std::vector<int> by(count);
      for (size_t i = 0; i < count; ++i) {
        bx.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(order[start + i]));
        by[i] = labels[order[start + i]];
      }
      if (cfg.loss == LossKind::kSupCon) {
        std::map<int, int> c;
        bool has_pair = false;
        for (int l : by)
          if (++c[l] >= 2) { has_pair = true; break; }
        if (!has_pair) {
          warn("skipping degenerate contrastive batch (no same-class pair)");
          continue;
        }
      }

      EncoderGraph g = encoder_forward(model, bx, true, &rng);
      ad::Var loss = cfg.loss == LossKind::kCrossEntropy
                         ? ad::cross_entropy_logits(g.output, by)
                         : ad::supcon_loss(ad::l2_normalize_rows(g.output), by, cfg.tau);
      double loss_value = g.tape.value(loss)(0, 0);
      if (!std::isfinite(loss_value))
        throw DataError("training loss is not finite at epoch " + std::to_string(epoch) +
                        "; try a lower learning rate");
      g.tape.backward(loss);

      ++step;
      double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      std::map<Matrix*, const Matrix*> grads;
      for (auto& [p, var] : g.param_vars) grads[p] = &g.tape.grad(var);
      for (size_t i = 0; i < params.size(); ++i) {
        Matrix* p = params[i].second;
        auto it = grads.find(p);
        if (it == grads.end()) continue;
        const Matrix& grad = *it->second;
        adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * grad;
        adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * grad.cwiseProduct(grad);
        Matrix mhat = adam_m[i] / bc1;
        Matrix vhat = adam_v[i] / bc2;
        *p -= cfg.learning_rate *
              mhat.cwiseQuotient(vhat.cwiseSqrt() + Matrix::Constant(p->rows(), p->cols(), adam_eps));
      }
      loss_sum += loss_value * static_cast<double>(count);
      loss_count += count;
    }
    result.epoch_loss.push_back(loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0);
  }
  return result;
}

// ---- serialization ---------------------------------------------------------

inline constexpr int kEncoderSchemaVersion = 1;

inline nlohmann::json encoder_to_json(EncoderModel& model,
                                      const std::vector<double>& loss_curve = {}) {
  nlohmann::json j;
  j["schema_version"] = kEncoderSchemaVersion;
  j["config"] = {{"input_dim", model.config.input_dim},
                 {"seq_len", model.config.seq_len},
                 {"rnn1_units", model.config.rnn1_units},
                 {"rnn2_units", model.config.rnn2_units},
                 {"dropout", model.config.dropout},
                 {"dense_units", model.config.dense_units},
                 {"head", model.config.head == EncoderHead::kSoftmax ? "softmax" : "embedding"},
                 {"num_classes", model.config.num_classes},
                 {"layer_norm_eps", model.config.layer_norm_eps}};
  j["init_seed"] = model.init_seed;
  j["classes"] = model.classes;
  if (!loss_curve.empty()) j["loss_curve"] = loss_curve;
  nlohmann::json params = nlohmann::json::object();
  for (auto& [name, p] : model.params()) {
    std::vector<double> data;
    data.reserve(static_cast<size_t>(p->size()));
    for (Eigen::Index r = 0; r < p->rows(); ++r)
      for (Eigen::Index c = 0; c < p->cols(); ++c) data.push_back((*p)(r, c));
    params[name] = {{"rows", p->rows()}, {"cols", p->cols()}, {"data", std::move(data)}};
  }
  j["params"] = std::move(params);
  return j;
}

inline EncoderModel encoder_from_json(const nlohmann::json& j) {
  int version = j.at("schema_version").get<int>();
  if (version != kEncoderSchemaVersion)
    throw DataError("unsupported encoder schema_version " + std::to_string(version));
  EncoderConfig cfg;
  const auto& c = j.at("config");
  cfg.input_dim = c.at("input_dim").get<int>();
  cfg.seq_len = c.at("seq_len").get<int>();
  cfg.rnn1_units = c.at("rnn1_units").get<int>();
  cfg.rnn2_units = c.at("rnn2_units").get<int>();
  cfg.dropout = c.at("dropout").get<double>();
  cfg.dense_units = c.at("dense_units").get<int>();
  cfg.head = encoder_head_from_name(c.at("head").get<std::string>());
  cfg.num_classes = c.at("num_classes").get<int>();
  cfg.layer_norm_eps = c.at("layer_norm_eps").get<double>();
  EncoderModel m = EncoderModel::init(cfg, j.at("init_seed").get<uint64_t>());
  m.classes = j.at("classes").get<std::vector<std::string>>();
  for (auto& [name, p] : m.params()) {
    const auto& pj = j.at("params").at(name);
    Eigen::Index rows = pj.at("rows").get<Eigen::Index>();
    Eigen::Index cols = pj.at("cols").get<Eigen::Index>();
    if (rows != p->rows() || cols != p->cols())
      throw DataError("encoder param shape mismatch for " + name);
    const auto& data = pj.at("data");
    size_t k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index cc = 0; cc < cols; ++cc) (*p)(r, cc) = data.at(k++).get<double>();
  }
  return m;
}

inline void save_encoder(const std::string& path, EncoderModel& model,
                         const std::vector<double>& loss_curve = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << encoder_to_json(model, loss_curve).dump() << "\n";
}

inline EncoderModel load_encoder(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open encoder model: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad encoder model file " + path + ": " + e.what());
  }
  return encoder_from_json(j);
}

}  // namespace flowsense

#endif  // FLOWSENSE_ENCODER_HPP_
