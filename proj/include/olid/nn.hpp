// olid/nn.hpp

// Copyright 2026  The Olid Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef OLID_NN_HPP
#define OLID_NN_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "olid/common.hpp"
#include "olid/registry.hpp"

namespace olid {

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Architecture

/// Time-delay network: each layer is a 1-D convolution over time with a
/// symmetric-free left-anchored context window (output frame t reads input
/// frames t .. t+context-1), followed by batch norm; every layer but the last
/// gets a ReLU, the last feeds a softmax.
struct TdnnConfig {
  int input_dim = 16;
  std::vector<int> layer_dims = {256, 256, 256, 256, 256, 32};
  std::vector<int> layer_contexts = {3, 3, 3, 1, 1, 1};

  int n_layers() const { return static_cast<int>(layer_dims.size()); }

  /// Frames lost to context: output length is T - context_consumed().
  int context_consumed() const {
    int c = 0;
    for (int k : layer_contexts) c += k - 1;
    return c;
  }

  int output_frames(int t_in) const { return t_in - context_consumed(); }

  /// The segment representation is tapped after the penultimate layer's
  /// activation (the input of the classification layer).
  int representation_layer() const { return n_layers() - 2; }

  int representation_dim() const {
    int r = representation_layer();
    return r >= 0 ? layer_dims[static_cast<size_t>(r)] : input_dim;
  }

  void validate() const {
    if (input_dim < 1) throw Error(ErrorCode::config, "tdnn: input_dim must be positive");
    if (layer_dims.empty() || layer_dims.size() != layer_contexts.size())
      throw Error(ErrorCode::config, "tdnn: layer_dims and layer_contexts must match and be nonempty");
    for (int d : layer_dims)
      if (d < 1) throw Error(ErrorCode::config, "tdnn: layer dims must be positive");
    for (int c : layer_contexts)
      if (c < 1) throw Error(ErrorCode::config, "tdnn: contexts must be >= 1");
  }
};

template <typename Scalar>
struct TdnnLayer {
  MatrixRM<Scalar> w;  // out_dim x (context * in_dim)
  VectorX<Scalar> b;
  VectorX<Scalar> gamma, beta;
  VectorX<Scalar> run_mean, run_var;  // inference statistics, not trained by the optimizer
  int context = 1;
};

template <typename Scalar>
struct LayerGrads {
  MatrixRM<Scalar> dw;
  VectorX<Scalar> db, dgamma, dbeta;
};

template <typename Scalar>
using TdnnGradients = std::vector<LayerGrads<Scalar>>;

// ---------------------------------------------------------------------------
// Helpers

/// Numerically stable in-place row-wise softmax.
template <typename Scalar>
void softmax_rows(MatrixRM<Scalar>& z) {
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    Scalar m = z.row(r).maxCoeff();
    z.row(r) = (z.row(r).array() - m).exp().matrix();
    z.row(r) /= z.row(r).sum();
  }
}

/// Mean over frame rows; the frame-to-segment pooling used at decision time.
template <typename Scalar>
VectorX<Scalar> average_posterior(const MatrixRM<Scalar>& frame_posteriors) {
  if (frame_posteriors.rows() == 0)
    throw Error(ErrorCode::empty_input, "average_posterior: no frames");
  return frame_posteriors.colwise().mean().transpose();
}

namespace nn_detail {

/// Unrolls context windows: row (b, t) of the result is the concatenation of
/// input rows (b, t) .. (b, t+context-1).
template <typename Scalar>
MatrixRM<Scalar> im2col(const MatrixRM<Scalar>& x, int batch, int t_in, int context) {
  int t_out = t_in - context + 1;
  int cin = static_cast<int>(x.cols());
  MatrixRM<Scalar> cols(static_cast<Eigen::Index>(batch) * t_out,
                        static_cast<Eigen::Index>(context) * cin);
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < t_out; ++t) {
      Eigen::Index dst = static_cast<Eigen::Index>(b) * t_out + t;
      for (int k = 0; k < context; ++k)
        cols.block(dst, static_cast<Eigen::Index>(k) * cin, 1, cin) =
            x.row(static_cast<Eigen::Index>(b) * t_in + t + k);
    }
  return cols;
}

/// Adjoint of im2col: scatter-adds column-block gradients back onto frames.
template <typename Scalar>
MatrixRM<Scalar> col2im(const MatrixRM<Scalar>& dcols, int batch, int t_in, int context, int cin) {
  int t_out = t_in - context + 1;
  MatrixRM<Scalar> dx = MatrixRM<Scalar>::Zero(static_cast<Eigen::Index>(batch) * t_in, cin);
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < t_out; ++t) {
      Eigen::Index src = static_cast<Eigen::Index>(b) * t_out + t;
      for (int k = 0; k < context; ++k)
        dx.row(static_cast<Eigen::Index>(b) * t_in + t + k) +=
            dcols.block(src, static_cast<Eigen::Index>(k) * cin, 1, cin);
    }
  return dx;
}

}  // namespace nn_detail

// ---------------------------------------------------------------------------
// Model

struct BatchNormOpts {
  double momentum = 0.1;
  double eps = 1e-5;
};

template <typename Scalar = float>
class TdnnModel {
 public:
  TdnnConfig config;
  std::vector<std::string> class_labels;  // head order, fixed at init
  uint64_t registry_hash = 0;
  std::string provenance;  // free-form JSON carried through save/load
  BatchNormOpts bn;
  std::vector<TdnnLayer<Scalar>> layers;

  /// He-uniform weights, zero biases, identity batch norm.  The head width is
  /// taken from the registry, overriding the final configured layer dim.
  static TdnnModel init(TdnnConfig cfg, const LanguageRegistry& registry, uint64_t seed) {
    registry.validate();
    cfg.layer_dims.back() = static_cast<int>(registry.in_set.size());
    cfg.validate();

    TdnnModel m;
    m.config = cfg;
    m.class_labels = registry.in_set;
    m.registry_hash = registry.in_set_hash();

    Rng rng(seed, "tdnn-init");
    int in_dim = cfg.input_dim;
    for (int li = 0; li < cfg.n_layers(); ++li) {
      TdnnLayer<Scalar> layer;
      layer.context = cfg.layer_contexts[static_cast<size_t>(li)];
      int out_dim = cfg.layer_dims[static_cast<size_t>(li)];
      int fan_in = layer.context * in_dim;
      Scalar bound = static_cast<Scalar>(std::sqrt(6.0 / fan_in));
      layer.w.resize(out_dim, fan_in);
      for (Eigen::Index r = 0; r < layer.w.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.w.cols(); ++c)
          layer.w(r, c) = static_cast<Scalar>(rng.uniform(-bound, bound));
      layer.b = VectorX<Scalar>::Zero(out_dim);
      layer.gamma = VectorX<Scalar>::Ones(out_dim);
      layer.beta = VectorX<Scalar>::Zero(out_dim);
      layer.run_mean = VectorX<Scalar>::Zero(out_dim);
      layer.run_var = VectorX<Scalar>::Ones(out_dim);
      m.layers.push_back(std::move(layer));
      in_dim = out_dim;
    }
    return m;
  }

  int n_classes() const { return config.layer_dims.back(); }

  /// Trainable parameters only (weights, biases, batch-norm affine).
  int64_t count_parameters() const {
    int64_t n = 0;
    for (const auto& l : layers)
      n += l.w.size() + l.b.size() + l.gamma.size() + l.beta.size();
    return n;
  }

  struct Forward {
    MatrixRM<Scalar> posteriors;      // (batch * t_out) x n_classes
    MatrixRM<Scalar> representation;  // (batch * t_out) x rep_dim
    int batch = 0;
    int t_out = 0;

    MatrixRM<Scalar> segment_posteriors() const {
      MatrixRM<Scalar> out(batch, posteriors.cols());
      for (int b = 0; b < batch; ++b)
        out.row(b) = posteriors.middleRows(static_cast<Eigen::Index>(b) * t_out, t_out)
                         .colwise()
                         .mean();
      return out;
    }
  };

  /// `input` stacks `batch` segments of `t_in` frames each.  In training
  /// mode batch norm uses batch statistics and updates the running ones;
  /// in inference mode it uses the stored running statistics.
  Forward forward(const MatrixRM<Scalar>& input, int batch, bool training,
                  std::vector<MatrixRM<Scalar>>* cache_xhat = nullptr,
                  std::vector<VectorX<Scalar>>* cache_inv_std = nullptr,
                  std::vector<MatrixRM<Scalar>>* cache_inputs = nullptr) {
    if (batch < 1 || input.rows() % batch != 0)
      throw Error(ErrorCode::shape, "tdnn: input rows not divisible by batch");
    if (input.cols() != config.input_dim)
      throw Error(ErrorCode::shape, "tdnn: expected " + std::to_string(config.input_dim) +
                                        " feature columns, got " + std::to_string(input.cols()));
    int t_in = static_cast<int>(input.rows()) / batch;
    if (config.output_frames(t_in) < 1)
      throw Error(ErrorCode::shape, "tdnn: segment of " + std::to_string(t_in) +
                                        " frames is shorter than the receptive field of " +
                                        std::to_string(config.context_consumed() + 1));

    if (cache_xhat) cache_xhat->resize(layers.size());
    if (cache_inv_std) cache_inv_std->resize(layers.size());
    if (cache_inputs) cache_inputs->resize(layers.size());

    Forward out;
    out.batch = batch;
    MatrixRM<Scalar> act = input;
    int rep_layer = config.representation_layer();
    if (rep_layer < 0) out.representation = act;

    for (size_t li = 0; li < layers.size(); ++li) {
      TdnnLayer<Scalar>& layer = layers[li];
      if (cache_inputs) (*cache_inputs)[li] = act;

      MatrixRM<Scalar> cols = nn_detail::im2col(act, batch, t_in, layer.context);
      t_in = t_in - layer.context + 1;
      MatrixRM<Scalar> z = cols * layer.w.transpose();
      z.rowwise() += layer.b.transpose();

      // batch norm over all frame rows, per channel
      Eigen::Index n = z.rows();
      VectorX<Scalar> mean, var;
      if (training) {
        mean = z.colwise().mean().transpose();
        MatrixRM<Scalar> centered = z.rowwise() - mean.transpose();
        var = centered.array().square().colwise().mean().matrix().transpose();
        Scalar mom = static_cast<Scalar>(bn.momentum);
        Scalar unbias = n > 1 ? static_cast<Scalar>(n) / static_cast<Scalar>(n - 1)
                              : static_cast<Scalar>(1);
        layer.run_mean = (Scalar(1) - mom) * layer.run_mean + mom * mean;
        layer.run_var = (Scalar(1) - mom) * layer.run_var + mom * (var * unbias);
        z = std::move(centered);
      } else {
        mean = layer.run_mean;
        var = layer.run_var;
        z.rowwise() -= mean.transpose();
      }
      VectorX<Scalar> inv_std =
          (var.array() + static_cast<Scalar>(bn.eps)).sqrt().inverse().matrix();
      z = (z.array().rowwise() * inv_std.transpose().array()).matrix();
      if (cache_xhat) (*cache_xhat)[li] = z;
      if (cache_inv_std) (*cache_inv_std)[li] = inv_std;

      z = (z.array().rowwise() * layer.gamma.transpose().array()).matrix();
      z.rowwise() += layer.beta.transpose();

      bool last = li + 1 == layers.size();
      if (!last) z = z.cwiseMax(Scalar(0));
      act = std::move(z);
      if (static_cast<int>(li) == rep_layer) out.representation = act;
    }

    out.t_out = t_in;
    softmax_rows(act);
    out.posteriors = std::move(act);
    return out;
  }

  /// Cross-entropy over frames with per-segment labels broadcast to every
  /// output frame.  Returns the mean frame loss and accumulates gradients.
  Scalar forward_backward(const MatrixRM<Scalar>& input, int batch,
                          const std::vector<int>& labels, TdnnGradients<Scalar>& grads,
                          MatrixRM<Scalar>* segment_posteriors = nullptr) {
    if (static_cast<int>(labels.size()) != batch)
      throw Error(ErrorCode::shape, "tdnn: one label per segment required");
    for (int y : labels)
      if (y < 0 || y >= n_classes())
        throw Error(ErrorCode::range, "tdnn: label out of range");

    std::vector<MatrixRM<Scalar>> xhat, inputs;
    std::vector<VectorX<Scalar>> inv_std;
    Forward fwd = forward(input, batch, /*training=*/true, &xhat, &inv_std, &inputs);
    if (segment_posteriors) *segment_posteriors = fwd.segment_posteriors();

    int t_out = fwd.t_out;
    Eigen::Index n_frames = fwd.posteriors.rows();

    Scalar loss = 0;
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < t_out; ++t) {
        Scalar p = fwd.posteriors(static_cast<Eigen::Index>(b) * t_out + t, labels[b]);
        loss -= std::log(std::max(p, std::numeric_limits<Scalar>::min()));
      }
    loss /= static_cast<Scalar>(n_frames);

    // softmax + cross-entropy gradient at the last layer's affine output
    MatrixRM<Scalar> delta = fwd.posteriors;
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < t_out; ++t)
        delta(static_cast<Eigen::Index>(b) * t_out + t, labels[b]) -= Scalar(1);
    delta /= static_cast<Scalar>(n_frames);

    grads.resize(layers.size());
    int t_in_layer = t_out;  // reconstructed per layer below

    for (int li = static_cast<int>(layers.size()) - 1; li >= 0; --li) {
      TdnnLayer<Scalar>& layer = layers[static_cast<size_t>(li)];
      LayerGrads<Scalar>& g = grads[static_cast<size_t>(li)];
      const MatrixRM<Scalar>& xh = xhat[static_cast<size_t>(li)];
      const VectorX<Scalar>& istd = inv_std[static_cast<size_t>(li)];
      const MatrixRM<Scalar>& layer_in = inputs[static_cast<size_t>(li)];
      t_in_layer = static_cast<int>(layer_in.rows()) / batch;

      bool last = li + 1 == static_cast<int>(layers.size());
      if (!last) {
        // ReLU mask from the cached normalized input: y = gamma*xhat + beta
        MatrixRM<Scalar> pre = (xh.array().rowwise() * layer.gamma.transpose().array()).matrix();
        pre.rowwise() += layer.beta.transpose();
        delta = ((pre.array() > Scalar(0)).template cast<Scalar>() * delta.array()).matrix();
      }

      // batch norm backward
      Eigen::Index n = delta.rows();
      g.dgamma = (delta.array() * xh.array()).colwise().sum().matrix().transpose();
      g.dbeta = delta.colwise().sum().transpose();
      MatrixRM<Scalar> dxhat =
          (delta.array().rowwise() * layer.gamma.transpose().array()).matrix();
      VectorX<Scalar> sum_dxhat = dxhat.colwise().sum().transpose();
      VectorX<Scalar> sum_dxhat_xhat =
          (dxhat.array() * xh.array()).colwise().sum().matrix().transpose();
      MatrixRM<Scalar> dz =
          dxhat * static_cast<Scalar>(n) -
          (xh.array().rowwise() * sum_dxhat_xhat.transpose().array()).matrix();
      dz.rowwise() -= sum_dxhat.transpose();
      dz = (dz.array().rowwise() * (istd.transpose().array() / static_cast<Scalar>(n))).matrix();

      // conv backward; the unrolled input is rebuilt rather than cached
      MatrixRM<Scalar> cols = nn_detail::im2col(layer_in, batch, t_in_layer, layer.context);
      g.dw = dz.transpose() * cols;
      g.db = dz.colwise().sum().transpose();
      if (li > 0) {
        MatrixRM<Scalar> dcols = dz * layer.w;
        delta = nn_detail::col2im(dcols, batch, t_in_layer, layer.context,
                                  static_cast<int>(layer_in.cols()));
      }
    }
    return loss;
  }
};

// ---------------------------------------------------------------------------
// Optimizer

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay; only convolution weights decay, biases and batch
/// norm parameters do not.
template <typename Scalar = float>
class AdamW {
 public:
  explicit AdamW(const AdamWConfig& cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  int64_t steps() const { return t_; }

  void step(TdnnModel<Scalar>& model, const TdnnGradients<Scalar>& grads) {
    if (grads.size() != model.layers.size())
      throw Error(ErrorCode::shape, "adamw: gradient/layer count mismatch");
    if (m_.empty()) {
      m_.resize(grads.size());
      v_.resize(grads.size());
      for (size_t li = 0; li < grads.size(); ++li) {
        auto& l = model.layers[li];
        m_[li].dw = MatrixRM<Scalar>::Zero(l.w.rows(), l.w.cols());
        m_[li].db = VectorX<Scalar>::Zero(l.b.size());
        m_[li].dgamma = VectorX<Scalar>::Zero(l.gamma.size());
        m_[li].dbeta = VectorX<Scalar>::Zero(l.beta.size());
        v_[li] = m_[li];
      }
    }
    ++t_;
    Scalar b1 = static_cast<Scalar>(cfg_.beta1), b2 = static_cast<Scalar>(cfg_.beta2);
    Scalar bc1 = Scalar(1) - static_cast<Scalar>(std::pow(cfg_.beta1, t_));
    Scalar bc2 = Scalar(1) - static_cast<Scalar>(std::pow(cfg_.beta2, t_));
    Scalar lr = static_cast<Scalar>(cfg_.lr), eps = static_cast<Scalar>(cfg_.eps);
    Scalar wd = static_cast<Scalar>(cfg_.weight_decay);

    auto update = [&](auto& param, auto& m, auto& v, const auto& g, bool decay) {
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
      auto mhat = (m / bc1).array();
      auto vhat = (v / bc2).array();
      param.array() -=
          lr * (mhat / (vhat.sqrt() + eps) + (decay ? wd : Scalar(0)) * param.array());
    };

    for (size_t li = 0; li < grads.size(); ++li) {
      auto& l = model.layers[li];
      update(l.w, m_[li].dw, v_[li].dw, grads[li].dw, true);
      update(l.b, m_[li].db, v_[li].db, grads[li].db, false);
      update(l.gamma, m_[li].dgamma, v_[li].dgamma, grads[li].dgamma, false);
      update(l.beta, m_[li].dbeta, v_[li].dbeta, grads[li].dbeta, false);
    }
  }

 private:
  AdamWConfig cfg_;
  int64_t t_ = 0;
  TdnnGradients<Scalar> m_, v_;
};

// ---------------------------------------------------------------------------
// Trainer

struct TrainConfig {
  int epochs = 15;
  int batch_segments = 512;
  AdamWConfig adamw;
  uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // segment level, batch statistics
  double val_loss = 0.0;
  double val_accuracy = 0.0;  // segment level, inference mode
  int64_t optimizer_steps = 0;
};

/// Streams features one batch at a time via the loader so the resident set
/// stays proportional to the batch size, not the corpus.
template <typename Scalar = float>
class TdnnTrainer {
 public:
  using Loader = std::function<MatrixRM<Scalar>(size_t)>;  // index -> (T x input_dim)

  TdnnTrainer(TdnnModel<Scalar>& model, const TrainConfig& cfg)
      : model_(model), cfg_(cfg), opt_(cfg.adamw) {
    if (cfg_.epochs < 1) throw Error(ErrorCode::config, "trainer: epochs must be >= 1");
    if (cfg_.batch_segments < 2)
      throw Error(ErrorCode::config, "trainer: batch_segments must be >= 2 for batch norm");
  }

  /// One pass over the training set in a seeded per-epoch order, then a full
  /// inference-mode pass over the validation set.
  EpochStats run_epoch(int epoch, const Loader& load, const std::vector<int>& labels,
                       const Loader& val_load, const std::vector<int>& val_labels) {
    if (labels.empty()) throw Error(ErrorCode::empty_input, "trainer: no training segments");
    std::vector<size_t> order(labels.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(cfg_.seed, "epoch:" + std::to_string(epoch));
    rng.shuffle(order);

    EpochStats stats;
    stats.epoch = epoch;
    double loss_sum = 0.0;
    int64_t frames_like = 0;
    int64_t correct = 0;

    size_t pos = 0;
    int batch_id = 0;
    while (pos < order.size()) {
      size_t take = std::min(static_cast<size_t>(cfg_.batch_segments), order.size() - pos);
      std::vector<int> ylab(take);
      MatrixRM<Scalar> input;
      int t_in = -1;
      for (size_t i = 0; i < take; ++i) {
        MatrixRM<Scalar> f = load(order[pos + i]);
        if (t_in < 0) {
          t_in = static_cast<int>(f.rows());
          input.resize(static_cast<Eigen::Index>(take) * t_in, f.cols());
        }
        if (static_cast<int>(f.rows()) != t_in || f.cols() != input.cols())
          throw Error(ErrorCode::shape, "trainer: segments in a batch must share one shape");
        input.middleRows(static_cast<Eigen::Index>(i) * t_in, t_in) = f;
        ylab[i] = labels[order[pos + i]];
      }

      TdnnGradients<Scalar> grads;
      MatrixRM<Scalar> seg_post;
      Scalar loss = model_.forward_backward(input, static_cast<int>(take), ylab, grads, &seg_post);
      if (!std::isfinite(static_cast<double>(loss))) {
        double max_grad = 0.0;
        for (const auto& g : grads)
          max_grad = std::max({max_grad,
                               static_cast<double>(g.dw.cwiseAbs().maxCoeff()),
                               static_cast<double>(g.db.cwiseAbs().maxCoeff())});
        std::ostringstream msg;
        msg << "non-finite loss " << loss << " in epoch " << epoch << " batch " << batch_id
            << " (max |grad| " << max_grad << ")";
        throw Error(ErrorCode::nonfinite_loss, msg.str());
      }
      opt_.step(model_, grads);

      loss_sum += static_cast<double>(loss) * static_cast<double>(take);
      frames_like += static_cast<int64_t>(take);
      for (size_t i = 0; i < take; ++i) {
        Eigen::Index arg;
        seg_post.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
        if (static_cast<int>(arg) == ylab[i]) ++correct;
      }
      pos += take;
      ++batch_id;
    }

    stats.train_loss = loss_sum / static_cast<double>(frames_like);
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    stats.optimizer_steps = opt_.steps();

    if (!val_labels.empty()) {
      auto [vl, va] = evaluate(val_load, val_labels);
      stats.val_loss = vl;
      stats.val_accuracy = va;
    }
    return stats;
  }

  /// Inference-mode loss and segment accuracy.
  std::pair<double, double> evaluate(const Loader& load, const std::vector<int>& labels) {
    double loss_sum = 0.0;
    int64_t frames = 0;
    int64_t correct = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
      MatrixRM<Scalar> f = load(i);
      auto fwd = model_.forward(f, 1, /*training=*/false);
      for (Eigen::Index t = 0; t < fwd.posteriors.rows(); ++t) {
        Scalar p = fwd.posteriors(t, labels[i]);
        loss_sum -= std::log(std::max(static_cast<double>(p), 1e-300));
      }
      frames += fwd.posteriors.rows();
      VectorX<Scalar> avg = average_posterior(fwd.posteriors);
      Eigen::Index arg;
      avg.maxCoeff(&arg);
      if (static_cast<int>(arg) == labels[i]) ++correct;
    }
    return {frames ? loss_sum / static_cast<double>(frames) : 0.0,
            labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size())};
  }

  AdamW<Scalar>& optimizer() { return opt_; }

 private:
  TdnnModel<Scalar>& model_;
  TrainConfig cfg_;
  AdamW<Scalar> opt_;
};

// ---------------------------------------------------------------------------
// Serialization: magic + version + config + labels + registry hash +
// provenance + f32 tensors in declaration order.

template <typename Scalar>
void save_model(std::ostream& os, const TdnnModel<Scalar>& m) {
  write_bytes(os, "OTDN", 4);
  write_u32(os, 1);
  write_u32(os, static_cast<uint32_t>(m.config.input_dim));
  write_u32(os, static_cast<uint32_t>(m.config.n_layers()));
  for (int li = 0; li < m.config.n_layers(); ++li) {
    write_u32(os, static_cast<uint32_t>(m.config.layer_dims[static_cast<size_t>(li)]));
    write_u32(os, static_cast<uint32_t>(m.config.layer_contexts[static_cast<size_t>(li)]));
  }
  write_u32(os, static_cast<uint32_t>(m.class_labels.size()));
  for (const auto& s : m.class_labels) write_string(os, s);
  write_u64(os, m.registry_hash);
  write_string(os, m.provenance);
  write_f64(os, m.bn.momentum);
  write_f64(os, m.bn.eps);
  auto put = [&](const auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i)
      write_f32(os, static_cast<float>(t.data()[i]));
  };
  for (const auto& l : m.layers) {
    put(l.w);
    put(l.b);
    put(l.gamma);
    put(l.beta);
    put(l.run_mean);
    put(l.run_var);
  }
}

template <typename Scalar>
void save_model(const std::string& path, const TdnnModel<Scalar>& m) {
  auto os = open_out(path);
  save_model(os, m);
}

template <typename Scalar = float>
TdnnModel<Scalar> load_model(std::istream& is) {
  expect_magic(is, "OTDN", "model file");
  uint32_t version = read_u32(is);
  if (version != 1)
    throw Error(ErrorCode::version_mismatch,
                "model file: unsupported version " + std::to_string(version));
  TdnnModel<Scalar> m;
  m.config.input_dim = static_cast<int>(read_u32(is));
  uint32_t n_layers = read_u32(is);
  m.config.layer_dims.resize(n_layers);
  m.config.layer_contexts.resize(n_layers);
  for (uint32_t li = 0; li < n_layers; ++li) {
    m.config.layer_dims[li] = static_cast<int>(read_u32(is));
    m.config.layer_contexts[li] = static_cast<int>(read_u32(is));
  }
  m.config.validate();
  uint32_t n_labels = read_u32(is);
  m.class_labels.resize(n_labels);
  for (auto& s : m.class_labels) s = read_string(is);
  if (static_cast<int>(n_labels) != m.config.layer_dims.back())
    throw Error(ErrorCode::version_mismatch, "model file: label/head size mismatch");
  m.registry_hash = read_u64(is);
  m.provenance = read_string(is);
  m.bn.momentum = read_f64(is);
  m.bn.eps = read_f64(is);
  auto get = [&](auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i)
      t.data()[i] = static_cast<Scalar>(read_f32(is));
  };
  int in_dim = m.config.input_dim;
  for (uint32_t li = 0; li < n_layers; ++li) {
    TdnnLayer<Scalar> l;
    l.context = m.config.layer_contexts[li];
    int out_dim = m.config.layer_dims[li];
    l.w.resize(out_dim, l.context * in_dim);
    l.b.resize(out_dim);
    l.gamma.resize(out_dim);
    l.beta.resize(out_dim);
    l.run_mean.resize(out_dim);
    l.run_var.resize(out_dim);
    get(l.w);
    get(l.b);
    get(l.gamma);
    get(l.beta);
    get(l.run_mean);
    get(l.run_var);
    m.layers.push_back(std::move(l));
    in_dim = out_dim;
  }
  return m;
}

template <typename Scalar = float>
TdnnModel<Scalar> load_model(const std::string& path) {
  auto is = open_in(path);
  return load_model<Scalar>(is);
}

/// Hash of the serialized model with the provenance stamp cleared, so the
/// digest identifies the learned parameters no matter where they were
/// produced.  Used to assert the network is untouched by backend operations.
template <typename Scalar>
uint64_t model_fingerprint(const TdnnModel<Scalar>& m) {
  TdnnModel<Scalar> scrubbed = m;
  scrubbed.provenance.clear();
  std::ostringstream os(std::ios::binary);
  save_model(os, scrubbed);
  std::string bytes = os.str();
  return fnv1a64(bytes);
}

/// Guard used wherever a model meets a registry: the in-set list that defined
/// the head must be byte-identical.
inline void require_registry_match(uint64_t model_hash, const LanguageRegistry& registry) {
  if (model_hash != registry.in_set_hash())
    throw Error(ErrorCode::registry_mismatch,
                "model was trained against a different in-set language registry");
}

}  // namespace olid

#endif  // OLID_NN_HPP
