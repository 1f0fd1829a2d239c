// tests/test_nn.cpp

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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "olid/common.hpp"
#include "olid/nn.hpp"
#include "olid/registry.hpp"

using namespace olid;

namespace {

LanguageRegistry fake_registry(int n_classes) {
  LanguageRegistry reg;
  for (int i = 0; i < n_classes; ++i) {
    std::string code = "l";
    code += static_cast<char>('a' + i / 26);
    code += static_cast<char>('a' + i % 26);
    reg.in_set.push_back(code);
  }
  return reg;
}

TdnnConfig tiny_config() {
  TdnnConfig cfg;
  cfg.input_dim = 3;
  cfg.layer_dims = {4, 4, 2};
  cfg.layer_contexts = {3, 3, 1};
  return cfg;
}

template <typename Scalar>
MatrixRM<Scalar> random_input(int rows, int cols, uint64_t seed) {
  Rng rng(seed, "input");
  MatrixRM<Scalar> x(rows, cols);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      x(r, c) = static_cast<Scalar>(rng.normal());
  return x;
}

int64_t closed_form_params(const TdnnConfig& cfg) {
  int64_t n = 0;
  int in_dim = cfg.input_dim;
  for (size_t li = 0; li < cfg.layer_dims.size(); ++li) {
    int out = cfg.layer_dims[li];
    int ctx = cfg.layer_contexts[li];
    n += static_cast<int64_t>(out) * ctx * in_dim + out + 2 * out;
    in_dim = out;
  }
  return n;
}

}  // namespace

TEST_CASE("production architecture arithmetic") {
  TdnnConfig cfg;  // defaults
  auto reg = fake_registry(32);
  auto model = TdnnModel<float>::init(cfg, reg, 42);

  REQUIRE(model.n_classes() == 32);
  REQUIRE(model.config.context_consumed() == 6);
  REQUIRE(model.config.output_frames(398) == 392);
  REQUIRE(model.config.representation_dim() == 256);

  auto x = random_input<float>(398, 16, 1);
  auto fwd = model.forward(x, 1, false);
  REQUIRE(fwd.t_out == 392);
  REQUIRE(fwd.posteriors.rows() == 392);
  REQUIRE(fwd.posteriors.cols() == 32);
  REQUIRE(fwd.representation.rows() == 392);
  REQUIRE(fwd.representation.cols() == 256);

  for (Eigen::Index t = 0; t < fwd.posteriors.rows(); ++t) {
    double sum = fwd.posteriors.row(t).cast<double>().sum();
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
    REQUIRE(fwd.posteriors.row(t).minCoeff() > 0.0f);
    REQUIRE(fwd.posteriors.row(t).maxCoeff() < 1.0f);
  }

  REQUIRE(model.count_parameters() == closed_form_params(model.config));
  REQUIRE(model.count_parameters() == 548704);
}

TEST_CASE("parameter count on a hand-summed tiny network") {
  TdnnConfig cfg;
  cfg.input_dim = 3;
  cfg.layer_dims = {4, 2};
  cfg.layer_contexts = {3, 1};
  auto model = TdnnModel<float>::init(cfg, fake_registry(2), 7);
  // layer 0: 4*(3*3) + 4 + 2*4 = 48; layer 1: 2*4 + 2 + 2*2 = 14
  REQUIRE(model.count_parameters() == 62);
}

TEST_CASE("widening the head costs exactly the extra rows") {
  TdnnConfig cfg;
  auto m32 = TdnnModel<float>::init(cfg, fake_registry(32), 1);
  auto m64 = TdnnModel<float>::init(cfg, fake_registry(64), 1);
  REQUIRE(m64.count_parameters() - m32.count_parameters() == 32 * 256 + 3 * 32);
}

TEST_CASE("zeroed head weights give uniform posteriors") {
  TdnnConfig cfg;
  auto model = TdnnModel<float>::init(cfg, fake_registry(32), 3);
  model.layers.back().w.setZero();
  auto fwd = model.forward(random_input<float>(398, 16, 2), 1, false);
  for (Eigen::Index t = 0; t < fwd.posteriors.rows(); ++t)
    for (Eigen::Index c = 0; c < 32; ++c)
      REQUIRE(fwd.posteriors(t, c) == Catch::Approx(1.0 / 32.0).margin(1e-7));
}

TEST_CASE("average_posterior") {
  MatrixRM<float> rows(3, 2);
  rows << 0.25f, 0.75f, 0.25f, 0.75f, 0.25f, 0.75f;
  auto avg = average_posterior(rows);
  REQUIRE(avg(0) == Catch::Approx(0.25).margin(1e-7));
  REQUIRE(avg(1) == Catch::Approx(0.75).margin(1e-7));

  MatrixRM<float> hots(2, 2);
  hots << 1.0f, 0.0f, 0.0f, 1.0f;
  auto mixed = average_posterior(hots);
  REQUIRE(mixed(0) == Catch::Approx(0.5).margin(1e-7));
  REQUIRE(mixed(1) == Catch::Approx(0.5).margin(1e-7));

  MatrixRM<float> none(0, 2);
  try {
    average_posterior(none);
    FAIL("expected empty input rejection");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::empty_input);
  }
}

TEST_CASE("softmax is shift invariant and saturation safe") {
  MatrixRM<double> a(1, 3), b(1, 3);
  a << 1.0, 2.0, 3.0;
  b = a.array() + 100.0;
  softmax_rows(a);
  softmax_rows(b);
  REQUIRE((a - b).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(a.sum() == Catch::Approx(1.0).margin(1e-12));

  MatrixRM<float> hot(1, 2);
  hot << 1000.0f, 0.0f;
  softmax_rows(hot);
  REQUIRE(std::isfinite(hot(0, 0)));
  REQUIRE(hot(0, 0) == Catch::Approx(1.0).margin(1e-6));
  REQUIRE(hot.sum() == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("segment_posteriors averages each segment's block") {
  auto model = TdnnModel<float>::init(tiny_config(), fake_registry(2), 5);
  int t_in = 9, batch = 3;
  auto x = random_input<float>(batch * t_in, 3, 11);
  auto fwd = model.forward(x, batch, false);
  auto seg = fwd.segment_posteriors();
  REQUIRE(seg.rows() == batch);
  int t_out = fwd.t_out;
  for (int b = 0; b < batch; ++b) {
    auto block = fwd.posteriors.middleRows(static_cast<Eigen::Index>(b) * t_out, t_out);
    for (Eigen::Index c = 0; c < seg.cols(); ++c)
      REQUIRE(seg(b, c) == Catch::Approx(block.col(c).mean()).margin(1e-6));
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  // 20 random small instances, epsilon 1e-4, vector relative error < 1e-4
  const double eps = 1e-4;
  double worst = 0.0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto model = TdnnModel<double>::init(tiny_config(), fake_registry(2), seed + 100);
    int batch = 3, t_in = 9;
    auto x = random_input<double>(batch * t_in, 3, seed + 500);
    Rng lab_rng(seed, "labels");
    std::vector<int> labels(static_cast<size_t>(batch));
    for (auto& y : labels) y = static_cast<int>(lab_rng.index(2));

    TdnnGradients<double> grads;
    model.forward_backward(x, batch, labels, grads);

    auto loss_at = [&]() {
      TdnnGradients<double> g;
      return static_cast<double>(model.forward_backward(x, batch, labels, g));
    };

    std::vector<double> fd, an;
    auto probe = [&](auto& tensor, const auto& grad_tensor) {
      for (Eigen::Index i = 0; i < tensor.size(); ++i) {
        double saved = tensor.data()[i];
        tensor.data()[i] = saved + eps;
        double hi = loss_at();
        tensor.data()[i] = saved - eps;
        double lo = loss_at();
        tensor.data()[i] = saved;
        fd.push_back((hi - lo) / (2.0 * eps));
        an.push_back(grad_tensor.data()[i]);
      }
    };
    for (size_t li = 0; li < model.layers.size(); ++li) {
      probe(model.layers[li].w, grads[li].dw);
      probe(model.layers[li].b, grads[li].db);
      probe(model.layers[li].gamma, grads[li].dgamma);
      probe(model.layers[li].beta, grads[li].dbeta);
    }

    double num = 0.0, den_fd = 0.0, den_an = 0.0;
    for (size_t i = 0; i < fd.size(); ++i) {
      num += (fd[i] - an[i]) * (fd[i] - an[i]);
      den_fd += fd[i] * fd[i];
      den_an += an[i] * an[i];
    }
    double rel = std::sqrt(num) / std::max(std::sqrt(std::max(den_fd, den_an)), 1e-12);
    worst = std::max(worst, rel);
    REQUIRE(rel < 1e-4);
  }
  INFO("worst relative error " << worst);
  REQUIRE(worst < 1e-4);
}

TEST_CASE("adamw single steps match the published recurrence") {
  TdnnConfig cfg;
  cfg.input_dim = 1;
  cfg.layer_dims = {1};
  cfg.layer_contexts = {1};
  auto model = TdnnModel<float>::init(cfg, fake_registry(1), 0);
  model.layers[0].w(0, 0) = 1.0f;
  model.layers[0].b(0) = 1.0f;
  model.layers[0].gamma(0) = 1.0f;

  TdnnGradients<float> grads(1);
  grads[0].dw = MatrixRM<float>::Ones(1, 1);
  grads[0].db = VectorX<float>::Ones(1);
  grads[0].dgamma = VectorX<float>::Ones(1);
  grads[0].dbeta = VectorX<float>::Ones(1);

  AdamWConfig ac;  // lr 1e-3, betas 0.9/0.999, eps 1e-8, weight decay 0.01
  AdamW<float> opt(ac);
  opt.step(model, grads);
  REQUIRE(opt.steps() == 1);

  // step 1 by hand: m=(1-b1)g, v=(1-b2)g^2, mhat=vhat=1 for g=1,
  // so w -= lr*(1/(1+eps) + wd*w) and b -= lr*(1/(1+eps))
  double upd = 1.0 / (1.0 + ac.eps);
  double w1 = 1.0 - ac.lr * (upd + ac.weight_decay * 1.0);
  double b1 = 1.0 - ac.lr * upd;
  REQUIRE(model.layers[0].w(0, 0) == Catch::Approx(w1).margin(1e-6));
  REQUIRE(model.layers[0].b(0) == Catch::Approx(b1).margin(1e-6));
  REQUIRE(model.layers[0].gamma(0) == Catch::Approx(b1).margin(1e-6));
  REQUIRE(model.layers[0].beta(0) == Catch::Approx(0.0 - ac.lr * upd).margin(1e-6));

  // step 2 with the same unit gradient keeps mhat=vhat=1 exactly
  opt.step(model, grads);
  REQUIRE(opt.steps() == 2);
  double w2 = w1 - ac.lr * (upd + ac.weight_decay * w1);
  double b2 = b1 - ac.lr * upd;
  REQUIRE(model.layers[0].w(0, 0) == Catch::Approx(w2).margin(1e-6));
  REQUIRE(model.layers[0].b(0) == Catch::Approx(b2).margin(1e-6));
}

TEST_CASE("weight decay is decoupled from the gradient moments") {
  // zero gradient: biases must not move at all, weights shrink by lr*wd*w
  TdnnConfig cfg;
  cfg.input_dim = 1;
  cfg.layer_dims = {1};
  cfg.layer_contexts = {1};
  auto model = TdnnModel<float>::init(cfg, fake_registry(1), 0);
  model.layers[0].w(0, 0) = 2.0f;
  model.layers[0].b(0) = 3.0f;

  TdnnGradients<float> grads(1);
  grads[0].dw = MatrixRM<float>::Zero(1, 1);
  grads[0].db = VectorX<float>::Zero(1);
  grads[0].dgamma = VectorX<float>::Zero(1);
  grads[0].dbeta = VectorX<float>::Zero(1);

  AdamWConfig ac;
  AdamW<float> opt(ac);
  opt.step(model, grads);
  REQUIRE(model.layers[0].w(0, 0) == Catch::Approx(2.0 * (1.0 - ac.lr * ac.weight_decay)).margin(1e-7));
  REQUIRE(model.layers[0].b(0) == 3.0f);
  REQUIRE(model.layers[0].gamma(0) == 1.0f);
  REQUIRE(model.layers[0].beta(0) == 0.0f);
}

TEST_CASE("model save/load round trip is exact") {
  auto model = TdnnModel<float>::init(tiny_config(), fake_registry(2), 77);
  model.provenance = "{\"trained\":true}";

  // one training step makes batch norm running statistics non-trivial
  auto x = random_input<float>(3 * 9, 3, 8);
  TdnnGradients<float> grads;
  model.forward_backward(x, 3, {0, 1, 0}, grads);
  AdamW<float> opt;
  opt.step(model, grads);

  std::stringstream ss;
  save_model(ss, model);
  auto back = load_model<float>(ss);

  REQUIRE(back.class_labels == model.class_labels);
  REQUIRE(back.registry_hash == model.registry_hash);
  REQUIRE(back.provenance == model.provenance);
  REQUIRE(back.config.layer_dims == model.config.layer_dims);
  REQUIRE(back.config.layer_contexts == model.config.layer_contexts);
  REQUIRE(model_fingerprint(back) == model_fingerprint(model));

  auto probe = random_input<float>(9, 3, 9);
  auto fa = model.forward(probe, 1, false);
  auto fb = back.forward(probe, 1, false);
  REQUIRE((fa.posteriors - fb.posteriors).cwiseAbs().maxCoeff() == 0.0f);
  REQUIRE((fa.representation - fb.representation).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("model file rejects corruption") {
  auto model = TdnnModel<float>::init(tiny_config(), fake_registry(2), 1);
  std::stringstream ss;
  save_model(ss, model);
  std::string bytes = ss.str();

  {
    std::string corrupt = bytes;
    corrupt[1] = 'X';
    std::stringstream in(corrupt);
    try {
      load_model<float>(in);
      FAIL("expected magic rejection");
    } catch (const Error& e) {
      REQUIRE(e.code() == ErrorCode::version_mismatch);
    }
  }
  {
    std::string corrupt = bytes;
    corrupt[4] = 9;
    std::stringstream in(corrupt);
    try {
      load_model<float>(in);
      FAIL("expected version rejection");
    } catch (const Error& e) {
      REQUIRE(e.code() == ErrorCode::version_mismatch);
    }
  }
  {
    std::stringstream in(bytes.substr(0, bytes.size() - 8));
    try {
      load_model<float>(in);
      FAIL("expected truncation rejection");
    } catch (const Error& e) {
      REQUIRE(e.code() == ErrorCode::io);
    }
  }
}

TEST_CASE("registry binding is enforced") {
  auto reg = fake_registry(2);
  auto model = TdnnModel<float>::init(tiny_config(), reg, 1);
  REQUIRE_NOTHROW(require_registry_match(model.registry_hash, reg));

  auto other = fake_registry(2);
  std::swap(other.in_set[0], other.in_set[1]);  // same codes, different head order
  try {
    require_registry_match(model.registry_hash, other);
    FAIL("expected registry mismatch");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::registry_mismatch);
  }
}

TEST_CASE("initialization is deterministic in the seed") {
  TdnnConfig cfg = tiny_config();
  auto reg = fake_registry(2);
  auto a = TdnnModel<float>::init(cfg, reg, 42);
  auto b = TdnnModel<float>::init(cfg, reg, 42);
  auto c = TdnnModel<float>::init(cfg, reg, 43);
  REQUIRE(model_fingerprint(a) == model_fingerprint(b));
  REQUIRE(model_fingerprint(a) != model_fingerprint(c));
}

TEST_CASE("forward validates shapes") {
  auto model = TdnnModel<float>::init(tiny_config(), fake_registry(2), 2);

  auto bad_cols = random_input<float>(9, 5, 1);
  REQUIRE_THROWS_AS(model.forward(bad_cols, 1, false), Error);

  auto x = random_input<float>(9, 3, 1);
  REQUIRE_THROWS_AS(model.forward(x, 2, false), Error);  // 9 rows, batch 2

  auto too_short = random_input<float>(4, 3, 1);  // receptive field is 5
  try {
    model.forward(too_short, 1, false);
    FAIL("expected shape rejection");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::shape);
  }
}

TEST_CASE("forward_backward validates labels") {
  auto model = TdnnModel<float>::init(tiny_config(), fake_registry(2), 2);
  auto x = random_input<float>(2 * 9, 3, 3);
  TdnnGradients<float> grads;
  REQUIRE_THROWS_AS(model.forward_backward(x, 2, {0}, grads), Error);
  try {
    model.forward_backward(x, 2, {0, 2}, grads);
    FAIL("expected label range rejection");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::range);
  }
}

TEST_CASE("inference mode is pure, training mode updates running stats") {
  auto model = TdnnModel<float>::init(tiny_config(), fake_registry(2), 4);
  auto x = random_input<float>(2 * 9, 3, 4);

  auto before = model.layers[0].run_mean;
  auto fa = model.forward(x, 2, false);
  auto fb = model.forward(x, 2, false);
  REQUIRE((fa.posteriors - fb.posteriors).cwiseAbs().maxCoeff() == 0.0f);
  REQUIRE((model.layers[0].run_mean - before).cwiseAbs().maxCoeff() == 0.0f);

  model.forward(x, 2, true);
  REQUIRE((model.layers[0].run_mean - before).cwiseAbs().maxCoeff() > 0.0f);
}

namespace {

// Two linearly separable synthetic classes on a 12-frame grid.
struct ToyTask {
  std::vector<MatrixRM<float>> feats;
  std::vector<int> labels;

  explicit ToyTask(int per_class, uint64_t seed, int t = 12, int dim = 4) {
    Rng rng(seed, "toy");
    for (int cls = 0; cls < 2; ++cls)
      for (int i = 0; i < per_class; ++i) {
        MatrixRM<float> f(t, dim);
        for (int r = 0; r < t; ++r)
          for (int c = 0; c < dim; ++c) {
            float base = (cls == 0 ? 1.0f : -1.0f) * ((c % 2) ? 1.0f : -1.0f);
            f(r, c) = base + static_cast<float>(0.3 * rng.normal());
          }
        feats.push_back(std::move(f));
        labels.push_back(cls);
      }
  }

  TdnnTrainer<float>::Loader loader() const {
    return [this](size_t i) { return feats[i]; };
  }
};

}  // namespace

TEST_CASE("training reduces loss and separates a toy task") {
  TdnnConfig cfg;
  cfg.input_dim = 4;
  cfg.layer_dims = {8, 8, 2};
  cfg.layer_contexts = {3, 3, 1};
  auto model = TdnnModel<float>::init(cfg, fake_registry(2), 10);

  ToyTask train(40, 21), val(10, 22);
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_segments = 8;
  tc.adamw.lr = 0.01;
  tc.seed = 9;

  TdnnTrainer<float> trainer(model, tc);
  std::vector<EpochStats> stats;
  for (int e = 1; e <= tc.epochs; ++e)
    stats.push_back(trainer.run_epoch(e, train.loader(), train.labels, val.loader(), val.labels));

  REQUIRE(stats.back().train_loss < stats.front().train_loss);
  REQUIRE(stats.back().val_accuracy >= 0.9);
  REQUIRE(stats.back().optimizer_steps == static_cast<int64_t>(tc.epochs) * 10);
}

TEST_CASE("training is deterministic in the seed") {
  TdnnConfig cfg;
  cfg.input_dim = 4;
  cfg.layer_dims = {6, 2};
  cfg.layer_contexts = {3, 1};

  ToyTask train(16, 31);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_segments = 4;
  tc.seed = 5;

  uint64_t fp[2];
  for (int run = 0; run < 2; ++run) {
    auto model = TdnnModel<float>::init(cfg, fake_registry(2), 10);
    TdnnTrainer<float> trainer(model, tc);
    for (int e = 1; e <= tc.epochs; ++e)
      trainer.run_epoch(e, train.loader(), train.labels, train.loader(), train.labels);
    fp[run] = model_fingerprint(model);
  }
  REQUIRE(fp[0] == fp[1]);
}

TEST_CASE("trainer configuration and batch shape errors") {
  auto model = TdnnModel<float>::init(tiny_config(), fake_registry(2), 2);

  TrainConfig bad;
  bad.batch_segments = 1;
  REQUIRE_THROWS_AS(TdnnTrainer<float>(model, bad), Error);
  bad.batch_segments = 8;
  bad.epochs = 0;
  REQUIRE_THROWS_AS(TdnnTrainer<float>(model, bad), Error);

  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_segments = 2;
  TdnnTrainer<float> trainer(model, tc);

  std::vector<int> labels = {0, 1};
  auto ragged = [](size_t i) {
    return random_input<float>(i == 0 ? 9 : 10, 3, i);
  };
  REQUIRE_THROWS_AS(trainer.run_epoch(1, ragged, labels, ragged, {}), Error);

  std::vector<int> empty;
  auto none = [](size_t) { return MatrixRM<float>(); };
  try {
    trainer.run_epoch(1, none, empty, none, empty);
    FAIL("expected empty input rejection");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::empty_input);
  }
}

TEST_CASE("non-finite loss aborts with diagnostics") {
  auto model = TdnnModel<float>::init(tiny_config(), fake_registry(2), 2);
  model.layers[0].w(0, 0) = std::numeric_limits<float>::quiet_NaN();

  ToyTask train(4, 41, 9, 3);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_segments = 4;
  TdnnTrainer<float> trainer(model, tc);
  try {
    trainer.run_epoch(1, train.loader(), train.labels, train.loader(), {});
    FAIL("expected non-finite loss");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::nonfinite_loss);
    REQUIRE(std::string(e.what()).find("epoch") != std::string::npos);
  }
}
