// olid/backend.hpp

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

#ifndef OLID_BACKEND_HPP
#define OLID_BACKEND_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "olid/common.hpp"
#include "olid/features.hpp"
#include "olid/nn.hpp"
#include "olid/registry.hpp"

namespace olid {

enum class Pooling { concat, mean };

inline const char* pooling_name(Pooling p) { return p == Pooling::concat ? "concat" : "mean"; }

inline Pooling pooling_from_name(const std::string& s) {
  if (s == "concat") return Pooling::concat;
  if (s == "mean") return Pooling::mean;
  throw Error(ErrorCode::config, "unknown pooling '" + s + "' (use concat or mean)");
}

struct BackendConfig {
  int batch_segments = 4000;
  int k = 18;
  double novelty_threshold = 0.5;
  int min_enroll = 50;
  Pooling pooling = Pooling::concat;
  uint64_t seed = 0;

  void validate() const {
    if (batch_segments < 2) throw Error(ErrorCode::config, "backend: batch_segments must be >= 2");
    if (k < 1) throw Error(ErrorCode::config, "backend: k must be >= 1");
    if (min_enroll < 1) throw Error(ErrorCode::config, "backend: min_enroll must be >= 1");
    if (!(novelty_threshold >= 0.0 && novelty_threshold <= 1.0))
      throw Error(ErrorCode::config, "backend: novelty_threshold must lie in [0, 1]");
  }
};

struct RepresentationVector {
  Eigen::VectorXf values;
  std::string segment_id;
};

/// Frame embeddings tapped before the classification layer, flattened in
/// frame order (or mean-pooled when so configured).
template <typename Scalar>
RepresentationVector extract_representation(TdnnModel<Scalar>& model, const FeatureMatrix& fm,
                                            Pooling pooling = Pooling::concat,
                                            const std::string& segment_id = "") {
  MatrixRM<Scalar> input = fm.frames.template cast<Scalar>();
  auto fwd = model.forward(input, 1, /*training=*/false);
  RepresentationVector rep;
  rep.segment_id = segment_id;
  if (pooling == Pooling::concat) {
    MatrixRM<float> r = fwd.representation.template cast<float>();
    rep.values = Eigen::Map<Eigen::VectorXf>(r.data(), r.size());
  } else {
    VectorX<Scalar> m = fwd.representation.colwise().mean().transpose();
    rep.values = m.template cast<float>();
  }
  for (Eigen::Index i = 0; i < rep.values.size(); ++i)
    if (!std::isfinite(rep.values[i]))
      throw Error(ErrorCode::shape, "representation contains non-finite entries");
  return rep;
}

/// Streams representation vectors so fitting code can bound how many are
/// resident at once.
class RepresentationProvider {
 public:
  virtual ~RepresentationProvider() = default;
  virtual size_t size() const = 0;
  virtual std::string label(size_t i) const = 0;
  virtual std::string segment_id(size_t i) const = 0;
  virtual Eigen::VectorXf get(size_t i) = 0;
};

/// In-memory provider used by tests and enrollment call sites.
class VectorProvider final : public RepresentationProvider {
 public:
  VectorProvider() = default;
  void add(Eigen::VectorXf v, std::string label, std::string id) {
    vectors_.push_back(std::move(v));
    labels_.push_back(std::move(label));
    ids_.push_back(std::move(id));
  }
  size_t size() const override { return vectors_.size(); }
  std::string label(size_t i) const override { return labels_.at(i); }
  std::string segment_id(size_t i) const override { return ids_.at(i); }
  Eigen::VectorXf get(size_t i) override { return vectors_.at(i); }

 private:
  std::vector<Eigen::VectorXf> vectors_;
  std::vector<std::string> labels_;
  std::vector<std::string> ids_;
};

struct ResidencyStats {
  int64_t current = 0;
  int64_t peak = 0;
  void acquire(int64_t n) {
    current += n;
    peak = std::max(peak, current);
  }
  void release(int64_t n) { current -= n; }
};

// ---------------------------------------------------------------------------
// LDA.  The representation dimension D is ~1e5, so within-class whitening is
// derived from the eigendecomposition of the N x N Gram matrix of centered
// data; nothing of size D x D is ever formed.

struct LdaProjector {
  Eigen::VectorXd mean;             // D
  MatrixXdRow projection;           // D x k
  int k() const { return static_cast<int>(projection.cols()); }

  Eigen::VectorXd project(const Eigen::VectorXf& x) const {
    if (x.size() != mean.size())
      throw Error(ErrorCode::shape, "lda: vector length " + std::to_string(x.size()) +
                                        " does not match projector input " +
                                        std::to_string(mean.size()));
    return projection.transpose() * (x.cast<double>() - mean);
  }
};

namespace backend_detail {

struct ClassIndex {
  std::vector<std::string> classes;           // sorted
  std::vector<int> assignment;                // per sample
  std::vector<std::vector<size_t>> members;   // per class
};

inline ClassIndex index_classes(const std::vector<std::string>& labels) {
  ClassIndex ci;
  std::map<std::string, int> ids;
  for (const auto& l : labels) ids.emplace(l, 0);
  int next = 0;
  for (auto& [code, id] : ids) {
    id = next++;
    ci.classes.push_back(code);
  }
  ci.members.resize(ci.classes.size());
  ci.assignment.resize(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    int c = ids[labels[i]];
    ci.assignment[i] = c;
    ci.members[static_cast<size_t>(c)].push_back(i);
  }
  return ci;
}

inline void require_class_coverage(const ClassIndex& ci, const char* who) {
  if (ci.classes.size() < 2)
    throw Error(ErrorCode::degenerate_batch, std::string(who) + ": need at least 2 classes");
  for (size_t c = 0; c < ci.classes.size(); ++c)
    if (ci.members[c].size() < 2)
      throw Error(ErrorCode::degenerate_batch, std::string(who) + ": class '" + ci.classes[c] +
                                                   "' has fewer than 2 samples");
}

}  // namespace backend_detail

/// Fisher LDA via the Gram route: center per class, eigendecompose the Gram
/// matrix to get a within-class whitener, then SVD the whitened class means.
/// Output dimension is min(k_requested, C-1).
inline LdaProjector fit_lda(const MatrixXfRow& x, const std::vector<std::string>& labels,
                            int k_requested) {
  if (static_cast<size_t>(x.rows()) != labels.size())
    throw Error(ErrorCode::shape, "lda: one label per row required");
  if (k_requested < 1) throw Error(ErrorCode::config, "lda: k must be >= 1");
  auto ci = backend_detail::index_classes(labels);
  backend_detail::require_class_coverage(ci, "lda");

  const Eigen::Index n = x.rows(), d = x.cols();
  const int n_classes = static_cast<int>(ci.classes.size());

  MatrixXdRow xd = x.cast<double>();
  Eigen::VectorXd mu = xd.colwise().mean().transpose();
  MatrixXdRow class_means(n_classes, d);
  for (int c = 0; c < n_classes; ++c) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
    for (size_t i : ci.members[static_cast<size_t>(c)]) acc += xd.row(static_cast<Eigen::Index>(i)).transpose();
    class_means.row(c) = (acc / static_cast<double>(ci.members[static_cast<size_t>(c)].size())).transpose();
  }

  MatrixXdRow xw = xd;
  for (Eigen::Index i = 0; i < n; ++i)
    xw.row(i) -= class_means.row(ci.assignment[static_cast<size_t>(i)]);

  Eigen::MatrixXd gram = xw * xw.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success)
    throw Error(ErrorCode::degenerate_batch, "lda: Gram eigendecomposition failed");

  const Eigen::VectorXd& lam = eig.eigenvalues();  // ascending
  double lam_max = lam[n - 1];
  if (!(lam_max > 0.0))
    throw Error(ErrorCode::degenerate_batch, "lda: zero within-class variance in every direction");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = n - 1; i >= 0; --i)
    if (lam[i] > lam_max * 1e-12) keep.push_back(i);
  const int rank = static_cast<int>(keep.size());

  // Columns of phi whiten the average within-class scatter on its row space:
  // phi_i = Xw^T u_i / sqrt(lambda_i) is unit length, scaled by the floored
  // per-direction standard deviation.
  MatrixXdRow phi(d, rank);
  double denom = static_cast<double>(n - n_classes > 0 ? n - n_classes : 1);
  for (int j = 0; j < rank; ++j) {
    Eigen::Index i = keep[static_cast<size_t>(j)];
    Eigen::VectorXd v = xw.transpose() * eig.eigenvectors().col(i) / std::sqrt(lam[i]);
    double sigma2 = std::max(lam[i] / denom, 1e-8);
    phi.col(j) = v / std::sqrt(sigma2);
  }

  MatrixXdRow m(n_classes, rank);
  for (int c = 0; c < n_classes; ++c) {
    double n_c = static_cast<double>(ci.members[static_cast<size_t>(c)].size());
    m.row(c) = std::sqrt(n_c) * ((class_means.row(c) - mu.transpose()) * phi);
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinV);
  int k = std::min({k_requested, n_classes - 1, static_cast<int>(svd.matrixV().cols())});

  LdaProjector proj;
  proj.mean = mu;
  proj.projection = phi * svd.matrixV().leftCols(k);
  return proj;
}

// ---------------------------------------------------------------------------
// pLDA: two-covariance model with closed-form moment estimation.  The model
// is diagonalized once (simultaneous whitening of the within- and
// between-class covariances) so scoring is a product of 1-D Gaussians.

struct PldaModel {
  Eigen::VectorXd m;       // global mean, k
  Eigen::MatrixXd phi_w;   // within-class covariance
  Eigen::MatrixXd phi_b;   // between-class covariance
  Eigen::MatrixXd a;       // diagonalizing map: u = a * (y - m)
  Eigen::VectorXd psi;     // between-class variances in u-space
  std::vector<std::string> labels;    // sorted
  Eigen::MatrixXd u_means;            // C x k, per-class means in u-space
  std::vector<int64_t> counts;

  int dim() const { return static_cast<int>(m.size()); }
  int n_classes() const { return static_cast<int>(labels.size()); }

  Eigen::VectorXd to_u(const Eigen::VectorXd& y) const {
    if (y.size() != m.size())
      throw Error(ErrorCode::shape, "plda: vector dimension mismatch");
    return a * (y - m);
  }

  /// Log-likelihood of u under "same class as enrollment c", with the class
  /// center integrated out given the c-th class's n enrollment samples.
  double log_likelihood_u(const Eigen::VectorXd& u, int c) const {
    double n = static_cast<double>(counts[static_cast<size_t>(c)]);
    double ll = 0.0;
    for (int i = 0; i < dim(); ++i) {
      double shrink = n * psi[i] / (n * psi[i] + 1.0);
      double mean = shrink * u_means(c, i);
      double var = 1.0 + psi[i] / (n * psi[i] + 1.0);
      double r = u[i] - mean;
      ll += -0.5 * (std::log(2.0 * M_PI * var) + r * r / var);
    }
    return ll;
  }

  /// Log-likelihood under the marginal (class center unknown).
  double log_likelihood_marginal_u(const Eigen::VectorXd& u) const {
    double ll = 0.0;
    for (int i = 0; i < dim(); ++i) {
      double var = 1.0 + psi[i];
      ll += -0.5 * (std::log(2.0 * M_PI * var) + u[i] * u[i] / var);
    }
    return ll;
  }

  double llr(const Eigen::VectorXd& y, int c) const {
    Eigen::VectorXd u = to_u(y);
    return log_likelihood_u(u, c) - log_likelihood_marginal_u(u);
  }

  /// Class posteriors under a uniform class prior.
  Eigen::VectorXd posterior(const Eigen::VectorXd& y) const {
    Eigen::VectorXd u = to_u(y);
    Eigen::VectorXd ll(n_classes());
    for (int c = 0; c < n_classes(); ++c) ll[c] = log_likelihood_u(u, c);
    double mx = ll.maxCoeff();
    Eigen::VectorXd p = (ll.array() - mx).exp().matrix();
    return p / p.sum();
  }

  /// Argmax-posterior label; ties go to the lexicographically smallest code
  /// (labels are stored sorted, so the first maximum wins).
  std::pair<std::string, double> predict(const Eigen::VectorXd& y) const {
    Eigen::VectorXd p = posterior(y);
    Eigen::Index arg = 0;
    p.maxCoeff(&arg);
    return {labels[static_cast<size_t>(arg)], p[arg]};
  }
};

inline PldaModel fit_plda(const MatrixXdRow& y, const std::vector<std::string>& labels) {
  if (static_cast<size_t>(y.rows()) != labels.size())
    throw Error(ErrorCode::shape, "plda: one label per row required");
  auto ci = backend_detail::index_classes(labels);
  backend_detail::require_class_coverage(ci, "plda");

  const Eigen::Index n = y.rows();
  const int k = static_cast<int>(y.cols());
  const int n_classes = static_cast<int>(ci.classes.size());

  PldaModel model;
  model.labels = ci.classes;
  model.m = y.colwise().mean().transpose();

  Eigen::MatrixXd class_means(n_classes, k);
  model.counts.resize(static_cast<size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(k);
    for (size_t i : ci.members[static_cast<size_t>(c)]) acc += y.row(static_cast<Eigen::Index>(i)).transpose();
    model.counts[static_cast<size_t>(c)] =
        static_cast<int64_t>(ci.members[static_cast<size_t>(c)].size());
    class_means.row(c) = (acc / static_cast<double>(model.counts[static_cast<size_t>(c)])).transpose();
  }

  Eigen::MatrixXd phi_w = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd r = y.row(i).transpose() - class_means.row(ci.assignment[static_cast<size_t>(i)]).transpose();
    phi_w += r * r.transpose();
  }
  phi_w /= static_cast<double>(n - n_classes);

  // Raw between-class scatter inflates by Phi_w/n_c per class mean; subtract
  // the expected inflation, then floor to positive semi-definite.
  Eigen::MatrixXd s_b = Eigen::MatrixXd::Zero(k, k);
  for (int c = 0; c < n_classes; ++c) {
    Eigen::VectorXd r = class_means.row(c).transpose() - model.m;
    s_b += static_cast<double>(model.counts[static_cast<size_t>(c)]) * (r * r.transpose());
  }
  s_b /= static_cast<double>(n);
  Eigen::MatrixXd phi_b = s_b - (static_cast<double>(n_classes) / static_cast<double>(n)) * phi_w;
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eb(0.5 * (phi_b + phi_b.transpose()));
    Eigen::VectorXd lam = eb.eigenvalues().cwiseMax(0.0);
    phi_b = eb.eigenvectors() * lam.asDiagonal() * eb.eigenvectors().transpose();
  }

  // positive-definite floor on the within-class covariance
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ew(0.5 * (phi_w + phi_w.transpose()));
  double floor = std::max(1e-8, ew.eigenvalues().maxCoeff() * 1e-10);
  Eigen::VectorXd lw = ew.eigenvalues().cwiseMax(floor);
  phi_w = ew.eigenvectors() * lw.asDiagonal() * ew.eigenvectors().transpose();

  model.phi_w = phi_w;
  model.phi_b = phi_b;

  // simultaneous diagonalization: w1 whitens phi_w, then rotate to the
  // eigenbasis of the whitened phi_b
  Eigen::MatrixXd w1 =
      lw.array().sqrt().inverse().matrix().asDiagonal() * ew.eigenvectors().transpose();
  Eigen::MatrixXd b = w1 * phi_b * w1.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ebw(0.5 * (b + b.transpose()));
  // descending between-class variance
  Eigen::VectorXd psi_asc = ebw.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd q = ebw.eigenvectors();
  model.psi.resize(k);
  Eigen::MatrixXd q_desc(k, k);
  for (int i = 0; i < k; ++i) {
    model.psi[i] = psi_asc[k - 1 - i];
    q_desc.col(i) = q.col(k - 1 - i);
  }
  model.a = q_desc.transpose() * w1;

  model.u_means.resize(n_classes, k);
  for (int c = 0; c < n_classes; ++c)
    model.u_means.row(c) = (model.a * (class_means.row(c).transpose() - model.m)).transpose();
  return model;
}

// ---------------------------------------------------------------------------
// Ensemble

struct EnsembleMember {
  LdaProjector lda;
  PldaModel plda;
};

struct PldaEnsemble {
  std::vector<EnsembleMember> members;
  std::vector<std::vector<std::string>> batch_manifest;  // segment ids per member
  double novelty_threshold = 0.5;
  std::string provenance;
};

struct Classification {
  std::string label;
  double confidence = 0.0;
  int votes = 0;
  bool novel = false;
};

/// Modal label (lexicographic tie-break); confidence is the mean posterior
/// over the members that voted for the winner.
inline Classification combine_votes(const std::vector<std::pair<std::string, double>>& votes,
                                    double novelty_threshold) {
  if (votes.empty()) throw Error(ErrorCode::empty_input, "combine_votes: no votes");
  std::map<std::string, std::pair<int, double>> tally;  // label -> (count, posterior sum)
  for (const auto& [label, p] : votes) {
    auto& t = tally[label];
    t.first += 1;
    t.second += p;
  }
  const std::string* best = nullptr;
  int best_count = -1;
  for (const auto& [label, t] : tally)
    if (t.first > best_count) {  // map order is lexicographic, so first max wins ties
      best = &label;
      best_count = t.first;
    }
  Classification c;
  c.label = *best;
  c.votes = best_count;
  c.confidence = tally[*best].second / static_cast<double>(best_count);
  c.novel = c.confidence < novelty_threshold;
  return c;
}

inline Classification classify(const PldaEnsemble& ensemble, const Eigen::VectorXf& rep) {
  if (ensemble.members.empty())
    throw Error(ErrorCode::empty_input, "classify: ensemble has no members");
  std::vector<std::pair<std::string, double>> votes;
  votes.reserve(ensemble.members.size());
  for (const auto& member : ensemble.members)
    votes.push_back(member.plda.predict(member.lda.project(rep)));
  return combine_votes(votes, ensemble.novelty_threshold);
}

struct EnsembleFitStats {
  int members = 0;
  ResidencyStats residency;
};

namespace backend_detail {

/// Deals shuffled class groups into n_batches with a round-robin pointer that
/// runs across groups, so batch sizes differ by at most one while every class
/// with >= n_batches members lands in every batch.
inline std::vector<std::vector<size_t>> stratified_batches(
    const std::vector<std::string>& labels, int n_batches, uint64_t seed) {
  std::map<std::string, std::vector<size_t>> groups;
  for (size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  for (auto& [code, members] : groups) {
    if (static_cast<int>(members.size()) < n_batches)
      throw Error(ErrorCode::stratification,
                  "class '" + code + "' has only " + std::to_string(members.size()) +
                      " segments for " + std::to_string(n_batches) + " batches");
    Rng rng(seed, "strat:" + code);
    rng.shuffle(members);
  }
  std::vector<std::vector<size_t>> batches(static_cast<size_t>(n_batches));
  size_t p = 0;
  for (auto& [code, members] : groups)
    for (size_t i : members) batches[p++ % static_cast<size_t>(n_batches)].push_back(i);
  return batches;
}

struct LoadedBatch {
  MatrixXfRow x;
  std::vector<std::string> labels;
  std::vector<std::string> ids;
};

inline LoadedBatch load_batch(RepresentationProvider& provider, const std::vector<size_t>& index,
                              ResidencyStats& residency) {
  LoadedBatch batch;
  batch.labels.reserve(index.size());
  batch.ids.reserve(index.size());
  for (size_t row = 0; row < index.size(); ++row) {
    Eigen::VectorXf v = provider.get(index[row]);
    if (row == 0) batch.x.resize(static_cast<Eigen::Index>(index.size()), v.size());
    if (v.size() != batch.x.cols())
      throw Error(ErrorCode::shape, "representation vectors differ in length");
    batch.x.row(static_cast<Eigen::Index>(row)) = v.transpose();
    residency.acquire(1);
    batch.labels.push_back(provider.label(index[row]));
    batch.ids.push_back(provider.segment_id(index[row]));
  }
  return batch;
}

inline EnsembleMember fit_member(const LoadedBatch& batch, int k) {
  EnsembleMember member;
  member.lda = fit_lda(batch.x, batch.labels, k);
  MatrixXdRow y(batch.x.rows(), member.lda.k());
  for (Eigen::Index i = 0; i < batch.x.rows(); ++i)
    y.row(i) = member.lda.project(batch.x.row(i).transpose()).transpose();
  member.plda = fit_plda(y, batch.labels);
  return member;
}

}  // namespace backend_detail

/// One (LDA, pLDA) member per stratified batch.  At most batch_segments
/// representation vectors are resident at any time; the instrumented counter
/// in the returned stats proves it.
inline PldaEnsemble fit_ensemble(RepresentationProvider& provider, const BackendConfig& cfg,
                                 EnsembleFitStats* stats = nullptr) {
  cfg.validate();
  const size_t n = provider.size();
  if (n == 0) throw Error(ErrorCode::empty_input, "fit_ensemble: provider is empty");
  int n_batches = static_cast<int>((n + static_cast<size_t>(cfg.batch_segments) - 1) /
                                   static_cast<size_t>(cfg.batch_segments));

  std::vector<std::string> labels(n);
  for (size_t i = 0; i < n; ++i) labels[i] = provider.label(i);
  auto batches = backend_detail::stratified_batches(labels, n_batches, cfg.seed);

  PldaEnsemble ensemble;
  ensemble.novelty_threshold = cfg.novelty_threshold;
  EnsembleFitStats local;
  EnsembleFitStats& st = stats ? *stats : local;

  for (const auto& index : batches) {
    auto batch = backend_detail::load_batch(provider, index, st.residency);
    ensemble.members.push_back(backend_detail::fit_member(batch, cfg.k));
    ensemble.batch_manifest.push_back(batch.ids);
    st.residency.release(static_cast<int64_t>(index.size()));
  }
  st.members = static_cast<int>(ensemble.members.size());
  return ensemble;
}

/// Refits every member with an equal share of the new class's examples.  Old
/// batch vectors are re-fetched through the provider one member at a time, so
/// the resident set stays one batch plus the new examples.
inline PldaEnsemble enroll_language(const PldaEnsemble& ensemble, const std::string& new_code,
                                    const std::vector<RepresentationVector>& examples,
                                    RepresentationProvider& provider, LanguageRegistry& registry,
                                    const BackendConfig& cfg, EnsembleFitStats* stats = nullptr) {
  cfg.validate();
  if (!valid_language_code(new_code))
    throw Error(ErrorCode::config, "enroll: bad language code '" + new_code + "'");
  if (registry.contains(new_code))
    throw Error(ErrorCode::duplicate_code, "enroll: '" + new_code + "' is already registered");
  if (ensemble.members.empty())
    throw Error(ErrorCode::empty_input, "enroll: ensemble has no members");
  size_t n_members = ensemble.members.size();
  if (examples.size() < static_cast<size_t>(cfg.min_enroll) || examples.size() < n_members)
    throw Error(ErrorCode::insufficient_examples,
                "enroll: got " + std::to_string(examples.size()) + " segments, need at least " +
                    std::to_string(std::max<size_t>(static_cast<size_t>(cfg.min_enroll), n_members)));

  std::map<std::string, size_t> by_id;
  for (size_t i = 0; i < provider.size(); ++i) by_id[provider.segment_id(i)] = i;

  PldaEnsemble next;
  next.novelty_threshold = ensemble.novelty_threshold;
  next.provenance = ensemble.provenance;
  EnsembleFitStats local;
  EnsembleFitStats& st = stats ? *stats : local;

  for (size_t mi = 0; mi < n_members; ++mi) {
    std::vector<size_t> index;
    for (const auto& id : ensemble.batch_manifest[mi]) {
      auto it = by_id.find(id);
      if (it == by_id.end())
        throw Error(ErrorCode::io, "enroll: provider cannot supply segment '" + id + "'");
      index.push_back(it->second);
    }
    auto batch = backend_detail::load_batch(provider, index, st.residency);

    std::vector<std::string> ids = batch.ids;
    Eigen::Index old_rows = batch.x.rows();
    std::vector<size_t> share;
    for (size_t j = mi; j < examples.size(); j += n_members) share.push_back(j);
    MatrixXfRow x(old_rows + static_cast<Eigen::Index>(share.size()), batch.x.cols());
    x.topRows(old_rows) = batch.x;
    for (size_t s = 0; s < share.size(); ++s) {
      const auto& ex = examples[share[s]];
      if (ex.values.size() != x.cols())
        throw Error(ErrorCode::shape, "enroll: example vector length mismatch");
      x.row(old_rows + static_cast<Eigen::Index>(s)) = ex.values.transpose();
      batch.labels.push_back(new_code);
      ids.push_back(ex.segment_id);
      st.residency.acquire(1);
    }

    backend_detail::LoadedBatch augmented{std::move(x), std::move(batch.labels), std::move(ids)};
    next.members.push_back(backend_detail::fit_member(augmented, cfg.k));
    next.batch_manifest.push_back(augmented.ids);
    st.residency.release(static_cast<int64_t>(augmented.labels.size()));
  }
  st.members = static_cast<int>(next.members.size());
  registry.enrolled.push_back(new_code);
  return next;
}

// ---------------------------------------------------------------------------
// Serialization: versioned container, all floating point stored as f64 raw
// bytes so the round trip is bit-exact.

namespace backend_detail {

inline void write_mat(std::ostream& os, const Eigen::Ref<const Eigen::MatrixXd>& m) {
  write_u32(os, static_cast<uint32_t>(m.rows()));
  write_u32(os, static_cast<uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) write_f64(os, m(r, c));
}

inline Eigen::MatrixXd read_mat(std::istream& is) {
  uint32_t rows = read_u32(is), cols = read_u32(is);
  Eigen::MatrixXd m(rows, cols);
  for (uint32_t r = 0; r < rows; ++r)
    for (uint32_t c = 0; c < cols; ++c) m(r, c) = read_f64(is);
  return m;
}

inline void write_vec(std::ostream& os, const Eigen::VectorXd& v) {
  write_u32(os, static_cast<uint32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) write_f64(os, v[i]);
}

inline Eigen::VectorXd read_vec(std::istream& is) {
  uint32_t n = read_u32(is);
  Eigen::VectorXd v(n);
  for (uint32_t i = 0; i < n; ++i) v[i] = read_f64(is);
  return v;
}

}  // namespace backend_detail

inline void save_ensemble(std::ostream& os, const PldaEnsemble& e) {
  write_bytes(os, "OENS", 4);
  write_u32(os, 1);
  write_string(os, e.provenance);
  write_f64(os, e.novelty_threshold);
  write_u32(os, static_cast<uint32_t>(e.members.size()));
  for (size_t mi = 0; mi < e.members.size(); ++mi) {
    const auto& member = e.members[mi];
    backend_detail::write_vec(os, member.lda.mean);
    backend_detail::write_mat(os, member.lda.projection);
    backend_detail::write_vec(os, member.plda.m);
    backend_detail::write_mat(os, member.plda.phi_w);
    backend_detail::write_mat(os, member.plda.phi_b);
    backend_detail::write_mat(os, member.plda.a);
    backend_detail::write_vec(os, member.plda.psi);
    write_u32(os, static_cast<uint32_t>(member.plda.labels.size()));
    for (size_t c = 0; c < member.plda.labels.size(); ++c) {
      write_string(os, member.plda.labels[c]);
      write_i64(os, member.plda.counts[c]);
    }
    backend_detail::write_mat(os, member.plda.u_means);
    const auto& manifest = e.batch_manifest[mi];
    write_u64(os, manifest.size());
    for (const auto& id : manifest) write_string(os, id);
  }
}

inline void save_ensemble(const std::string& path, const PldaEnsemble& e) {
  auto os = open_out(path);
  save_ensemble(os, e);
}

inline PldaEnsemble load_ensemble(std::istream& is) {
  expect_magic(is, "OENS", "ensemble file");
  uint32_t version = read_u32(is);
  if (version != 1)
    throw Error(ErrorCode::version_mismatch,
                "ensemble file: unsupported version " + std::to_string(version));
  PldaEnsemble e;
  e.provenance = read_string(is);
  e.novelty_threshold = read_f64(is);
  uint32_t n_members = read_u32(is);
  for (uint32_t mi = 0; mi < n_members; ++mi) {
    EnsembleMember member;
    member.lda.mean = backend_detail::read_vec(is);
    member.lda.projection = backend_detail::read_mat(is);
    member.plda.m = backend_detail::read_vec(is);
    member.plda.phi_w = backend_detail::read_mat(is);
    member.plda.phi_b = backend_detail::read_mat(is);
    member.plda.a = backend_detail::read_mat(is);
    member.plda.psi = backend_detail::read_vec(is);
    uint32_t n_classes = read_u32(is);
    for (uint32_t c = 0; c < n_classes; ++c) {
      member.plda.labels.push_back(read_string(is));
      member.plda.counts.push_back(read_i64(is));
    }
    member.plda.u_means = backend_detail::read_mat(is);
    uint64_t n_ids = read_u64(is);
    std::vector<std::string> manifest;
    manifest.reserve(n_ids);
    for (uint64_t i = 0; i < n_ids; ++i) manifest.push_back(read_string(is));
    e.members.push_back(std::move(member));
    e.batch_manifest.push_back(std::move(manifest));
  }
  return e;
}

inline PldaEnsemble load_ensemble(const std::string& path) {
  auto is = open_in(path);
  return load_ensemble(is);
}

}  // namespace olid

#endif  // OLID_BACKEND_HPP
