// olid/openset.hpp

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

#ifndef OLID_OPENSET_HPP
#define OLID_OPENSET_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include <json.hpp>

#include "olid/common.hpp"

namespace olid {

struct ThresholdPolicy {
  double tau = 0.65;

  void validate() const {
    if (!(tau >= 0.0 && tau <= 1.0))
      throw Error(ErrorCode::config, "threshold tau must lie in [0, 1]");
  }
};

struct OpenSetDecision {
  bool accepted = false;
  std::string predicted_in_set;  // empty iff rejected
  double confidence = 0.0;       // max posterior entry
  std::vector<std::pair<std::string, double>> top_n;
};

namespace openset_detail {

template <typename Derived>
void check_posterior(const Eigen::MatrixBase<Derived>& posterior, size_t n_labels) {
  if (static_cast<size_t>(posterior.size()) != n_labels)
    throw Error(ErrorCode::shape, "posterior length " + std::to_string(posterior.size()) +
                                      " does not match " + std::to_string(n_labels) + " labels");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < posterior.size(); ++i) {
    double p = static_cast<double>(posterior(i));
    if (!std::isfinite(p) || p < -1e-9)
      throw Error(ErrorCode::shape, "posterior entries must be finite and non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw Error(ErrorCode::shape, "posterior sums to " + std::to_string(sum) + ", expected 1");
}

}  // namespace openset_detail

/// Candidate list: n highest-probability codes, descending probability, ties
/// broken toward the lower class index.
template <typename Derived>
std::vector<std::pair<std::string, double>> top_n(const Eigen::MatrixBase<Derived>& posterior,
                                                  int n,
                                                  const std::vector<std::string>& labels) {
  openset_detail::check_posterior(posterior, labels.size());
  if (n < 1 || n > static_cast<int>(labels.size()))
    throw Error(ErrorCode::range,
                "top_n: n must lie in [1, " + std::to_string(labels.size()) + "]");
  std::vector<int> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    double pa = static_cast<double>(posterior(a)), pb = static_cast<double>(posterior(b));
    if (pa != pb) return pa > pb;
    return a < b;
  });
  std::vector<std::pair<std::string, double>> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    out.emplace_back(labels[static_cast<size_t>(order[static_cast<size_t>(i)])],
                     static_cast<double>(posterior(order[static_cast<size_t>(i)])));
  return out;
}

/// Accept when the peak posterior clears tau; the prediction is the argmax
/// (lowest index on ties) and is reported only for accepted samples.
template <typename Derived>
OpenSetDecision decide(const Eigen::MatrixBase<Derived>& posterior, const ThresholdPolicy& policy,
                       const std::vector<std::string>& labels,
                       int top_n_count = 5) {
  policy.validate();
  openset_detail::check_posterior(posterior, labels.size());
  top_n_count = std::min<int>(top_n_count, static_cast<int>(labels.size()));

  OpenSetDecision d;
  d.top_n = top_n(posterior, top_n_count, labels);
  d.confidence = d.top_n.front().second;
  d.accepted = d.confidence >= policy.tau;
  if (d.accepted) d.predicted_in_set = d.top_n.front().first;
  return d;
}

/// One JSON-lines record per segment decision.
inline nlohmann::json decision_record(const std::string& path, int segment_index,
                                      const OpenSetDecision& d) {
  nlohmann::json top = nlohmann::json::array();
  for (const auto& [code, p] : d.top_n) top.push_back({{"code", code}, {"p", p}});
  nlohmann::json rec = {
      {"path", path},
      {"segment_index", segment_index},
      {"accepted", d.accepted},
      {"confidence", d.confidence},
      {"top_n", top},
  };
  if (d.accepted) rec["prediction"] = d.predicted_in_set;
  return rec;
}

}  // namespace olid

#endif  // OLID_OPENSET_HPP
