// olid/eval.hpp

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

#ifndef OLID_EVAL_HPP
#define OLID_EVAL_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "olid/common.hpp"
#include "olid/openset.hpp"

namespace olid {

struct ConfusionMatrix {
  std::vector<std::string> labels;        // ordered; rows = truth, columns = prediction
  std::vector<std::vector<int64_t>> counts;

  int64_t total() const {
    int64_t t = 0;
    for (const auto& row : counts)
      for (int64_t v : row) t += v;
    return t;
  }

  int64_t row_sum(size_t r) const {
    int64_t t = 0;
    for (int64_t v : counts[r]) t += v;
    return t;
  }
};

namespace eval_detail {

inline ConfusionMatrix build_confusion(const std::vector<std::string>& truths,
                                       const std::vector<std::string>& predictions) {
  std::map<std::string, size_t> index;
  for (const auto& t : truths) index.emplace(t, 0);
  for (const auto& p : predictions) index.emplace(p, 0);
  ConfusionMatrix cm;
  for (auto& [code, id] : index) {
    id = cm.labels.size();
    cm.labels.push_back(code);
  }
  cm.counts.assign(cm.labels.size(), std::vector<int64_t>(cm.labels.size(), 0));
  for (size_t i = 0; i < truths.size(); ++i)
    ++cm.counts[index[truths[i]]][index[predictions[i]]];
  return cm;
}

}  // namespace eval_detail

/// Evenly spaced thresholds on [0, 1] inclusive.
inline std::vector<double> uniform_grid(int points = 201) {
  if (points < 2) throw Error(ErrorCode::config, "grid needs at least 2 points");
  std::vector<double> g(static_cast<size_t>(points));
  for (int i = 0; i < points; ++i)
    g[static_cast<size_t>(i)] = static_cast<double>(i) / static_cast<double>(points - 1);
  return g;
}

// ---------------------------------------------------------------------------
// In-set report

struct InSetSample {
  std::string truth;
  OpenSetDecision decision;  // computed with a full-length top_n list
};

struct InSetReport {
  int64_t samples = 0;
  double accuracy = 0.0;                  // argmax vs truth, unconditional
  std::map<int, double> top_n_accuracy;   // n -> fraction with truth in top n
  ConfusionMatrix confusion;              // argmax predictions
  double conditional_tau = 0.0;
  double conditional_accuracy = 0.0;      // among samples with confidence >= tau
  int64_t conditional_accepted = 0;
};

inline InSetReport in_set_report(const std::vector<InSetSample>& samples, double conditional_tau,
                                 int max_n = 5) {
  if (samples.empty()) throw Error(ErrorCode::empty_input, "in_set_report: no samples");
  InSetReport rep;
  rep.samples = static_cast<int64_t>(samples.size());
  rep.conditional_tau = conditional_tau;

  std::vector<std::string> truths, predictions;
  int64_t correct = 0, cond_correct = 0;
  std::map<int, int64_t> topn_hits;
  max_n = std::max(1, max_n);

  for (const auto& s : samples) {
    if (s.decision.top_n.empty())
      throw Error(ErrorCode::empty_input, "in_set_report: decision without candidates");
    const std::string& argmax = s.decision.top_n.front().first;
    truths.push_back(s.truth);
    predictions.push_back(argmax);
    bool hit = argmax == s.truth;
    if (hit) ++correct;
    int upper = std::min<int>(max_n, static_cast<int>(s.decision.top_n.size()));
    int found_at = 0;
    for (int n = 1; n <= upper; ++n)
      if (s.decision.top_n[static_cast<size_t>(n - 1)].first == s.truth) {
        found_at = n;
        break;
      }
    for (int n = 1; n <= max_n; ++n)
      if (found_at >= 1 && found_at <= n) ++topn_hits[n];
      else topn_hits[n] += 0;
    if (s.decision.confidence >= conditional_tau) {
      ++rep.conditional_accepted;
      if (hit) ++cond_correct;
    }
  }

  rep.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  for (auto& [n, hits] : topn_hits)
    rep.top_n_accuracy[n] = static_cast<double>(hits) / static_cast<double>(samples.size());
  rep.confusion = eval_detail::build_confusion(truths, predictions);
  rep.conditional_accuracy =
      rep.conditional_accepted
          ? static_cast<double>(cond_correct) / static_cast<double>(rep.conditional_accepted)
          : 1.0;
  return rep;
}

/// Conditional accuracy at each grid threshold; empty where nothing clears it.
inline std::vector<std::optional<double>> conditional_accuracy_curve(
    const std::vector<InSetSample>& samples, const std::vector<double>& grid) {
  if (samples.empty()) throw Error(ErrorCode::empty_input, "conditional curve: no samples");
  std::vector<std::optional<double>> out;
  out.reserve(grid.size());
  for (double t : grid) {
    int64_t accepted = 0, correct = 0;
    for (const auto& s : samples)
      if (s.decision.confidence >= t) {
        ++accepted;
        if (!s.decision.top_n.empty() && s.decision.top_n.front().first == s.truth) ++correct;
      }
    if (accepted)
      out.emplace_back(static_cast<double>(correct) / static_cast<double>(accepted));
    else
      out.emplace_back(std::nullopt);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Out-of-set report

struct OutOfSetReport {
  int64_t samples = 0;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
};

inline OutOfSetReport out_of_set_report(const std::vector<std::string>& truths,
                                        const std::vector<std::string>& predictions) {
  if (truths.empty()) throw Error(ErrorCode::empty_input, "out_of_set_report: no samples");
  if (truths.size() != predictions.size())
    throw Error(ErrorCode::shape, "out_of_set_report: truth/prediction count mismatch");
  OutOfSetReport rep;
  rep.samples = static_cast<int64_t>(truths.size());
  int64_t correct = 0;
  for (size_t i = 0; i < truths.size(); ++i)
    if (truths[i] == predictions[i]) ++correct;
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(truths.size());
  rep.confusion = eval_detail::build_confusion(truths, predictions);
  return rep;
}

// ---------------------------------------------------------------------------
// DET curve

struct DetPoint {
  double threshold = 0.0;
  double miss = 0.0;         // in-set confidence < threshold
  double false_alarm = 0.0;  // out-of-set confidence >= threshold
};

struct DetCurve {
  std::vector<DetPoint> points;
  double eer = 0.0;
  double eer_threshold = 0.0;
};

inline DetCurve det_curve(const std::vector<double>& in_set_confidences,
                          const std::vector<double>& out_of_set_confidences,
                          const std::vector<double>& grid) {
  if (in_set_confidences.empty() || out_of_set_confidences.empty())
    throw Error(ErrorCode::empty_input, "det_curve: both confidence lists must be non-empty");
  if (grid.empty()) throw Error(ErrorCode::empty_input, "det_curve: empty grid");
  if (!std::is_sorted(grid.begin(), grid.end()))
    throw Error(ErrorCode::config, "det_curve: grid must be sorted");

  DetCurve det;
  det.points.reserve(grid.size());
  double n_in = static_cast<double>(in_set_confidences.size());
  double n_out = static_cast<double>(out_of_set_confidences.size());
  for (double t : grid) {
    DetPoint p;
    p.threshold = t;
    int64_t miss = 0, fa = 0;
    for (double c : in_set_confidences)
      if (c < t) ++miss;
    for (double c : out_of_set_confidences)
      if (c >= t) ++fa;
    p.miss = static_cast<double>(miss) / n_in;
    p.false_alarm = static_cast<double>(fa) / n_out;
    det.points.push_back(p);
  }

  // equal error rate: interpolate the sign change of (miss - false_alarm);
  // fall back to the grid point minimizing the gap when no crossing exists
  size_t best = 0;
  double best_gap = std::abs(det.points[0].miss - det.points[0].false_alarm);
  bool crossed = false;
  for (size_t i = 0; i + 1 < det.points.size(); ++i) {
    double d0 = det.points[i].miss - det.points[i].false_alarm;
    double d1 = det.points[i + 1].miss - det.points[i + 1].false_alarm;
    double gap = std::abs(d1);
    if (gap < best_gap) {
      best_gap = gap;
      best = i + 1;
    }
    if (!crossed && d0 <= 0.0 && d1 >= 0.0 && (d1 - d0) != 0.0) {
      double w = -d0 / (d1 - d0);
      det.eer_threshold =
          det.points[i].threshold + w * (det.points[i + 1].threshold - det.points[i].threshold);
      double miss_x = det.points[i].miss + w * (det.points[i + 1].miss - det.points[i].miss);
      double fa_x = det.points[i].false_alarm +
                    w * (det.points[i + 1].false_alarm - det.points[i].false_alarm);
      det.eer = 0.5 * (miss_x + fa_x);
      crossed = true;
    }
  }
  if (!crossed) {
    det.eer = 0.5 * (det.points[best].miss + det.points[best].false_alarm);
    det.eer_threshold = det.points[best].threshold;
  }
  return det;
}

// ---------------------------------------------------------------------------
// Total accuracy sweep over the full open-set pipeline

struct PipelineSample {
  bool truly_in_set = false;
  std::string truth;
  std::string in_set_prediction;   // argmax code
  double confidence = 0.0;         // in-set softmax confidence driving the threshold
  std::string out_of_set_prediction;  // ensemble label
};

struct SweepPoint {
  double threshold = 0.0;
  double total_accuracy = 0.0;
};

struct SweepReport {
  std::vector<SweepPoint> points;
  double argmax_threshold = 0.0;
  double best_accuracy = 0.0;
  double accuracy_at_0 = 0.0;  // in-set branch only: every sample accepted
  double accuracy_at_1 = 0.0;  // out-of-set branch only: every sample rejected
};

inline SweepReport total_accuracy_sweep(const std::vector<PipelineSample>& samples,
                                        const std::vector<double>& grid) {
  if (samples.empty()) throw Error(ErrorCode::empty_input, "sweep: no samples");
  if (grid.empty()) throw Error(ErrorCode::empty_input, "sweep: empty grid");
  SweepReport rep;
  double n = static_cast<double>(samples.size());
  for (double t : grid) {
    int64_t correct = 0;
    for (const auto& s : samples) {
      bool accepted = s.confidence >= t;
      if (accepted) {
        if (s.truly_in_set && s.in_set_prediction == s.truth) ++correct;
      } else {
        if (!s.truly_in_set && s.out_of_set_prediction == s.truth) ++correct;
      }
    }
    SweepPoint p{t, static_cast<double>(correct) / n};
    rep.points.push_back(p);
    if (p.total_accuracy > rep.best_accuracy) {
      rep.best_accuracy = p.total_accuracy;
      rep.argmax_threshold = t;
    }
  }
  int64_t in_correct = 0, out_correct = 0;
  for (const auto& s : samples) {
    if (s.truly_in_set && s.in_set_prediction == s.truth) ++in_correct;
    if (!s.truly_in_set && s.out_of_set_prediction == s.truth) ++out_correct;
  }
  rep.accuracy_at_0 = static_cast<double>(in_correct) / n;
  rep.accuracy_at_1 = static_cast<double>(out_correct) / n;
  return rep;
}

// ---------------------------------------------------------------------------
// Writers

inline nlohmann::json confusion_to_json(const ConfusionMatrix& cm) {
  return {{"labels", cm.labels}, {"counts", cm.counts}};
}

inline nlohmann::json in_set_report_to_json(const InSetReport& r) {
  nlohmann::json topn;
  for (const auto& [n, acc] : r.top_n_accuracy) topn[std::to_string(n)] = acc;
  return {{"samples", r.samples},
          {"accuracy", r.accuracy},
          {"top_n_accuracy", topn},
          {"confusion", confusion_to_json(r.confusion)},
          {"conditional_tau", r.conditional_tau},
          {"conditional_accuracy", r.conditional_accuracy},
          {"conditional_accepted", r.conditional_accepted}};
}

inline nlohmann::json out_of_set_report_to_json(const OutOfSetReport& r) {
  return {{"samples", r.samples},
          {"accuracy", r.accuracy},
          {"confusion", confusion_to_json(r.confusion)}};
}

inline nlohmann::json det_to_json(const DetCurve& det) {
  return {{"eer", det.eer}, {"eer_threshold", det.eer_threshold}, {"points", det.points.size()}};
}

inline nlohmann::json sweep_to_json(const SweepReport& r) {
  return {{"argmax_threshold", r.argmax_threshold},
          {"best_accuracy", r.best_accuracy},
          {"accuracy_at_0", r.accuracy_at_0},
          {"accuracy_at_1", r.accuracy_at_1},
          {"points", r.points.size()}};
}

/// Plot-ready coordinates: threshold <TAB> miss <TAB> false_alarm.
inline std::string det_to_tsv(const DetCurve& det) {
  std::ostringstream os;
  os << "threshold\tmiss\tfalse_alarm\n";
  os.precision(10);
  for (const auto& p : det.points)
    os << p.threshold << '\t' << p.miss << '\t' << p.false_alarm << '\n';
  return os.str();
}

inline std::string sweep_to_tsv(const SweepReport& r) {
  std::ostringstream os;
  os << "threshold\ttotal_accuracy\n";
  os.precision(10);
  for (const auto& p : r.points) os << p.threshold << '\t' << p.total_accuracy << '\n';
  return os.str();
}

}  // namespace olid

#endif  // OLID_EVAL_HPP
