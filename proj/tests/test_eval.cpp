// tests/test_eval.cpp

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
#include <string>
#include <vector>

#include "olid/common.hpp"
#include "olid/eval.hpp"
#include "olid/openset.hpp"

using namespace olid;

namespace {

std::vector<std::string> make_labels(int n) {
  std::vector<std::string> labels;
  for (int i = 0; i < n; ++i) {
    std::string code = "l";
    code += static_cast<char>('a' + i / 26);
    code += static_cast<char>('a' + i % 26);
    labels.push_back(code);
  }
  return labels;
}

InSetSample sample_of(const std::string& truth, const Eigen::VectorXd& posterior,
                      const std::vector<std::string>& labels) {
  ThresholdPolicy policy;
  InSetSample s;
  s.truth = truth;
  s.decision = decide(posterior, policy, labels, static_cast<int>(labels.size()));
  return s;
}

Eigen::VectorXd spiked(int dim, int hot, double p_hot) {
  Eigen::VectorXd v =
      Eigen::VectorXd::Constant(dim, (1.0 - p_hot) / static_cast<double>(dim - 1));
  v(hot) = p_hot;
  return v;
}

}  // namespace

TEST_CASE("uniform_grid spans [0, 1] inclusively") {
  auto g = uniform_grid(201);
  REQUIRE(g.size() == 201);
  REQUIRE(g.front() == 0.0);
  REQUIRE(g.back() == 1.0);
  REQUIRE(std::is_sorted(g.begin(), g.end()));
  for (size_t i = 1; i < g.size(); ++i)
    REQUIRE(g[i] - g[i - 1] == Catch::Approx(1.0 / 200.0).margin(1e-12));

  auto two = uniform_grid(2);
  REQUIRE(two == std::vector<double>{0.0, 1.0});
  try {
    uniform_grid(1);
    FAIL("expected config rejection");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::config);
  }
}

TEST_CASE("det curve on separated populations reaches EER zero") {
  Rng rng(3, "det");
  std::vector<double> in_conf, out_conf;
  for (int i = 0; i < 500; ++i) {
    in_conf.push_back(0.505 + 0.49 * rng.uniform());
    out_conf.push_back(0.005 + 0.49 * rng.uniform());
  }
  auto det = det_curve(in_conf, out_conf, uniform_grid(201));
  REQUIRE(det.eer == Catch::Approx(0.0).margin(1e-9));
  REQUIRE(det.points.size() == 201);
}

TEST_CASE("det curve on identical populations sits near one half") {
  Rng rng(4, "det");
  std::vector<double> in_conf, out_conf;
  for (int i = 0; i < 2000; ++i) {
    in_conf.push_back(rng.uniform());
    out_conf.push_back(rng.uniform());
  }
  auto det = det_curve(in_conf, out_conf, uniform_grid(201));
  REQUIRE(det.eer == Catch::Approx(0.5).margin(0.03));
}

TEST_CASE("det endpoint identities and monotone flanks") {
  Rng rng(5, "det");
  std::vector<double> in_conf, out_conf;
  for (int i = 0; i < 300; ++i) {
    in_conf.push_back(0.999 * rng.uniform());  // strictly below 1
    out_conf.push_back(0.999 * rng.uniform());
  }
  auto det = det_curve(in_conf, out_conf, uniform_grid(101));

  // t = 0: nothing is below, everything clears
  REQUIRE(det.points.front().threshold == 0.0);
  REQUIRE(det.points.front().miss == 0.0);
  REQUIRE(det.points.front().false_alarm == 1.0);
  // t = 1: everything is below, nothing clears
  REQUIRE(det.points.back().threshold == 1.0);
  REQUIRE(det.points.back().miss == 1.0);
  REQUIRE(det.points.back().false_alarm == 0.0);

  for (size_t i = 1; i < det.points.size(); ++i) {
    REQUIRE(det.points[i].miss >= det.points[i - 1].miss);
    REQUIRE(det.points[i].false_alarm <= det.points[i - 1].false_alarm);
  }

  // a confidence of exactly 1 stays accepted at t = 1 and breaks the
  // endpoint identity by design; the identity presumes confidences in [0, 1)
  auto det1 = det_curve({1.0, 0.5}, {0.4}, uniform_grid(11));
  REQUIRE(det1.points.back().miss == 0.5);
}

TEST_CASE("det curve input validation") {
  std::vector<double> some = {0.5};
  try {
    det_curve({}, some, uniform_grid(11));
    FAIL("expected empty input rejection");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::empty_input);
  }
  try {
    det_curve(some, {}, uniform_grid(11));
    FAIL("expected empty input rejection");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::empty_input);
  }
  try {
    det_curve(some, some, {});
    FAIL("expected empty grid rejection");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::empty_input);
  }
  try {
    det_curve(some, some, {0.5, 0.2, 0.8});
    FAIL("expected unsorted grid rejection");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::config);
  }
}

TEST_CASE("top-n accuracy is monotone and exact on random posteriors") {
  auto labels = make_labels(32);
  Rng rng(9, "topn");
  std::vector<InSetSample> samples;
  for (int i = 0; i < 10000; ++i) {
    Eigen::VectorXd p(32);
    double sum = 0.0;
    for (int j = 0; j < 32; ++j) {
      p(j) = rng.uniform() + 1e-9;
      sum += p(j);
    }
    p /= sum;
    samples.push_back(sample_of(labels[rng.index(32)], p, labels));
  }

  auto rep = in_set_report(samples, 0.65, 32);
  REQUIRE(rep.samples == 10000);
  REQUIRE(rep.top_n_accuracy.size() == 32);
  double prev = 0.0;
  for (int n = 1; n <= 32; ++n) {
    double acc = rep.top_n_accuracy.at(n);
    REQUIRE(acc >= prev);
    prev = acc;
  }
  // the full candidate list always contains the truth
  REQUIRE(rep.top_n_accuracy.at(32) == 1.0);
  // iid posterior coordinates make the argmax uniform over 32 classes
  REQUIRE(rep.top_n_accuracy.at(1) == Catch::Approx(1.0 / 32.0).margin(0.01));
  REQUIRE(rep.accuracy == rep.top_n_accuracy.at(1));
  REQUIRE(rep.confusion.total() == 10000);
}

TEST_CASE("in-set report on hand-built decisions") {
  auto labels = make_labels(3);  // laa, lab, lac
  std::vector<InSetSample> samples;
  samples.push_back(sample_of("laa", spiked(3, 0, 0.9), labels));   // correct, conf .9
  samples.push_back(sample_of("lab", spiked(3, 1, 0.85), labels));  // correct, conf .85
  samples.push_back(sample_of("lab", spiked(3, 2, 0.7), labels));   // wrong, conf .7
  samples.push_back(sample_of("lac", spiked(3, 0, 0.5), labels));   // wrong, conf .5

  auto rep = in_set_report(samples, 0.8, 5);
  REQUIRE(rep.samples == 4);
  REQUIRE(rep.accuracy == Catch::Approx(0.5));
  REQUIRE(rep.conditional_tau == 0.8);
  REQUIRE(rep.conditional_accepted == 2);  // .9 and .85
  REQUIRE(rep.conditional_accuracy == Catch::Approx(1.0));

  // top-2 adds the sample whose truth sat in second place
  REQUIRE(rep.top_n_accuracy.at(1) == Catch::Approx(0.5));
  REQUIRE(rep.top_n_accuracy.at(3) == Catch::Approx(1.0));
  REQUIRE(rep.top_n_accuracy.count(5) == 1);  // capped at the label count but reported

  // confusion: rows are truths, columns predictions, labels sorted
  REQUIRE(rep.confusion.labels == std::vector<std::string>{"laa", "lab", "lac"});
  REQUIRE(rep.confusion.counts[0][0] == 1);  // laa -> laa
  REQUIRE(rep.confusion.counts[1][1] == 1);  // lab -> lab
  REQUIRE(rep.confusion.counts[1][2] == 1);  // lab -> lac
  REQUIRE(rep.confusion.counts[2][0] == 1);  // lac -> laa
  REQUIRE(rep.confusion.row_sum(1) == 2);
  REQUIRE(rep.confusion.total() == 4);

  try {
    in_set_report({}, 0.5);
    FAIL("expected empty input rejection");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::empty_input);
  }
}

TEST_CASE("conditional accuracy curve with empty tail") {
  auto labels = make_labels(2);
  std::vector<InSetSample> samples;
  samples.push_back(sample_of("laa", spiked(2, 0, 0.55), labels));  // correct, conf .55
  samples.push_back(sample_of("laa", spiked(2, 1, 0.6), labels));   // wrong, conf .6
  samples.push_back(sample_of("lab", spiked(2, 1, 0.9), labels));   // correct, conf .9

  std::vector<double> grid = {0.0, 0.58, 0.8, 0.95};
  auto curve = conditional_accuracy_curve(samples, grid);
  REQUIRE(curve.size() == 4);
  REQUIRE(curve[0].has_value());
  REQUIRE(*curve[0] == Catch::Approx(2.0 / 3.0));
  REQUIRE(*curve[1] == Catch::Approx(0.5));  // .6 wrong, .9 correct
  REQUIRE(*curve[2] == Catch::Approx(1.0));  // only .9 left
  REQUIRE_FALSE(curve[3].has_value());       // nothing clears .95

  REQUIRE_THROWS_AS(conditional_accuracy_curve({}, grid), Error);
}

TEST_CASE("out-of-set report") {
  auto rep = out_of_set_report({"xaa", "xab", "xaa", "xac"},
                               {"xaa", "xab", "xab", "xaa"});
  REQUIRE(rep.samples == 4);
  REQUIRE(rep.accuracy == Catch::Approx(0.5));
  REQUIRE(rep.confusion.total() == 4);
  // truth rows account for every sample of that truth
  auto& labels = rep.confusion.labels;
  auto row = static_cast<size_t>(
      std::find(labels.begin(), labels.end(), "xaa") - labels.begin());
  REQUIRE(rep.confusion.row_sum(row) == 2);

  try {
    out_of_set_report({}, {});
    FAIL("expected empty input rejection");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::empty_input);
  }
  try {
    out_of_set_report({"xaa"}, {"xaa", "xab"});
    FAIL("expected shape rejection");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::shape);
  }
}

namespace {

PipelineSample ps(bool in_set, std::string truth, std::string in_pred, double conf,
                  std::string out_pred) {
  PipelineSample s;
  s.truly_in_set = in_set;
  s.truth = std::move(truth);
  s.in_set_prediction = std::move(in_pred);
  s.confidence = conf;
  s.out_of_set_prediction = std::move(out_pred);
  return s;
}

}  // namespace

TEST_CASE("total accuracy sweep matches hand-computed points") {
  std::vector<PipelineSample> samples = {
      ps(true, "aaa", "aaa", 0.9, "xxx"),   // in-set, correct
      ps(true, "bbb", "ccc", 0.7, "xxx"),   // in-set, wrong
      ps(false, "xxx", "aaa", 0.4, "xxx"),  // out-of-set, ensemble correct
      ps(false, "yyy", "bbb", 0.6, "zzz"),  // out-of-set, ensemble wrong
  };
  std::vector<double> grid = {0.0, 0.5, 0.65, 0.8, 1.0};
  auto rep = total_accuracy_sweep(samples, grid);

  REQUIRE(rep.points.size() == 5);
  REQUIRE(rep.accuracy_at_0 == Catch::Approx(0.25));  // in-set branch alone
  REQUIRE(rep.accuracy_at_1 == Catch::Approx(0.25));  // ensemble branch alone
  REQUIRE(rep.points[0].total_accuracy == Catch::Approx(0.25));
  REQUIRE(rep.points[1].total_accuracy == Catch::Approx(0.5));
  REQUIRE(rep.points[2].total_accuracy == Catch::Approx(0.5));
  REQUIRE(rep.points[3].total_accuracy == Catch::Approx(0.5));
  REQUIRE(rep.points[4].total_accuracy == Catch::Approx(0.25));

  // endpoint identities (all confidences strictly inside [0, 1))
  REQUIRE(rep.points.front().total_accuracy == Catch::Approx(rep.accuracy_at_0));
  REQUIRE(rep.points.back().total_accuracy == Catch::Approx(rep.accuracy_at_1));

  REQUIRE(rep.best_accuracy == Catch::Approx(0.5));
  REQUIRE(rep.argmax_threshold == 0.5);  // first threshold reaching the max

  try {
    total_accuracy_sweep({}, grid);
    FAIL("expected empty input rejection");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::empty_input);
  }
  try {
    total_accuracy_sweep(samples, {});
    FAIL("expected empty grid rejection");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::empty_input);
  }
}

TEST_CASE("sweep endpoint identity presumes confidences below one") {
  std::vector<PipelineSample> samples = {
      ps(true, "aaa", "aaa", 1.0, "xxx"),  // saturated confidence
  };
  auto rep = total_accuracy_sweep(samples, uniform_grid(3));
  // still accepted at t = 1, so the final point reports the in-set branch
  REQUIRE(rep.points.back().total_accuracy == 1.0);
  REQUIRE(rep.accuracy_at_1 == 0.0);
}

TEST_CASE("report and curve serializers") {
  auto labels = make_labels(2);
  std::vector<InSetSample> samples;
  samples.push_back(sample_of("laa", spiked(2, 0, 0.9), labels));
  samples.push_back(sample_of("lab", spiked(2, 1, 0.8), labels));
  auto rep = in_set_report(samples, 0.65, 2);
  auto j = in_set_report_to_json(rep);
  REQUIRE(j["samples"] == 2);
  REQUIRE(j["accuracy"].get<double>() == Catch::Approx(1.0));
  REQUIRE(j["conditional_tau"].get<double>() == Catch::Approx(0.65));
  REQUIRE(j["top_n_accuracy"]["1"].get<double>() == Catch::Approx(1.0));
  REQUIRE(j["confusion"]["labels"].size() == 2);

  auto oos = out_of_set_report({"xaa"}, {"xaa"});
  auto jo = out_of_set_report_to_json(oos);
  REQUIRE(jo["samples"] == 1);
  REQUIRE(jo["accuracy"].get<double>() == Catch::Approx(1.0));

  auto det = det_curve({0.9, 0.8}, {0.1, 0.2}, uniform_grid(11));
  auto jd = det_to_json(det);
  REQUIRE(jd["points"] == 11);
  REQUIRE(jd.contains("eer"));
  REQUIRE(jd.contains("eer_threshold"));

  auto tsv = det_to_tsv(det);
  REQUIRE(tsv.rfind("threshold\tmiss\tfalse_alarm\n", 0) == 0);
  REQUIRE(std::count(tsv.begin(), tsv.end(), '\n') == 12);  // header + 11 points

  std::vector<PipelineSample> pipeline = {ps(true, "aaa", "aaa", 0.9, "xxx")};
  auto sweep = total_accuracy_sweep(pipeline, uniform_grid(5));
  auto js = sweep_to_json(sweep);
  REQUIRE(js["points"] == 5);
  REQUIRE(js.contains("argmax_threshold"));
  auto stsv = sweep_to_tsv(sweep);
  REQUIRE(stsv.rfind("threshold\ttotal_accuracy\n", 0) == 0);
  REQUIRE(std::count(stsv.begin(), stsv.end(), '\n') == 6);
}
