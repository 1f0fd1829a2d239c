// olid/pipeline.hpp

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

#ifndef OLID_PIPELINE_HPP
#define OLID_PIPELINE_HPP

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "olid/backend.hpp"
#include "olid/common.hpp"
#include "olid/corpus.hpp"
#include "olid/eval.hpp"
#include "olid/features.hpp"
#include "olid/nn.hpp"
#include "olid/openset.hpp"
#include "olid/registry.hpp"
#include "olid/synth.hpp"

namespace olid {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

namespace pipeline_detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const char* where) {
  if (!j.is_object()) throw Error(ErrorCode::config, std::string(where) + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        ok = true;
        break;
      }
    if (!ok)
      throw Error(ErrorCode::config,
                  std::string("unknown key '") + it.key() + "' in " + where);
  }
}

template <typename T>
void get_to(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      j.at(key).get_to(out);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::config, std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

}  // namespace pipeline_detail

struct PipelineConfig {
  std::string dataset_root;
  std::string work_dir = "work";
  LanguageRegistry registry;
  SegmentConfig segment;
  MfccConfig features;
  TdnnConfig tdnn;
  TrainConfig train;
  BackendConfig backend;
  double tau = 0.65;
  int top_n = 5;
  uint64_t seed = 42;

  /// Pitch adds voicing, log-F0 and its delta to the cepstra.
  int feature_dim() const { return features.n_coeffs + 3; }

  void finalize() {
    tdnn.input_dim = feature_dim();
    train.seed = seed;
    backend.seed = seed;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["dataset_root"] = dataset_root;
    j["work_dir"] = work_dir;
    j["registry"] = registry.to_json();
    j["segment"] = {{"segment_s", segment.segment_s}, {"sample_rate", segment.sample_rate}};
    j["features"] = {{"n_coeffs", features.n_coeffs},
                     {"n_mel_bins", features.n_mel_bins},
                     {"fft_size", features.fft_size},
                     {"pre_emphasis", features.pre_emphasis},
                     {"frame_length_ms", features.frame_length_ms},
                     {"frame_shift_ms", features.frame_shift_ms},
                     {"mel_low_hz", features.mel_low_hz},
                     {"mel_high_hz", features.mel_high_hz},
                     {"lifter", features.lifter},
                     {"log_floor", features.log_floor}};
    j["tdnn"] = {{"layer_dims", tdnn.layer_dims}, {"layer_contexts", tdnn.layer_contexts}};
    j["train"] = {{"epochs", train.epochs},
                  {"batch_segments", train.batch_segments},
                  {"lr", train.adamw.lr},
                  {"beta1", train.adamw.beta1},
                  {"beta2", train.adamw.beta2},
                  {"eps", train.adamw.eps},
                  {"weight_decay", train.adamw.weight_decay}};
    j["backend"] = {{"batch_segments", backend.batch_segments},
                    {"k", backend.k},
                    {"novelty_threshold", backend.novelty_threshold},
                    {"min_enroll", backend.min_enroll},
                    {"pooling", pooling_name(backend.pooling)}};
    j["tau"] = tau;
    j["top_n"] = top_n;
    j["seed"] = seed;
    return j;
  }

  /// Canonical provenance string embedded in every artifact.
  std::string canonical() const { return to_json().dump(); }

  static PipelineConfig from_json(const nlohmann::json& j) {
    using pipeline_detail::check_keys;
    using pipeline_detail::get_to;
    PipelineConfig c;
    check_keys(j,
               {"dataset_root", "work_dir", "registry", "segment", "features", "tdnn", "train",
                "backend", "tau", "top_n", "seed"},
               "config");
    get_to(j, "dataset_root", c.dataset_root);
    get_to(j, "work_dir", c.work_dir);
    if (j.contains("registry")) c.registry = LanguageRegistry::from_json(j.at("registry"));
    if (j.contains("segment")) {
      const auto& s = j.at("segment");
      check_keys(s, {"segment_s", "sample_rate"}, "config.segment");
      get_to(s, "segment_s", c.segment.segment_s);
      get_to(s, "sample_rate", c.segment.sample_rate);
    }
    if (j.contains("features")) {
      const auto& f = j.at("features");
      check_keys(f,
                 {"n_coeffs", "n_mel_bins", "fft_size", "pre_emphasis", "frame_length_ms",
                  "frame_shift_ms", "mel_low_hz", "mel_high_hz", "lifter", "log_floor"},
                 "config.features");
      get_to(f, "n_coeffs", c.features.n_coeffs);
      get_to(f, "n_mel_bins", c.features.n_mel_bins);
      get_to(f, "fft_size", c.features.fft_size);
      get_to(f, "pre_emphasis", c.features.pre_emphasis);
      get_to(f, "frame_length_ms", c.features.frame_length_ms);
      get_to(f, "frame_shift_ms", c.features.frame_shift_ms);
      get_to(f, "mel_low_hz", c.features.mel_low_hz);
      get_to(f, "mel_high_hz", c.features.mel_high_hz);
      get_to(f, "lifter", c.features.lifter);
      get_to(f, "log_floor", c.features.log_floor);
    }
    if (j.contains("tdnn")) {
      const auto& t = j.at("tdnn");
      check_keys(t, {"layer_dims", "layer_contexts"}, "config.tdnn");
      get_to(t, "layer_dims", c.tdnn.layer_dims);
      get_to(t, "layer_contexts", c.tdnn.layer_contexts);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      check_keys(t, {"epochs", "batch_segments", "lr", "beta1", "beta2", "eps", "weight_decay"},
                 "config.train");
      get_to(t, "epochs", c.train.epochs);
      get_to(t, "batch_segments", c.train.batch_segments);
      get_to(t, "lr", c.train.adamw.lr);
      get_to(t, "beta1", c.train.adamw.beta1);
      get_to(t, "beta2", c.train.adamw.beta2);
      get_to(t, "eps", c.train.adamw.eps);
      get_to(t, "weight_decay", c.train.adamw.weight_decay);
    }
    if (j.contains("backend")) {
      const auto& b = j.at("backend");
      check_keys(b, {"batch_segments", "k", "novelty_threshold", "min_enroll", "pooling"},
                 "config.backend");
      get_to(b, "batch_segments", c.backend.batch_segments);
      get_to(b, "k", c.backend.k);
      get_to(b, "novelty_threshold", c.backend.novelty_threshold);
      get_to(b, "min_enroll", c.backend.min_enroll);
      if (b.contains("pooling")) c.backend.pooling = pooling_from_name(b.at("pooling"));
    }
    get_to(j, "tau", c.tau);
    get_to(j, "top_n", c.top_n);
    get_to(j, "seed", c.seed);
    c.finalize();
    return c;
  }

  static PipelineConfig load(const std::string& path) {
    auto is = open_in(path);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::config, "config " + path + ": " + e.what());
    }
    return from_json(j);
  }
};

// ---------------------------------------------------------------------------
// Work-directory plumbing

/// Exclusive advisory lock: one mutating command per output directory.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".olid.lock") {
    fs::create_directories(dir);
    int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw Error(ErrorCode::lock, "another command holds " + path_.string() +
                                       " (remove it if that command crashed)");
    std::string pid = std::to_string(::getpid()) + "\n";
    ssize_t ignored = ::write(fd, pid.data(), pid.size());
    (void)ignored;
    ::close(fd);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

class JsonlWriter {
 public:
  JsonlWriter(const fs::path& path, bool truncate)
      : os_(path, truncate ? std::ios::trunc : std::ios::app) {
    if (!os_) throw Error(ErrorCode::io, "cannot open log " + path.string());
  }
  void line(const nlohmann::json& j) {
    os_ << j.dump() << '\n';
    os_.flush();
  }

 private:
  std::ofstream os_;
};

/// Writes only when content differs, so identical re-runs leave timestamps
/// untouched.
inline bool write_file_if_changed(const fs::path& path, const std::string& content) {
  if (fs::exists(path)) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream old;
    old << is.rdbuf();
    if (old.str() == content) return false;
  }
  fs::create_directories(path.parent_path());
  auto os = open_out(path.string());
  write_bytes(os, content.data(), content.size());
  return true;
}

inline fs::path manifest_path(const PipelineConfig& cfg) {
  return fs::path(cfg.work_dir) / "manifest.tsv";
}
inline fs::path registry_path(const PipelineConfig& cfg) {
  return fs::path(cfg.work_dir) / "registry.json";
}
inline fs::path model_path_default(const PipelineConfig& cfg) {
  return fs::path(cfg.work_dir) / "model.bin";
}
inline fs::path ensemble_path_default(const PipelineConfig& cfg) {
  return fs::path(cfg.work_dir) / "ensemble.bin";
}

inline fs::path feature_cache_path(const PipelineConfig& cfg, const SegmentRef& ref) {
  fs::path audio(ref.audio_path);
  char idx[16];
  std::snprintf(idx, sizeof(idx), "%04d", ref.segment_index);
  return fs::path(cfg.work_dir) / "features" / ref.language_code /
         (audio.stem().string() + "_" + idx + ".fbin");
}

/// Scope of the provenance stamp on feature cache files: everything that
/// changes the bytes of a feature matrix.
inline std::string feature_provenance(const PipelineConfig& cfg) {
  nlohmann::json j = cfg.to_json();
  return nlohmann::json{{"features", j["features"]}, {"segment", j["segment"]}}.dump();
}

/// The registry that commands after prepare must use; prepare materializes it
/// from the config, enroll appends to it.
inline LanguageRegistry load_work_registry(const PipelineConfig& cfg) {
  fs::path p = registry_path(cfg);
  if (!fs::exists(p))
    throw Error(ErrorCode::config,
                "missing " + p.string() + " (run prepare first)");
  return LanguageRegistry::load(p.string());
}

// ---------------------------------------------------------------------------
// Representation provider over cached feature files

template <typename Scalar = float>
class FileRepresentationProvider final : public RepresentationProvider {
 public:
  FileRepresentationProvider(const PipelineConfig& cfg, TdnnModel<Scalar>& model,
                             std::vector<SegmentRef> refs)
      : cfg_(cfg), model_(model), refs_(std::move(refs)) {}

  size_t size() const override { return refs_.size(); }
  std::string label(size_t i) const override { return refs_.at(i).language_code; }
  std::string segment_id(size_t i) const override { return refs_.at(i).id(); }
  Eigen::VectorXf get(size_t i) override {
    FeatureMatrix fm = read_feature_file(feature_cache_path(cfg_, refs_.at(i)).string());
    return extract_representation(model_, fm, cfg_.backend.pooling, refs_.at(i).id()).values;
  }

 private:
  const PipelineConfig& cfg_;
  TdnnModel<Scalar>& model_;
  std::vector<SegmentRef> refs_;
};

// ---------------------------------------------------------------------------
// prepare

struct PrepareResult {
  std::map<std::string, size_t> split_sizes;
  std::vector<std::string> warnings;
  size_t features_written = 0;
  size_t features_reused = 0;
  bool manifest_rewritten = false;
};

inline PrepareResult cmd_prepare(const PipelineConfig& cfg) {
  cfg.registry.validate();
  cfg.features.validate(cfg.segment.sample_rate);
  DirLock lock(cfg.work_dir);

  ScanResult scan = scan_dataset(cfg.dataset_root);
  PrepareResult result;
  result.warnings = scan.warnings;

  std::string fprov = feature_provenance(cfg);
  std::vector<SegmentRef> segments;
  for (const auto& utt : scan.utterances) {
    bool in = cfg.registry.in_set_index(utt.language_code).has_value();
    bool oos = !in && std::find(cfg.registry.out_of_set.begin(), cfg.registry.out_of_set.end(),
                                utt.language_code) != cfg.registry.out_of_set.end();
    if (!in && !oos) {
      result.warnings.push_back("not in registry, skipped: " + utt.audio_path.string());
      continue;
    }
    AudioBuffer audio = read_wav(utt.audio_path.string());
    auto segs = segment_utterance(audio, utt, cfg.segment);
    for (size_t i = 0; i < segs.size(); ++i) {
      SegmentRef ref;
      ref.audio_path = utt.audio_path.string();
      ref.segment_index = static_cast<int>(i);
      ref.language_code = utt.language_code;
      ref.speaker_id = utt.speaker_id;

      fs::path cache = feature_cache_path(cfg, ref);
      bool fresh = false;
      if (fs::exists(cache)) {
        try {
          fresh = read_feature_provenance(cache.string()) == fprov;
        } catch (const Error&) {
          fresh = false;
        }
      }
      if (fresh) {
        ++result.features_reused;
      } else {
        FeatureMatrix fm = extract_features(segs[i], cfg.features);
        fm.provenance = fprov;
        fs::create_directories(cache.parent_path());
        write_feature_file(cache.string(), fm);
        ++result.features_written;
      }
      segments.push_back(std::move(ref));
    }
  }

  SplitPlan plan = make_split(segments, cfg.registry, cfg.seed);
  result.manifest_rewritten =
      write_file_if_changed(manifest_path(cfg), manifest_to_string(plan, cfg.canonical()));
  write_file_if_changed(registry_path(cfg), cfg.registry.to_json().dump(2) + "\n");
  write_file_if_changed(fs::path(cfg.work_dir) / "config.json", cfg.to_json().dump(2) + "\n");

  result.split_sizes["tdnn_train"] = plan.tdnn_train.size();
  result.split_sizes["tdnn_val"] = plan.tdnn_val.size();
  result.split_sizes["backend_fit"] = plan.backend_fit.size();
  result.split_sizes["test"] = plan.test.size();
  return result;
}

// ---------------------------------------------------------------------------
// train

struct TrainResult {
  double best_val_accuracy = 0.0;
  int best_epoch = 0;
  double final_val_accuracy = 0.0;
  std::vector<EpochStats> epochs;
  fs::path model_file;
  fs::path best_model_file;
};

inline TrainResult cmd_train(const PipelineConfig& cfg) {
  DirLock lock(cfg.work_dir);
  LanguageRegistry registry = load_work_registry(cfg);

  auto is = open_in(manifest_path(cfg).string());
  SplitPlan plan = read_manifest(is);
  if (plan.tdnn_train.empty()) throw Error(ErrorCode::empty_input, "train: empty tdnn_train split");

  auto label_of = [&](const SegmentRef& ref) {
    auto idx = registry.in_set_index(ref.language_code);
    if (!idx)
      throw Error(ErrorCode::registry_mismatch,
                  "train: segment language '" + ref.language_code + "' is not in-set");
    return static_cast<int>(*idx);
  };
  std::vector<int> train_labels, val_labels;
  for (const auto& r : plan.tdnn_train) train_labels.push_back(label_of(r));
  for (const auto& r : plan.tdnn_val) val_labels.push_back(label_of(r));

  auto loader_for = [&cfg](const std::vector<SegmentRef>& refs) {
    return [&cfg, &refs](size_t i) {
      return read_feature_file(feature_cache_path(cfg, refs[i]).string()).frames;
    };
  };
  auto train_load = loader_for(plan.tdnn_train);
  auto val_load = loader_for(plan.tdnn_val);

  auto model = TdnnModel<float>::init(cfg.tdnn, registry, cfg.seed);
  model.provenance = cfg.canonical();
  TdnnTrainer<float> trainer(model, cfg.train);

  JsonlWriter log(fs::path(cfg.work_dir) / "train_log.jsonl", /*truncate=*/true);
  TrainResult result;
  result.best_val_accuracy = -1.0;
  std::string best_bytes;

  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    EpochStats st = trainer.run_epoch(epoch, train_load, train_labels, val_load, val_labels);
    result.epochs.push_back(st);
    log.line({{"epoch", st.epoch},
              {"train_loss", st.train_loss},
              {"train_accuracy", st.train_accuracy},
              {"val_loss", st.val_loss},
              {"val_accuracy", st.val_accuracy},
              {"optimizer_steps", st.optimizer_steps}});
    if (st.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = st.val_accuracy;
      result.best_epoch = epoch;
      std::ostringstream os(std::ios::binary);
      save_model(os, model);
      best_bytes = os.str();
    }
    result.final_val_accuracy = st.val_accuracy;
  }

  result.model_file = model_path_default(cfg);
  result.best_model_file = fs::path(cfg.work_dir) / "model.best.bin";
  save_model(result.model_file.string(), model);
  if (best_bytes.empty()) {
    std::ostringstream os(std::ios::binary);
    save_model(os, model);
    best_bytes = os.str();
  }
  {
    auto os = open_out(result.best_model_file.string());
    write_bytes(os, best_bytes.data(), best_bytes.size());
  }
  return result;
}

// ---------------------------------------------------------------------------
// fit-backend

struct FitBackendResult {
  int members = 0;
  int64_t peak_resident = 0;
  fs::path ensemble_file;
};

inline FitBackendResult cmd_fit_backend(const PipelineConfig& cfg, const fs::path& model_file,
                                        const fs::path& out_file) {
  DirLock lock(cfg.work_dir);
  LanguageRegistry registry = load_work_registry(cfg);
  auto model = load_model<float>(model_file.string());
  require_registry_match(model.registry_hash, registry);

  auto is = open_in(manifest_path(cfg).string());
  SplitPlan plan = read_manifest(is);
  if (plan.backend_fit.empty())
    throw Error(ErrorCode::empty_input, "fit-backend: empty backend_fit split");

  FileRepresentationProvider<float> provider(cfg, model, plan.backend_fit);
  EnsembleFitStats stats;
  PldaEnsemble ensemble = fit_ensemble(provider, cfg.backend, &stats);
  ensemble.provenance = cfg.canonical();
  save_ensemble(out_file.string(), ensemble);

  JsonlWriter log(fs::path(cfg.work_dir) / "backend_log.jsonl", /*truncate=*/true);
  log.line({{"event", "fit_backend"},
            {"members", stats.members},
            {"peak_resident_vectors", stats.residency.peak},
            {"segments", plan.backend_fit.size()},
            {"ensemble", out_file.string()}});

  FitBackendResult result;
  result.members = stats.members;
  result.peak_resident = stats.residency.peak;
  result.ensemble_file = out_file;
  return result;
}

// ---------------------------------------------------------------------------
// identify

struct SegmentDecision {
  SegmentRef ref;
  OpenSetDecision decision;
  std::optional<Classification> out_of_set;
  Eigen::VectorXd posterior;
  Eigen::VectorXf representation;
};

/// Features -> TDNN -> time-averaged posterior -> threshold; rejected
/// segments additionally get the ensemble's out-of-set classification.
template <typename Scalar>
SegmentDecision decide_segment(const PipelineConfig& cfg, TdnnModel<Scalar>& model,
                               const PldaEnsemble* ensemble, const FeatureMatrix& fm,
                               const SegmentRef& ref) {
  MatrixRM<Scalar> input = fm.frames.template cast<Scalar>();
  auto fwd = model.forward(input, 1, /*training=*/false);

  SegmentDecision sd;
  sd.ref = ref;
  sd.posterior = average_posterior(fwd.posteriors).template cast<double>();
  ThresholdPolicy policy{cfg.tau};
  sd.decision = decide(sd.posterior, policy, model.class_labels, cfg.top_n);

  if (cfg.backend.pooling == Pooling::concat) {
    MatrixRM<float> r = fwd.representation.template cast<float>();
    sd.representation = Eigen::Map<Eigen::VectorXf>(r.data(), r.size());
  } else {
    VectorX<Scalar> m = fwd.representation.colwise().mean().transpose();
    sd.representation = m.template cast<float>();
  }
  if (!sd.decision.accepted && ensemble) sd.out_of_set = classify(*ensemble, sd.representation);
  return sd;
}

inline nlohmann::json segment_decision_record(const SegmentDecision& sd) {
  nlohmann::json rec = decision_record(sd.ref.audio_path, sd.ref.segment_index, sd.decision);
  if (sd.out_of_set) {
    rec["out_of_set"] = {{"label", sd.out_of_set->label},
                         {"confidence", sd.out_of_set->confidence},
                         {"novel", sd.out_of_set->novel}};
  }
  return rec;
}

inline void cmd_identify(const PipelineConfig& cfg, const fs::path& audio_file,
                         const fs::path& model_file, const fs::path& ensemble_file,
                         std::ostream& out) {
  auto model = load_model<float>(model_file.string());
  PldaEnsemble ensemble = load_ensemble(ensemble_file.string());

  AudioBuffer audio = read_wav(audio_file.string());
  UtteranceMeta meta;
  meta.audio_path = audio_file;
  try {
    meta = parse_filename(audio_file.filename().string());
    meta.audio_path = audio_file;
  } catch (const Error&) {
    // identification does not require convention-named files
  }
  auto segs = segment_utterance(audio, meta, cfg.segment);
  if (segs.empty())
    throw Error(ErrorCode::insufficient_data,
                "audio shorter than one segment of " + std::to_string(cfg.segment.segment_s) +
                    " s: " + audio_file.string());

  Eigen::VectorXd posterior_sum = Eigen::VectorXd::Zero(model.n_classes());
  std::vector<std::pair<std::string, double>> oos_votes;
  int rejected = 0;
  for (size_t i = 0; i < segs.size(); ++i) {
    FeatureMatrix fm = extract_features(segs[i], cfg.features);
    SegmentRef ref{audio_file.string(), static_cast<int>(i), meta.language_code, meta.speaker_id};
    SegmentDecision sd = decide_segment(cfg, model, &ensemble, fm, ref);
    posterior_sum += sd.posterior;
    if (!sd.decision.accepted) {
      ++rejected;
      if (sd.out_of_set) oos_votes.emplace_back(sd.out_of_set->label, sd.out_of_set->confidence);
    }
    out << segment_decision_record(sd).dump() << '\n';
  }

  // utterance summary: mean of segment posteriors through the same threshold
  Eigen::VectorXd mean_posterior = posterior_sum / static_cast<double>(segs.size());
  ThresholdPolicy policy{cfg.tau};
  OpenSetDecision utt = decide(mean_posterior, policy, model.class_labels, cfg.top_n);
  nlohmann::json rec = {{"utterance", audio_file.string()},
                        {"segments", segs.size()},
                        {"rejected_segments", rejected},
                        {"accepted", utt.accepted},
                        {"confidence", utt.confidence}};
  if (utt.accepted) {
    rec["prediction"] = utt.predicted_in_set;
  } else if (!oos_votes.empty()) {
    Classification c = combine_votes(oos_votes, ensemble.novelty_threshold);
    rec["out_of_set"] = {{"label", c.label}, {"confidence", c.confidence}, {"novel", c.novel}};
  }
  out << rec.dump() << '\n';
}

// ---------------------------------------------------------------------------
// enroll

struct EnrollResult {
  size_t example_segments = 0;
  uint64_t fingerprint = 0;
  fs::path ensemble_file;
};

inline EnrollResult cmd_enroll(const PipelineConfig& cfg, const std::string& new_code,
                               const fs::path& audio_dir, const fs::path& model_file,
                               const fs::path& ensemble_in, const fs::path& ensemble_out) {
  if (fs::weakly_canonical(ensemble_in) == fs::weakly_canonical(ensemble_out))
    throw Error(ErrorCode::config,
                "enroll writes a new ensemble file; --out must differ from the input");
  DirLock lock(cfg.work_dir);
  LanguageRegistry registry = load_work_registry(cfg);
  auto model = load_model<float>(model_file.string());
  require_registry_match(model.registry_hash, registry);
  PldaEnsemble ensemble = load_ensemble(ensemble_in.string());
  uint64_t fp_before = model_fingerprint(model);

  if (!fs::is_directory(audio_dir))
    throw Error(ErrorCode::io, "enroll: not a directory: " + audio_dir.string());
  std::vector<fs::path> wavs;
  for (const auto& e : fs::directory_iterator(audio_dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") wavs.push_back(e.path());
  std::sort(wavs.begin(), wavs.end());

  std::vector<RepresentationVector> examples;
  for (const auto& wav : wavs) {
    AudioBuffer audio = read_wav(wav.string());
    UtteranceMeta meta;
    meta.audio_path = wav;
    auto segs = segment_utterance(audio, meta, cfg.segment);
    for (size_t i = 0; i < segs.size(); ++i) {
      FeatureMatrix fm = extract_features(segs[i], cfg.features);
      examples.push_back(extract_representation(model, fm, cfg.backend.pooling,
                                                wav.string() + "#" + std::to_string(i)));
    }
  }

  auto is = open_in(manifest_path(cfg).string());
  SplitPlan plan = read_manifest(is);
  FileRepresentationProvider<float> provider(cfg, model, plan.backend_fit);

  PldaEnsemble next = enroll_language(ensemble, new_code, examples, provider, registry, cfg.backend);
  next.provenance = cfg.canonical();

  uint64_t fp_after = model_fingerprint(model);
  if (fp_before != fp_after)
    throw Error(ErrorCode::registry_mismatch, "enroll: model fingerprint changed");

  save_ensemble(ensemble_out.string(), next);
  registry.save(registry_path(cfg).string());

  EnrollResult result;
  result.example_segments = examples.size();
  result.fingerprint = fp_after;
  result.ensemble_file = ensemble_out;
  return result;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateResult {
  InSetReport in_set;
  OutOfSetReport out_of_set;
  DetCurve det;
  SweepReport sweep;
  double utterance_in_set_accuracy = 0.0;
  double utterance_out_of_set_accuracy = 0.0;
  fs::path report_file;
};

inline EvaluateResult cmd_evaluate(const PipelineConfig& cfg, const fs::path& model_file,
                                   const fs::path& ensemble_file) {
  DirLock lock(cfg.work_dir);
  LanguageRegistry registry = load_work_registry(cfg);
  auto model = load_model<float>(model_file.string());
  require_registry_match(model.registry_hash, registry);
  PldaEnsemble ensemble = load_ensemble(ensemble_file.string());

  auto is = open_in(manifest_path(cfg).string());
  SplitPlan plan = read_manifest(is);

  std::vector<SegmentRef> in_refs, oos_refs;
  for (const auto& r : plan.test)
    (registry.in_set_index(r.language_code) ? in_refs : oos_refs).push_back(r);
  if (in_refs.empty()) throw Error(ErrorCode::empty_input, "evaluate: no in-set test segments");
  if (oos_refs.empty())
    throw Error(ErrorCode::empty_input, "evaluate: no out-of-set test segments");

  std::vector<InSetSample> in_samples;
  std::vector<double> in_confidences, oos_confidences;
  std::vector<PipelineSample> sweep_samples;
  std::map<std::string, std::pair<std::string, Eigen::VectorXd>> in_utts;  // path -> truth, sum
  std::map<std::string, std::pair<std::string, std::vector<std::pair<std::string, double>>>>
      oos_utts;

  ThresholdPolicy policy{cfg.tau};
  for (const auto& ref : in_refs) {
    FeatureMatrix fm = read_feature_file(feature_cache_path(cfg, ref).string());
    SegmentDecision sd = decide_segment(cfg, model, nullptr, fm, ref);
    OpenSetDecision full =
        decide(sd.posterior, policy, model.class_labels, model.n_classes());
    in_samples.push_back({ref.language_code, full});
    in_confidences.push_back(full.confidence);
    PipelineSample ps;
    ps.truly_in_set = true;
    ps.truth = ref.language_code;
    ps.in_set_prediction = full.top_n.front().first;
    ps.confidence = full.confidence;
    sweep_samples.push_back(ps);
    auto [it, fresh] = in_utts.try_emplace(
        ref.audio_path, ref.language_code, Eigen::VectorXd::Zero(model.n_classes()));
    it->second.second += sd.posterior;
  }

  std::vector<std::string> oos_truths, oos_predictions;
  for (const auto& ref : oos_refs) {
    FeatureMatrix fm = read_feature_file(feature_cache_path(cfg, ref).string());
    MatrixRM<float> input = fm.frames;
    auto fwd = model.forward(input, 1, /*training=*/false);
    Eigen::VectorXd posterior = average_posterior(fwd.posteriors).cast<double>();

    Eigen::VectorXf rep;
    if (cfg.backend.pooling == Pooling::concat) {
      MatrixRM<float> r = fwd.representation;
      rep = Eigen::Map<Eigen::VectorXf>(r.data(), r.size());
    } else {
      rep = fwd.representation.colwise().mean().transpose();
    }
    Classification cls = classify(ensemble, rep);

    oos_truths.push_back(ref.language_code);
    oos_predictions.push_back(cls.label);
    oos_confidences.push_back(posterior.maxCoeff());

    PipelineSample ps;
    ps.truly_in_set = false;
    ps.truth = ref.language_code;
    Eigen::Index arg = 0;
    ps.confidence = posterior.maxCoeff(&arg);
    ps.in_set_prediction = model.class_labels[static_cast<size_t>(arg)];
    ps.out_of_set_prediction = cls.label;
    sweep_samples.push_back(ps);

    auto [it, fresh] = oos_utts.try_emplace(ref.audio_path, ref.language_code,
                                            std::vector<std::pair<std::string, double>>{});
    it->second.second.emplace_back(cls.label, cls.confidence);
  }

  std::vector<double> grid = uniform_grid(201);
  EvaluateResult result;
  result.in_set = in_set_report(in_samples, cfg.tau, cfg.top_n);
  result.out_of_set = out_of_set_report(oos_truths, oos_predictions);
  result.det = det_curve(in_confidences, oos_confidences, grid);
  result.sweep = total_accuracy_sweep(sweep_samples, grid);

  // secondary utterance-level aggregation
  {
    int64_t correct = 0;
    for (const auto& [path, tp] : in_utts) {
      Eigen::VectorXd mean = tp.second / tp.second.sum();
      Eigen::Index arg = 0;
      mean.maxCoeff(&arg);
      if (model.class_labels[static_cast<size_t>(arg)] == tp.first) ++correct;
    }
    result.utterance_in_set_accuracy =
        in_utts.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(in_utts.size());
    int64_t oos_correct = 0;
    for (const auto& [path, tv] : oos_utts) {
      Classification c = combine_votes(tv.second, ensemble.novelty_threshold);
      if (c.label == tv.first) ++oos_correct;
    }
    result.utterance_out_of_set_accuracy =
        oos_utts.empty() ? 0.0
                         : static_cast<double>(oos_correct) / static_cast<double>(oos_utts.size());
  }

  auto cond_curve = conditional_accuracy_curve(in_samples, grid);
  nlohmann::json cond = nlohmann::json::array();
  for (size_t i = 0; i < grid.size(); ++i) {
    if (cond_curve[i])
      cond.push_back({{"threshold", grid[i]}, {"accuracy", *cond_curve[i]}});
    else
      cond.push_back({{"threshold", grid[i]}, {"accuracy", nullptr}});
  }

  nlohmann::json report = {
      {"schema_version", 1},
      {"config", cfg.to_json()},
      {"in_set", in_set_report_to_json(result.in_set)},
      {"out_of_set", out_of_set_report_to_json(result.out_of_set)},
      {"det", det_to_json(result.det)},
      {"sweep", sweep_to_json(result.sweep)},
      {"conditional_accuracy_curve", cond},
      {"utterance",
       {{"in_set_accuracy", result.utterance_in_set_accuracy},
        {"out_of_set_accuracy", result.utterance_out_of_set_accuracy}}},
  };

  result.report_file = fs::path(cfg.work_dir) / "report.json";
  write_file_if_changed(result.report_file, report.dump(2) + "\n");
  write_file_if_changed(fs::path(cfg.work_dir) / "det.tsv", det_to_tsv(result.det));
  write_file_if_changed(fs::path(cfg.work_dir) / "sweep.tsv", sweep_to_tsv(result.sweep));
  return result;
}

}  // namespace olid

#endif  // OLID_PIPELINE_HPP
