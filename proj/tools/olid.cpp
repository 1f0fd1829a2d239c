// tools/olid.cpp

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

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "olid/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

// Options shared by the pipeline subcommands.  Values only take effect when
// the flag was actually given; otherwise the config file (or its default)
// wins, so precedence is: built-in defaults < config file < environment <
// flags.
struct ConfigArgs {
  std::string config_file;
  std::string dataset_root;
  std::string work_dir = "work";
  std::string registry_file;
  uint64_t seed = 42;
  double tau = 0.65;
  int top_n = 5;
  double segment_s = 4.0;
  int sample_rate = 16000;
  int epochs = 15;
  int train_batch = 512;
  double lr = 1e-3;
  double weight_decay = 0.01;
  int backend_batch = 4000;
  int lda_k = 18;
  double novelty = 0.5;
  int min_enroll = 50;
  std::string pooling = "concat";

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "pipeline config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--dataset-root", dataset_root, "corpus root directory")
        ->envname("OLID_DATASET_ROOT");
    cmd->add_option("--work-dir", work_dir, "artifact directory (default: work)");
    cmd->add_option("--registry", registry_file, "language registry JSON")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "global seed");
    cmd->add_option("--tau", tau, "in-set acceptance threshold");
    cmd->add_option("--top-n", top_n, "candidates per decision record");
    cmd->add_option("--segment-s", segment_s, "segment length in seconds");
    cmd->add_option("--sample-rate", sample_rate, "pipeline sample rate in Hz");
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--train-batch", train_batch, "training batch size in segments");
    cmd->add_option("--lr", lr, "AdamW learning rate");
    cmd->add_option("--weight-decay", weight_decay, "AdamW weight decay");
    cmd->add_option("--backend-batch", backend_batch, "ensemble batch size in segments");
    cmd->add_option("--lda-k", lda_k, "LDA projection dimension");
    cmd->add_option("--novelty-threshold", novelty, "ensemble novelty threshold");
    cmd->add_option("--min-enroll", min_enroll, "minimum segments to enroll a language");
    cmd->add_option("--pooling", pooling, "representation pooling: concat or mean");
  }

  void apply(olid::PipelineConfig& cfg, const CLI::App* cmd) const {
    auto on = [cmd](const char* name) { return cmd->count(name) > 0; };
    if (on("--dataset-root")) cfg.dataset_root = dataset_root;
    if (on("--work-dir")) cfg.work_dir = work_dir;
    if (on("--registry")) cfg.registry = olid::LanguageRegistry::load(registry_file);
    if (on("--seed")) cfg.seed = seed;
    if (on("--tau")) cfg.tau = tau;
    if (on("--top-n")) cfg.top_n = top_n;
    if (on("--segment-s")) cfg.segment.segment_s = segment_s;
    if (on("--sample-rate")) cfg.segment.sample_rate = sample_rate;
    if (on("--epochs")) cfg.train.epochs = epochs;
    if (on("--train-batch")) cfg.train.batch_segments = train_batch;
    if (on("--lr")) cfg.train.adamw.lr = lr;
    if (on("--weight-decay")) cfg.train.adamw.weight_decay = weight_decay;
    if (on("--backend-batch")) cfg.backend.batch_segments = backend_batch;
    if (on("--lda-k")) cfg.backend.k = lda_k;
    if (on("--novelty-threshold")) cfg.backend.novelty_threshold = novelty;
    if (on("--min-enroll")) cfg.backend.min_enroll = min_enroll;
    if (on("--pooling")) cfg.backend.pooling = olid::pooling_from_name(pooling);
    cfg.finalize();
  }

  std::string effective_work_dir(const CLI::App* cmd) const {
    return cmd->count("--work-dir") ? work_dir : std::string("work");
  }

  // --config if given, else <work-dir>/config.json from a previous prepare,
  // else the provenance string baked into an artifact, else defaults.
  olid::PipelineConfig resolve(const CLI::App* cmd,
                               const std::string& provenance_fallback = "") const {
    olid::PipelineConfig cfg;
    fs::path work_cfg = fs::path(effective_work_dir(cmd)) / "config.json";
    if (cmd->count("--config")) {
      cfg = olid::PipelineConfig::load(config_file);
    } else if (fs::exists(work_cfg)) {
      cfg = olid::PipelineConfig::load(work_cfg.string());
    } else if (!provenance_fallback.empty()) {
      cfg = olid::PipelineConfig::from_json(nlohmann::json::parse(provenance_fallback));
    }
    apply(cfg, cmd);
    return cfg;
  }
};

std::string default_in_work(const CLI::App* cmd, const olid::PipelineConfig& cfg,
                            const char* flag, const std::string& value, const char* name) {
  if (cmd->count(flag)) return value;
  return (fs::path(cfg.work_dir) / name).string();
}

void emit(const nlohmann::json& j) { std::cout << j.dump() << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"olid: open-set spoken language identification"};
  app.require_subcommand(1);

  // synth
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic corpus");
  olid::SynthSpec synth_spec;
  c_synth->add_option("--out", synth_spec.out_root, "output corpus root")->required();
  c_synth->add_option("--languages", synth_spec.n_languages, "number of languages");
  c_synth->add_option("--speakers", synth_spec.n_speakers, "speakers per language");
  c_synth->add_option("--minutes", synth_spec.minutes_per_lang, "minutes of audio per language");
  c_synth->add_option("--seed", synth_spec.seed, "generator seed");
  c_synth->add_option("--utterance-s", synth_spec.utterance_s, "utterance length in seconds");
  c_synth->add_option("--sample-rate", synth_spec.sample_rate, "sample rate in Hz");

  // prepare
  auto* c_prepare = app.add_subcommand("prepare", "scan, segment, extract features, plan splits");
  ConfigArgs a_prepare;
  a_prepare.attach(c_prepare);

  // train
  auto* c_train = app.add_subcommand("train", "train the TDNN on the prepared splits");
  ConfigArgs a_train;
  a_train.attach(c_train);

  // fit-backend
  auto* c_fit = app.add_subcommand("fit-backend", "fit the out-of-set ensemble");
  ConfigArgs a_fit;
  a_fit.attach(c_fit);
  std::string fit_model, fit_out;
  c_fit->add_option("--model", fit_model, "model file (default: <work>/model.bin)");
  c_fit->add_option("--out", fit_out, "ensemble output (default: <work>/ensemble.bin)");

  // identify
  auto* c_identify = app.add_subcommand("identify", "identify the language of one audio file");
  ConfigArgs a_identify;
  a_identify.attach(c_identify);
  std::string id_audio, id_model, id_ensemble;
  c_identify->add_option("audio", id_audio, "wav file")->required()->check(CLI::ExistingFile);
  c_identify->add_option("--model", id_model, "model file (default: <work>/model.bin)");
  c_identify->add_option("--ensemble", id_ensemble, "ensemble file (default: <work>/ensemble.bin)");

  // enroll
  auto* c_enroll = app.add_subcommand("enroll", "add a language to the ensemble");
  ConfigArgs a_enroll;
  a_enroll.attach(c_enroll);
  std::string en_code, en_dir, en_model, en_in, en_out;
  c_enroll->add_option("--code", en_code, "new language code")->required();
  c_enroll->add_option("--audio-dir", en_dir, "directory of example wav files")
      ->required()
      ->check(CLI::ExistingDirectory);
  c_enroll->add_option("--model", en_model, "model file (default: <work>/model.bin)");
  c_enroll->add_option("--in", en_in, "ensemble input (default: <work>/ensemble.bin)");
  c_enroll->add_option("--out", en_out, "ensemble output")->required();

  // evaluate
  auto* c_eval = app.add_subcommand("evaluate", "score the test split and write the report");
  ConfigArgs a_eval;
  a_eval.attach(c_eval);
  std::string ev_model, ev_ensemble;
  c_eval->add_option("--model", ev_model, "model file (default: <work>/model.bin)");
  c_eval->add_option("--ensemble", ev_ensemble, "ensemble file (default: <work>/ensemble.bin)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c_synth->parsed()) {
      olid::generate_synthetic_corpus(synth_spec);
      emit({{"event", "synth"},
            {"out", synth_spec.out_root},
            {"languages", synth_spec.n_languages},
            {"speakers", synth_spec.n_speakers},
            {"minutes_per_language", synth_spec.minutes_per_lang},
            {"seed", synth_spec.seed}});
    } else if (c_prepare->parsed()) {
      olid::PipelineConfig cfg = a_prepare.resolve(c_prepare);
      olid::PrepareResult r = olid::cmd_prepare(cfg);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
      emit({{"event", "prepare"},
            {"splits", r.split_sizes},
            {"features_written", r.features_written},
            {"features_reused", r.features_reused},
            {"manifest_rewritten", r.manifest_rewritten},
            {"warnings", r.warnings.size()},
            {"work_dir", cfg.work_dir}});
    } else if (c_train->parsed()) {
      olid::PipelineConfig cfg = a_train.resolve(c_train);
      olid::TrainResult r = olid::cmd_train(cfg);
      emit({{"event", "train"},
            {"epochs", r.epochs.size()},
            {"best_epoch", r.best_epoch},
            {"best_val_accuracy", r.best_val_accuracy},
            {"final_val_accuracy", r.final_val_accuracy},
            {"model", r.model_file.string()},
            {"best_model", r.best_model_file.string()}});
    } else if (c_fit->parsed()) {
      olid::PipelineConfig cfg = a_fit.resolve(c_fit);
      std::string model = default_in_work(c_fit, cfg, "--model", fit_model, "model.bin");
      std::string out = default_in_work(c_fit, cfg, "--out", fit_out, "ensemble.bin");
      olid::FitBackendResult r = olid::cmd_fit_backend(cfg, model, out);
      emit({{"event", "fit_backend"},
            {"members", r.members},
            {"peak_resident_vectors", r.peak_resident},
            {"ensemble", r.ensemble_file.string()}});
    } else if (c_identify->parsed()) {
      olid::PipelineConfig cfg = a_identify.resolve(c_identify);
      std::string model = default_in_work(c_identify, cfg, "--model", id_model, "model.bin");
      bool have_cfg =
          c_identify->count("--config") > 0 ||
          fs::exists(fs::path(a_identify.effective_work_dir(c_identify)) / "config.json");
      if (!have_cfg) {
        // standalone use: fall back to the config baked into the model
        std::string provenance = olid::load_model<float>(model).provenance;
        cfg = a_identify.resolve(c_identify, provenance);
      }
      std::string ensemble =
          default_in_work(c_identify, cfg, "--ensemble", id_ensemble, "ensemble.bin");
      olid::cmd_identify(cfg, id_audio, model, ensemble, std::cout);
    } else if (c_enroll->parsed()) {
      olid::PipelineConfig cfg = a_enroll.resolve(c_enroll);
      std::string model = default_in_work(c_enroll, cfg, "--model", en_model, "model.bin");
      std::string in = default_in_work(c_enroll, cfg, "--in", en_in, "ensemble.bin");
      olid::EnrollResult r = olid::cmd_enroll(cfg, en_code, en_dir, model, in, en_out);
      emit({{"event", "enroll"},
            {"code", en_code},
            {"example_segments", r.example_segments},
            {"ensemble", r.ensemble_file.string()}});
    } else if (c_eval->parsed()) {
      olid::PipelineConfig cfg = a_eval.resolve(c_eval);
      std::string model = default_in_work(c_eval, cfg, "--model", ev_model, "model.bin");
      std::string ensemble =
          default_in_work(c_eval, cfg, "--ensemble", ev_ensemble, "ensemble.bin");
      olid::EvaluateResult r = olid::cmd_evaluate(cfg, model, ensemble);
      emit({{"event", "evaluate"},
            {"in_set_accuracy", r.in_set.accuracy},
            {"out_of_set_accuracy", r.out_of_set.accuracy},
            {"eer", r.det.eer},
            {"eer_threshold", r.det.eer_threshold},
            {"argmax_threshold", r.sweep.argmax_threshold},
            {"best_total_accuracy", r.sweep.best_accuracy},
            {"report", r.report_file.string()}});
    }
  } catch (const olid::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return olid::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
