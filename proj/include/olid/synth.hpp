// olid/synth.hpp

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

#ifndef OLID_SYNTH_HPP
#define OLID_SYNTH_HPP

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "olid/common.hpp"
#include "olid/corpus.hpp"
#include "olid/wav.hpp"

namespace olid {

/// Desk-scale stand-in corpus.  Each synthetic "language" is its own
/// generative process: a fixed formant-center set (F2 steps of 330 Hz keep
/// languages >= 300 Hz apart even after speaker perturbation) and a pitch
/// band; speakers perturb formants and pitch within the language so that
/// within-language variation exists but languages stay separable.
struct SynthSpec {
  int n_languages = 4;
  int n_speakers = 5;
  double minutes_per_lang = 2.0;
  uint64_t seed = 0;
  std::string out_root;
  double utterance_s = 10.0;
  int sample_rate = 16000;
};

namespace synth_detail {

struct LanguageVoice {
  double f1, f2, f3;          // formant centers, Hz
  double pitch_lo, pitch_hi;  // speaker pitch band, Hz
  double bandwidth;           // resonator bandwidth, Hz
};

inline LanguageVoice language_voice(int lang_index) {
  LanguageVoice v;
  v.f1 = 320.0 + 45.0 * (lang_index % 5);
  v.f2 = 850.0 + 330.0 * lang_index;
  v.f3 = 4100.0 + 60.0 * lang_index;
  v.pitch_lo = 95.0 + 14.0 * lang_index;
  v.pitch_hi = v.pitch_lo + 30.0;
  v.bandwidth = 110.0 + 6.0 * (lang_index % 7);
  return v;
}

inline std::string language_code(int i) {
  static const char* digits = "0123456789abcdefghijklmnopqrstuvwxyz";
  if (i < 0 || i >= 36) throw Error(ErrorCode::config, "synthetic corpus supports <= 36 languages");
  return std::string("sy") + digits[i];
}

// Two-pole resonator, unit peak gain near the center frequency.
struct Biquad {
  double b0 = 1, a1 = 0, a2 = 0;
  double z1 = 0, z2 = 0;

  static Biquad resonator(double freq_hz, double bandwidth_hz, int rate) {
    Biquad q;
    double r = std::exp(-M_PI * bandwidth_hz / rate);
    q.a1 = -2.0 * r * std::cos(2.0 * M_PI * freq_hz / rate);
    q.a2 = r * r;
    q.b0 = 1.0 - r;
    return q;
  }

  double step(double x) {
    double y = b0 * x - a1 * z1 - a2 * z2;
    z2 = z1;
    z1 = y;
    return y;
  }
};

/// Glottal-pulse train through parallel formant resonators, with a syllabic
/// amplitude envelope and a little breath noise.  Deterministic per
/// (seed, language, speaker, utterance).
inline std::vector<float> synth_utterance(const LanguageVoice& lang, double formant_scale,
                                          double pitch_shift, double seconds, int rate,
                                          Rng& rng) {
  size_t n = static_cast<size_t>(seconds * rate);
  std::vector<float> out(n, 0.0f);
  std::vector<double> source(n, 0.0);

  double p_lo = lang.pitch_lo + pitch_shift;
  double p_hi = lang.pitch_hi + pitch_shift;
  double phase1 = rng.uniform(0.0, 2.0 * M_PI);
  double phase2 = rng.uniform(0.0, 2.0 * M_PI);
  double vib_rate = rng.uniform(0.25, 0.5);
  double syll_rate = rng.uniform(2.8, 3.6);
  double syll_phase = rng.uniform(0.0, 2.0 * M_PI);

  double pitch_phase = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / rate;
    double sweep = 0.5 + 0.32 * std::sin(2.0 * M_PI * vib_rate * t + phase1) +
                   0.13 * std::sin(2.0 * M_PI * 1.7 * vib_rate * t + phase2);
    double f0 = p_lo + (p_hi - p_lo) * std::clamp(sweep, 0.0, 1.0);
    pitch_phase += f0 / rate;
    if (pitch_phase >= 1.0) {
      pitch_phase -= 1.0;
      source[i] += 1.0;  // glottal pulse
    }
    source[i] += 0.004 * rng.normal();  // breath noise
  }

  Biquad r1 = Biquad::resonator(lang.f1 * formant_scale, lang.bandwidth, rate);
  Biquad r2 = Biquad::resonator(lang.f2 * formant_scale, lang.bandwidth * 1.25, rate);
  Biquad r3 = Biquad::resonator(lang.f3 * formant_scale, lang.bandwidth * 1.6, rate);

  double peak = 1e-9;
  for (size_t i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / rate;
    double syll = 0.5 + 0.5 * std::sin(2.0 * M_PI * syll_rate * t + syll_phase);
    double env = 0.38 + 0.62 * syll * syll;
    double y = r1.step(source[i]) + 0.7 * r2.step(source[i]) + 0.35 * r3.step(source[i]);
    double v = env * y;
    out[i] = static_cast<float>(v);
    peak = std::max(peak, std::abs(v));
  }
  float g = static_cast<float>(0.6 / peak);
  for (auto& s : out) s *= g;
  return out;
}

}  // namespace synth_detail

/// Emits the synthetic dataset tree (one folder per language code, paired
/// .wav/.txt) under spec.out_root.  Identical spec+seed gives identical bytes.
inline void generate_synthetic_corpus(const SynthSpec& spec) {
  namespace sd = synth_detail;
  if (spec.n_languages < 2)
    throw Error(ErrorCode::config, "synthetic corpus needs at least 2 languages");
  if (spec.n_speakers < 1) throw Error(ErrorCode::config, "need at least 1 speaker");

  fs::path root(spec.out_root);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create " + root.string() + ": " + ec.message());

  int utt_per_lang = static_cast<int>(
      std::ceil(spec.minutes_per_lang * 60.0 / spec.utterance_s));

  for (int li = 0; li < spec.n_languages; ++li) {
    std::string code = sd::language_code(li);
    sd::LanguageVoice voice = sd::language_voice(li);
    fs::path dir = root / code;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());

    for (int ui = 0; ui < utt_per_lang; ++ui) {
      int spk = ui % spec.n_speakers;
      Rng spk_rng(spec.seed, "spk:" + code + ":" + std::to_string(spk));
      double formant_scale = spk_rng.uniform(0.97, 1.03);
      double pitch_shift = spk_rng.uniform(-6.0, 6.0);

      Rng utt_rng(spec.seed, "utt:" + code + ":" + std::to_string(ui));
      auto samples = sd::synth_utterance(voice, formant_scale, pitch_shift, spec.utterance_s,
                                         spec.sample_rate, utt_rng);
      double loud = utt_rng.uniform(0.7, 1.0);
      for (auto& s : samples) s = static_cast<float>(s * loud);

      UtteranceMeta m;
      m.language_code = code;
      m.source_dataset = "synth";
      m.sex = (spk % 2 == 0) ? Sex::female : Sex::male;
      char spk_name[16];
      std::snprintf(spk_name, sizeof(spk_name), "spk%02d", spk);
      m.speaker_id = spk_name;
      m.index = ui;

      fs::path wav = dir / render_filename(m, ".wav");
      write_wav16(wav.string(), samples, spec.sample_rate);
      fs::path txt = dir / render_filename(m, ".txt");
      auto os = open_out(txt.string());
      os << "synthetic utterance " << code << " speaker " << m.speaker_id << " #" << ui << "\n";
    }
  }
}

}  // namespace olid

#endif  // OLID_SYNTH_HPP
