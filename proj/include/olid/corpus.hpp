// olid/corpus.hpp

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

#ifndef OLID_CORPUS_HPP
#define OLID_CORPUS_HPP

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "olid/common.hpp"
#include "olid/registry.hpp"
#include "olid/wav.hpp"

namespace olid {

namespace fs = std::filesystem;

enum class Sex { male, female, unknown };

inline char sex_token(Sex s) {
  switch (s) {
    case Sex::male: return 'm';
    case Sex::female: return 'f';
    default: return 'u';
  }
}

/// One corpus utterance, decoded from the
/// <language-code>_<source-dataset>_<sex>_<speaker-id>_<index> naming scheme.
struct UtteranceMeta {
  std::string language_code;
  std::string source_dataset;
  Sex sex = Sex::unknown;
  std::string speaker_id;  // empty iff unknown ("u" in the filename)
  int64_t index = 0;
  fs::path audio_path;
  fs::path transcript_path;  // empty if the .txt is absent

  bool speaker_known() const { return !speaker_id.empty(); }

  bool operator==(const UtteranceMeta& o) const {
    return language_code == o.language_code && source_dataset == o.source_dataset &&
           sex == o.sex && speaker_id == o.speaker_id && index == o.index;
  }
};

/// Parses a corpus filename.  The source-dataset field may itself contain
/// underscores, so parsing anchors from both ends: token 0 is the language
/// code, the last token the index, the two before it speaker-id and sex, and
/// everything in between rejoined is the source dataset.
inline UtteranceMeta parse_filename(const std::string& name) {
  auto fail = [&](const std::string& why) -> Error {
    return Error(ErrorCode::malformed_name, name + ": " + why);
  };

  std::string stem = name;
  auto slash = stem.find_last_of("/\\");
  if (slash != std::string::npos) stem = stem.substr(slash + 1);
  auto dot = stem.rfind('.');
  if (dot == std::string::npos) throw fail("missing extension");
  std::string ext = stem.substr(dot);
  if (ext != ".wav" && ext != ".txt") throw fail("extension must be .wav or .txt");
  stem = stem.substr(0, dot);

  std::vector<std::string> tokens;
  size_t start = 0;
  while (true) {
    auto pos = stem.find('_', start);
    if (pos == std::string::npos) {
      tokens.push_back(stem.substr(start));
      break;
    }
    tokens.push_back(stem.substr(start, pos - start));
    start = pos + 1;
  }
  if (tokens.size() < 5) throw fail("expected at least 5 underscore-separated fields");

  UtteranceMeta m;
  m.language_code = tokens.front();
  if (!valid_language_code(m.language_code))
    throw fail("bad language code '" + m.language_code + "'");

  const std::string& idx = tokens.back();
  if (idx.empty() || !std::all_of(idx.begin(), idx.end(), [](char c) { return c >= '0' && c <= '9'; }))
    throw fail("index field '" + idx + "' is not a non-negative integer");
  if (idx.size() > 18) throw fail("index field too long");
  m.index = std::stoll(idx);

  const std::string& spk = tokens[tokens.size() - 2];
  if (spk.empty()) throw fail("empty speaker field");
  m.speaker_id = (spk == "u") ? std::string() : spk;

  const std::string& sex = tokens[tokens.size() - 3];
  if (sex == "m") m.sex = Sex::male;
  else if (sex == "f") m.sex = Sex::female;
  else if (sex == "u") m.sex = Sex::unknown;
  else throw fail("sex field must be m, f, or u");

  std::string source;
  for (size_t i = 1; i + 3 < tokens.size(); ++i) {
    if (tokens[i].empty()) throw fail("empty source-dataset token");
    if (!source.empty()) source += '_';
    source += tokens[i];
  }
  m.source_dataset = source;
  return m;
}

inline std::string render_filename(const UtteranceMeta& m, const std::string& ext = ".wav") {
  std::ostringstream os;
  os << m.language_code << '_' << m.source_dataset << '_' << sex_token(m.sex) << '_'
     << (m.speaker_known() ? m.speaker_id : std::string("u")) << '_';
  std::string idx = std::to_string(m.index);
  while (idx.size() < 4) idx.insert(idx.begin(), '0');
  os << idx << ext;
  return os.str();
}

// ---------------------------------------------------------------------------
// Segmentation

struct SegmentConfig {
  double segment_s = 4.0;
  int sample_rate = 16000;

  int64_t samples_per_segment() const {
    return static_cast<int64_t>(std::llround(segment_s * sample_rate));
  }
};

struct AudioSegment {
  std::vector<float> samples;
  int sample_rate = 0;
  UtteranceMeta source;
  int segment_index = 0;
};

/// Cuts an utterance into fixed-length segments at the pipeline rate.
/// Audio is downmixed/resampled first; the tail shorter than one segment is
/// discarded.  Too-short audio yields an empty list, not an error.
inline std::vector<AudioSegment> segment_utterance(const AudioBuffer& audio,
                                                   const UtteranceMeta& meta,
                                                   const SegmentConfig& cfg) {
  if (cfg.segment_s <= 0) throw Error(ErrorCode::config, "segment_s must be positive");
  AudioBuffer at_rate = resample_linear(audio, cfg.sample_rate);
  int64_t seg_len = cfg.samples_per_segment();
  int64_t n = static_cast<int64_t>(at_rate.samples.size());
  int64_t count = n / seg_len;
  std::vector<AudioSegment> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t k = 0; k < count; ++k) {
    AudioSegment s;
    s.sample_rate = cfg.sample_rate;
    s.source = meta;
    s.segment_index = static_cast<int>(k);
    s.samples.assign(at_rate.samples.begin() + k * seg_len,
                     at_rate.samples.begin() + (k + 1) * seg_len);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split planning

/// Lightweight handle for one segment of one utterance; the split planner and
/// manifest work at this granularity so audio never has to be resident.
struct SegmentRef {
  std::string audio_path;
  int segment_index = 0;
  std::string language_code;
  std::string speaker_id;  // empty = unknown

  std::string id() const { return audio_path + "#" + std::to_string(segment_index); }

  bool operator==(const SegmentRef&) const = default;
};

enum class SplitTag { tdnn_train, tdnn_val, backend_fit, test };

inline const char* split_tag_name(SplitTag t) {
  switch (t) {
    case SplitTag::tdnn_train: return "tdnn_train";
    case SplitTag::tdnn_val: return "tdnn_val";
    case SplitTag::backend_fit: return "backend_fit";
    case SplitTag::test: return "test";
  }
  return "?";
}

inline SplitTag split_tag_from(const std::string& s) {
  if (s == "tdnn_train") return SplitTag::tdnn_train;
  if (s == "tdnn_val") return SplitTag::tdnn_val;
  if (s == "backend_fit") return SplitTag::backend_fit;
  if (s == "test") return SplitTag::test;
  throw Error(ErrorCode::io, "unknown split tag '" + s + "'");
}

struct SplitPlan {
  std::vector<SegmentRef> tdnn_train;
  std::vector<SegmentRef> tdnn_val;
  std::vector<SegmentRef> backend_fit;
  std::vector<SegmentRef> test;
  uint64_t seed = 0;

  bool operator==(const SplitPlan&) const = default;
};

namespace detail {

// Round half away from zero; split quotas are specified as percentages and
// the ±1 tolerance is anchored on this rounding.
inline int64_t round_count(double x) { return static_cast<int64_t>(std::floor(x + 0.5)); }

struct SpeakerGroup {
  std::string key;
  std::vector<size_t> segment_indices;  // into the per-language segment list
};

// Picks a subset of speaker groups whose total segment count lands within
// ±1 of `target`, via a reachable-sums DP (exact, deterministic).  Returns
// indices into `groups`, preferring earlier groups on reconstruction so the
// seeded shuffle order decides ties.  Empty optional if unreachable.
inline std::optional<std::vector<size_t>> pick_groups_for_quota(
    const std::vector<SpeakerGroup>& groups, int64_t target) {
  int64_t total = 0;
  for (const auto& g : groups) total += static_cast<int64_t>(g.segment_indices.size());
  if (target <= 0) return std::vector<size_t>{};
  if (target > total) return std::nullopt;

  size_t n = groups.size();
  size_t w = static_cast<size_t>(total) + 1;
  // reach[i][s] = sums reachable using groups[i..)
  std::vector<std::vector<char>> reach(n + 1, std::vector<char>(w, 0));
  reach[n][0] = 1;
  for (size_t i = n; i-- > 0;) {
    int64_t sz = static_cast<int64_t>(groups[i].segment_indices.size());
    for (size_t s = 0; s < w; ++s) {
      reach[i][s] = reach[i + 1][s] ||
                    (static_cast<int64_t>(s) >= sz && reach[i + 1][s - static_cast<size_t>(sz)]);
    }
  }
  int64_t best = -1;
  // prefer rounding up so a quota of 1 cannot collapse to an empty split
  for (int64_t delta : {int64_t{0}, int64_t{1}, int64_t{-1}}) {
    int64_t cand = target + delta;
    if (cand >= 0 && cand <= total && reach[0][static_cast<size_t>(cand)]) {
      best = cand;
      break;
    }
  }
  if (best < 0) return std::nullopt;

  std::vector<size_t> chosen;
  int64_t remaining = best;
  for (size_t i = 0; i < n && remaining > 0; ++i) {
    int64_t sz = static_cast<int64_t>(groups[i].segment_indices.size());
    // take groups[i] whenever the remainder is still reachable afterwards
    if (remaining >= sz && reach[i + 1][static_cast<size_t>(remaining - sz)]) {
      chosen.push_back(i);
      remaining -= sz;
    }
  }
  return chosen;
}

}  // namespace detail

/// Builds the deterministic speaker-aware split plan.
///
/// Per in-set language the test set takes 5% of segments (±1) with
/// speaker-disjointness against the remaining 95%, which is then split
/// 90/10 into tdnn_train/tdnn_val.  Per out-of-set language backend_fit
/// takes 80% (±1) and test the rest, same disjointness rule.  Unknown
/// speakers fall back to per-utterance groups.
inline SplitPlan make_split(const std::vector<SegmentRef>& segments,
                            const LanguageRegistry& registry, uint64_t seed) {
  SplitPlan plan;
  plan.seed = seed;

  std::map<std::string, std::vector<SegmentRef>> by_lang;
  for (const auto& s : segments) {
    if (!registry.contains(s.language_code))
      throw Error(ErrorCode::config,
                  "segment language '" + s.language_code + "' not in registry");
    by_lang[s.language_code].push_back(s);
  }

  std::vector<std::string> failures;

  for (auto& [lang, segs] : by_lang) {
    bool is_in_set = registry.in_set_index(lang).has_value();

    // Stable base order, then seeded shuffle of speaker groups.
    std::sort(segs.begin(), segs.end(), [](const SegmentRef& a, const SegmentRef& b) {
      return std::tie(a.audio_path, a.segment_index) < std::tie(b.audio_path, b.segment_index);
    });

    std::map<std::string, std::vector<size_t>> group_map;
    for (size_t i = 0; i < segs.size(); ++i) {
      // unknown speaker: utterance-level fallback group
      std::string key = segs[i].speaker_id.empty() ? "\x01utt:" + segs[i].audio_path
                                                   : "\x02spk:" + segs[i].speaker_id;
      group_map[key].push_back(i);
    }
    std::vector<detail::SpeakerGroup> groups;
    groups.reserve(group_map.size());
    for (auto& [key, idx] : group_map) groups.push_back({key, std::move(idx)});
    Rng rng(seed, "split:" + lang);
    rng.shuffle(groups);

    int64_t n = static_cast<int64_t>(segs.size());
    if (static_cast<int64_t>(groups.size()) < 3 || n < 20) {
      failures.push_back(lang + " (" + std::to_string(groups.size()) + " speakers, " +
                         std::to_string(n) + " segments)");
      continue;
    }

    double train_frac = is_in_set ? 0.95 : 0.80;
    int64_t train_side_target = detail::round_count(train_frac * static_cast<double>(n));
    int64_t test_target = n - train_side_target;

    auto picked = detail::pick_groups_for_quota(groups, test_target);
    if (!picked) {
      failures.push_back(lang + " (no speaker-disjoint subset within +-1 of " +
                         std::to_string(test_target) + " test segments)");
      continue;
    }

    std::vector<char> in_test_group(groups.size(), 0);
    for (size_t g : *picked) in_test_group[g] = 1;

    std::vector<SegmentRef> train_side, test_side;
    for (size_t g = 0; g < groups.size(); ++g)
      for (size_t i : groups[g].segment_indices)
        (in_test_group[g] ? test_side : train_side).push_back(segs[i]);

    if (!is_in_set) {
      plan.backend_fit.insert(plan.backend_fit.end(), train_side.begin(), train_side.end());
      plan.test.insert(plan.test.end(), test_side.begin(), test_side.end());
      continue;
    }

    // 90/10 train/val within the train side, at segment granularity.
    Rng vrng(seed, "val:" + lang);
    vrng.shuffle(train_side);
    int64_t val_n = detail::round_count(0.10 * static_cast<double>(train_side.size()));
    for (size_t i = 0; i < train_side.size(); ++i)
      (static_cast<int64_t>(i) < val_n ? plan.tdnn_val : plan.tdnn_train)
          .push_back(train_side[i]);
    plan.test.insert(plan.test.end(), test_side.begin(), test_side.end());
  }

  if (!failures.empty()) {
    std::string msg = "insufficient data for split:";
    for (const auto& f : failures) msg += "\n  " + f;
    throw Error(ErrorCode::insufficient_data, msg);
  }

  auto canon = [](std::vector<SegmentRef>& v) {
    std::sort(v.begin(), v.end(), [](const SegmentRef& a, const SegmentRef& b) {
      return std::tie(a.language_code, a.audio_path, a.segment_index) <
             std::tie(b.language_code, b.audio_path, b.segment_index);
    });
  };
  canon(plan.tdnn_train);
  canon(plan.tdnn_val);
  canon(plan.backend_fit);
  canon(plan.test);
  return plan;
}

// ---------------------------------------------------------------------------
// Manifest: one segment per line, tab separated, diff-friendly.
// Header lines start with '#' and carry provenance (seed + config JSON).

inline void write_manifest(std::ostream& os, const SplitPlan& plan,
                           const std::string& config_json = "") {
  os << "# olid-manifest v1\n";
  os << "# seed=" << plan.seed << "\n";
  if (!config_json.empty()) os << "# config=" << config_json << "\n";
  auto dump = [&](const std::vector<SegmentRef>& v, SplitTag t) {
    for (const auto& s : v)
      os << s.audio_path << '\t' << s.segment_index << '\t' << split_tag_name(t) << '\t'
         << s.language_code << '\t' << (s.speaker_id.empty() ? "u" : s.speaker_id) << '\n';
  };
  dump(plan.tdnn_train, SplitTag::tdnn_train);
  dump(plan.tdnn_val, SplitTag::tdnn_val);
  dump(plan.backend_fit, SplitTag::backend_fit);
  dump(plan.test, SplitTag::test);
}

inline std::string manifest_to_string(const SplitPlan& plan, const std::string& config_json = "") {
  std::ostringstream os;
  write_manifest(os, plan, config_json);
  return os.str();
}

inline SplitPlan read_manifest(std::istream& is, std::string* config_json = nullptr) {
  SplitPlan plan;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# seed=", 0) == 0) plan.seed = std::stoull(line.substr(7));
      if (config_json && line.rfind("# config=", 0) == 0) *config_json = line.substr(9);
      continue;
    }
    std::vector<std::string> f;
    size_t start = 0;
    while (true) {
      auto pos = line.find('\t', start);
      if (pos == std::string::npos) {
        f.push_back(line.substr(start));
        break;
      }
      f.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    if (f.size() != 5) throw Error(ErrorCode::io, "manifest: bad line '" + line + "'");
    SegmentRef s;
    s.audio_path = f[0];
    s.segment_index = std::stoi(f[1]);
    s.language_code = f[3];
    s.speaker_id = (f[4] == "u") ? std::string() : f[4];
    switch (split_tag_from(f[2])) {
      case SplitTag::tdnn_train: plan.tdnn_train.push_back(std::move(s)); break;
      case SplitTag::tdnn_val: plan.tdnn_val.push_back(std::move(s)); break;
      case SplitTag::backend_fit: plan.backend_fit.push_back(std::move(s)); break;
      case SplitTag::test: plan.test.push_back(std::move(s)); break;
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Dataset scanning: one folder per language code, paired .wav/.txt.

struct ScanResult {
  std::vector<UtteranceMeta> utterances;
  std::vector<std::string> warnings;  // orphans, unparseable names
};

inline ScanResult scan_dataset(const fs::path& root) {
  if (!fs::is_directory(root))
    throw Error(ErrorCode::io, "dataset root is not a directory: " + root.string());
  ScanResult out;
  std::vector<fs::path> lang_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && valid_language_code(e.path().filename().string()))
      lang_dirs.push_back(e.path());
  std::sort(lang_dirs.begin(), lang_dirs.end());

  for (const auto& dir : lang_dirs) {
    std::vector<fs::path> wavs, txts;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      auto ext = e.path().extension().string();
      if (ext == ".wav") wavs.push_back(e.path());
      else if (ext == ".txt") txts.push_back(e.path());
    }
    std::sort(wavs.begin(), wavs.end());
    std::sort(txts.begin(), txts.end());

    std::set<std::string> wav_stems;
    for (const auto& w : wavs) wav_stems.insert(w.stem().string());
    for (const auto& t : txts)
      if (!wav_stems.count(t.stem().string()))
        out.warnings.push_back("orphan transcript (no .wav): " + t.string());

    for (const auto& w : wavs) {
      UtteranceMeta m;
      try {
        m = parse_filename(w.filename().string());
      } catch (const Error& e) {
        out.warnings.push_back(std::string("skipping: ") + e.what());
        continue;
      }
      if (m.language_code != dir.filename().string()) {
        out.warnings.push_back("skipping (folder/code mismatch): " + w.string());
        continue;
      }
      m.audio_path = w;
      fs::path txt = w;
      txt.replace_extension(".txt");
      if (fs::exists(txt)) m.transcript_path = txt;
      else out.warnings.push_back("missing transcript: " + w.string());
      out.utterances.push_back(std::move(m));
    }
  }
  return out;
}

}  // namespace olid

#endif  // OLID_CORPUS_HPP
