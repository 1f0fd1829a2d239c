// olid/features.hpp

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

#ifndef OLID_FEATURES_HPP
#define OLID_FEATURES_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "olid/common.hpp"
#include "olid/corpus.hpp"

namespace olid {

using MatrixXfRow = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixXdRow = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MfccConfig {
  int n_coeffs = 13;
  int n_mel_bins = 23;
  int fft_size = 512;
  double pre_emphasis = 0.97;
  double frame_length_ms = 25.0;
  double frame_shift_ms = 10.0;
  double mel_low_hz = 20.0;
  double mel_high_hz = 7600.0;
  double lifter = 22.0;  // 0 disables
  double log_floor = 1e-10;

  int frame_length_samples(int rate) const {
    return static_cast<int>(std::lround(frame_length_ms * rate / 1000.0));
  }
  int frame_shift_samples(int rate) const {
    return static_cast<int>(std::lround(frame_shift_ms * rate / 1000.0));
  }
  int num_frames(size_t n_samples, int rate) const {
    int len = frame_length_samples(rate), shift = frame_shift_samples(rate);
    if (static_cast<int64_t>(n_samples) < len) return 0;
    return static_cast<int>((static_cast<int64_t>(n_samples) - len) / shift) + 1;
  }
  void validate(int rate) const {
    if (n_coeffs < 1 || n_coeffs > n_mel_bins)
      throw Error(ErrorCode::config, "mfcc: need 1 <= n_coeffs <= n_mel_bins");
    if (fft_size < frame_length_samples(rate))
      throw Error(ErrorCode::config, "mfcc: fft_size " + std::to_string(fft_size) +
                                         " smaller than frame of " +
                                         std::to_string(frame_length_samples(rate)) + " samples");
    if ((fft_size & (fft_size - 1)) != 0)
      throw Error(ErrorCode::config, "mfcc: fft_size must be a power of two");
    if (mel_high_hz <= mel_low_hz || mel_high_hz > rate / 2.0)
      throw Error(ErrorCode::config, "mfcc: bad mel range");
  }
};

/// Per-segment feature sequence: columns 0-12 MFCC, 13 voicing score,
/// 14 log-pitch, 15 delta-log-pitch.
struct FeatureMatrix {
  MatrixXfRow frames;
  float frame_shift_ms = 10.0f;
  float frame_length_ms = 25.0f;
  std::string provenance;  // config fingerprint carried by cache files

  int rows() const { return static_cast<int>(frames.rows()); }
  int cols() const { return static_cast<int>(frames.cols()); }
};

// ---------------------------------------------------------------------------
// FFT: iterative radix-2, power-of-two sizes only.

class Fft {
 public:
  explicit Fft(int n) : n_(n) {
    twiddle_.resize(n_ / 2);
    for (int k = 0; k < n_ / 2; ++k)
      twiddle_[k] = std::polar(1.0, -2.0 * M_PI * k / n_);
    bitrev_.resize(n_);
    int log2n = 0;
    while ((1 << log2n) < n_) ++log2n;
    for (int i = 0; i < n_; ++i) {
      int r = 0;
      for (int b = 0; b < log2n; ++b)
        if (i & (1 << b)) r |= 1 << (log2n - 1 - b);
      bitrev_[i] = r;
    }
  }

  void forward(std::vector<std::complex<double>>& x) const {
    for (int i = 0; i < n_; ++i)
      if (bitrev_[i] > i) std::swap(x[i], x[bitrev_[i]]);
    for (int len = 2; len <= n_; len <<= 1) {
      int half = len / 2, step = n_ / len;
      for (int start = 0; start < n_; start += len)
        for (int k = 0; k < half; ++k) {
          auto odd = x[start + k + half] * twiddle_[k * step];
          x[start + k + half] = x[start + k] - odd;
          x[start + k] += odd;
        }
    }
  }

 private:
  int n_;
  std::vector<std::complex<double>> twiddle_;
  std::vector<int> bitrev_;
};

// ---------------------------------------------------------------------------
// Mel filterbank and DCT

inline double hz_to_mel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

/// Triangular filters, one row per mel bin, over [0, nyquist] FFT bins.
class MelFilterbank {
 public:
  MelFilterbank(const MfccConfig& cfg, int rate) {
    int n_bins = cfg.fft_size / 2 + 1;
    weights_ = MatrixXdRow::Zero(cfg.n_mel_bins, n_bins);
    centers_hz_.resize(cfg.n_mel_bins);
    double lo = hz_to_mel(cfg.mel_low_hz), hi = hz_to_mel(cfg.mel_high_hz);
    double step = (hi - lo) / (cfg.n_mel_bins + 1);
    for (int j = 0; j < cfg.n_mel_bins; ++j) {
      double left = lo + j * step, center = lo + (j + 1) * step, right = lo + (j + 2) * step;
      centers_hz_[j] = mel_to_hz(center);
      for (int k = 0; k < n_bins; ++k) {
        double mel = hz_to_mel(static_cast<double>(k) * rate / cfg.fft_size);
        double w = 0.0;
        if (mel > left && mel < right)
          w = (mel <= center) ? (mel - left) / (center - left) : (right - mel) / (right - center);
        weights_(j, k) = w;
      }
    }
  }

  const MatrixXdRow& weights() const { return weights_; }
  const std::vector<double>& centers_hz() const { return centers_hz_; }

 private:
  MatrixXdRow weights_;
  std::vector<double> centers_hz_;
};

/// Orthonormal DCT-II matrix (n_out x n_in); its transpose is the inverse.
inline MatrixXdRow dct_matrix(int n_out, int n_in) {
  MatrixXdRow d(n_out, n_in);
  for (int k = 0; k < n_out; ++k) {
    double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / n_in);
    for (int m = 0; m < n_in; ++m)
      d(k, m) = scale * std::cos(M_PI * k * (2 * m + 1) / (2.0 * n_in));
  }
  return d;
}

// ---------------------------------------------------------------------------
// MFCC

/// Per-frame pipeline: pre-emphasis -> Hamming window -> FFT -> power
/// spectrum -> mel energies -> floored log -> orthonormal DCT-II ->
/// sinusoidal liftering.  Pre-emphasis is applied inside each frame so that
/// shifting the input by a whole frame shift reproduces interior frames
/// exactly.
inline MatrixXdRow extract_mfcc_f64(std::span<const float> samples, int rate,
                                    const MfccConfig& cfg) {
  cfg.validate(rate);
  int frame_len = cfg.frame_length_samples(rate);
  int shift = cfg.frame_shift_samples(rate);
  int n_frames = cfg.num_frames(samples.size(), rate);

  Fft fft(cfg.fft_size);
  MelFilterbank mel(cfg, rate);
  MatrixXdRow dct = dct_matrix(cfg.n_coeffs, cfg.n_mel_bins);

  std::vector<double> window(frame_len);
  for (int i = 0; i < frame_len; ++i)
    window[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (frame_len - 1));

  std::vector<double> lifter(cfg.n_coeffs, 1.0);
  if (cfg.lifter > 0)
    for (int k = 0; k < cfg.n_coeffs; ++k)
      lifter[k] = 1.0 + 0.5 * cfg.lifter * std::sin(M_PI * k / cfg.lifter);

  MatrixXdRow out(n_frames, cfg.n_coeffs);
  std::vector<std::complex<double>> buf(cfg.fft_size);
  std::vector<double> frame(frame_len);
  Eigen::VectorXd power(cfg.fft_size / 2 + 1);

  for (int t = 0; t < n_frames; ++t) {
    const float* src = samples.data() + static_cast<size_t>(t) * shift;
    for (int i = 0; i < frame_len; ++i) frame[i] = src[i];
    for (int i = frame_len - 1; i > 0; --i) frame[i] -= cfg.pre_emphasis * frame[i - 1];
    frame[0] *= 1.0 - cfg.pre_emphasis;

    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (int i = 0; i < frame_len; ++i) buf[i] = frame[i] * window[i];
    fft.forward(buf);
    for (int k = 0; k <= cfg.fft_size / 2; ++k) power[k] = std::norm(buf[k]);

    Eigen::VectorXd energies = mel.weights() * power;
    for (int j = 0; j < cfg.n_mel_bins; ++j)
      energies[j] = std::log(std::max(energies[j], cfg.log_floor));
    Eigen::VectorXd ceps = dct * energies;
    for (int k = 0; k < cfg.n_coeffs; ++k) out(t, k) = ceps[k] * lifter[k];
  }
  return out;
}

/// Mel filterbank log-energies on the MFCC frame grid (no DCT, no lifter).
/// Used by tests that reason about the filterbank directly.
inline MatrixXdRow extract_log_mel_energies(std::span<const float> samples, int rate,
                                            const MfccConfig& cfg) {
  MfccConfig c = cfg;
  c.n_coeffs = c.n_mel_bins;
  c.lifter = 0.0;
  MatrixXdRow ceps = extract_mfcc_f64(samples, rate, c);
  MatrixXdRow dct = dct_matrix(c.n_mel_bins, c.n_mel_bins);
  // orthonormal, so inverting is the transpose
  MatrixXdRow energies = ceps * dct;  // (T x M) * (M x M): rows are ceps, D^T applied per row
  return energies;
}

// ---------------------------------------------------------------------------
// Pitch: normalized autocorrelation, 60-400 Hz search band.

struct PitchConfig {
  double min_hz = 60.0;
  double max_hz = 400.0;
  double voiced_threshold = 0.5;  // voicing score at/above which a frame anchors interpolation
  double fallback_hz = 100.0;     // when no frame in the segment is voiced
  int delta_window = 2;
};

namespace feat_detail {

// Smallest-lag local maximum within 7% of the global peak; guards against
// picking a multiple of the true period.
inline int pick_lag(const std::vector<double>& ncc, int lag_min) {
  int n = static_cast<int>(ncc.size());
  double vmax = -1.0;
  for (double v : ncc) vmax = std::max(vmax, v);
  double gate = vmax - std::max(0.07 * std::abs(vmax), 0.02);
  int best = -1;
  for (int i = 0; i < n; ++i) {
    bool local_max = (i == 0 || ncc[i] >= ncc[i - 1]) && (i + 1 >= n || ncc[i] >= ncc[i + 1]);
    if (local_max && ncc[i] >= gate) {
      best = i;
      break;
    }
  }
  if (best < 0) {
    for (int i = 0; i < n; ++i)
      if (ncc[i] == vmax) {
        best = i;
        break;
      }
  }
  return best + lag_min;
}

inline double parabolic_refine(const std::vector<double>& ncc, int lag, int lag_min) {
  int i = lag - lag_min;
  if (i <= 0 || i + 1 >= static_cast<int>(ncc.size())) return lag;
  double denom = ncc[i - 1] - 2.0 * ncc[i] + ncc[i + 1];
  if (std::abs(denom) < 1e-12) return lag;
  double delta = 0.5 * (ncc[i - 1] - ncc[i + 1]) / denom;
  return lag + std::clamp(delta, -1.0, 1.0);
}

}  // namespace feat_detail

/// Per frame: (voicing score, log-F0, delta-log-F0).  Voicing is the maximum
/// normalized autocorrelation over the lag band, clamped to [0,1].  Unvoiced
/// frames get F0 linearly interpolated from the nearest voiced frames
/// (constant extrapolation at the edges, 100 Hz if the whole segment is
/// unvoiced); the delta uses a +-2 frame regression window.
inline MatrixXdRow extract_pitch_f64(std::span<const float> samples, int rate,
                                     const MfccConfig& grid, const PitchConfig& pc = {}) {
  int frame_len = grid.frame_length_samples(rate);
  int shift = grid.frame_shift_samples(rate);
  int n_frames = grid.num_frames(samples.size(), rate);

  int lag_min = std::max(2, static_cast<int>(std::floor(rate / pc.max_hz)));
  int lag_max = std::min(frame_len - 32, static_cast<int>(std::ceil(rate / pc.min_hz)));

  MatrixXdRow out = MatrixXdRow::Zero(n_frames, 3);
  std::vector<double> f0(n_frames, 0.0);
  std::vector<char> voiced(n_frames, 0);

  std::vector<double> x(frame_len), cum2(frame_len + 1);
  std::vector<double> ncc;

  for (int t = 0; t < n_frames; ++t) {
    const float* src = samples.data() + static_cast<size_t>(t) * shift;
    for (int i = 0; i < frame_len; ++i) x[i] = src[i];

    cum2[0] = 0.0;
    for (int i = 0; i < frame_len; ++i) cum2[i + 1] = cum2[i] + x[i] * x[i];

    double score = 0.0;
    double period = 0.0;
    if (lag_max > lag_min && cum2[frame_len] > 0.0) {
      ncc.assign(static_cast<size_t>(lag_max - lag_min + 1), -1.0);
      for (int lag = lag_min; lag <= lag_max; ++lag) {
        int m = frame_len - lag;
        double dot = 0.0;
        for (int i = 0; i < m; ++i) dot += x[i] * x[i + lag];
        double e1 = cum2[m];
        double e2 = cum2[frame_len] - cum2[lag];
        double denom = std::sqrt(e1 * e2);
        ncc[static_cast<size_t>(lag - lag_min)] = denom > 1e-20 ? dot / denom : 0.0;
      }
      int lag = feat_detail::pick_lag(ncc, lag_min);
      period = feat_detail::parabolic_refine(ncc, lag, lag_min);
      score = std::clamp(ncc[static_cast<size_t>(lag - lag_min)], 0.0, 1.0);
    }
    out(t, 0) = score;
    if (score >= pc.voiced_threshold && period > 0.0) {
      voiced[t] = 1;
      f0[t] = rate / period;
    }
  }

  // fill unvoiced frames
  std::vector<int> anchors;
  for (int t = 0; t < n_frames; ++t)
    if (voiced[t]) anchors.push_back(t);
  if (anchors.empty()) {
    std::fill(f0.begin(), f0.end(), pc.fallback_hz);
  } else {
    for (int t = 0; t < n_frames; ++t) {
      if (voiced[t]) continue;
      auto it = std::lower_bound(anchors.begin(), anchors.end(), t);
      if (it == anchors.begin()) f0[t] = f0[anchors.front()];
      else if (it == anchors.end()) f0[t] = f0[anchors.back()];
      else {
        int hi = *it, lo = *(it - 1);
        double w = static_cast<double>(t - lo) / (hi - lo);
        f0[t] = (1.0 - w) * f0[lo] + w * f0[hi];
      }
    }
  }

  std::vector<double> logf0(n_frames);
  for (int t = 0; t < n_frames; ++t) logf0[t] = std::log(f0[t]);

  int W = pc.delta_window;
  double norm = 0.0;
  for (int k = 1; k <= W; ++k) norm += 2.0 * k * k;
  for (int t = 0; t < n_frames; ++t) {
    out(t, 1) = logf0[t];
    double acc = 0.0;
    for (int k = 1; k <= W; ++k) {
      int hi = std::min(t + k, n_frames - 1);
      int lo = std::max(t - k, 0);
      acc += k * (logf0[hi] - logf0[lo]);
    }
    out(t, 2) = n_frames > 1 ? acc / norm : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Public float-facing API

inline MatrixXfRow extract_mfcc(const AudioSegment& seg, const MfccConfig& cfg) {
  if (seg.samples.empty()) throw Error(ErrorCode::empty_input, "empty segment");
  return extract_mfcc_f64(seg.samples, seg.sample_rate, cfg).cast<float>();
}

inline MatrixXfRow extract_pitch(const AudioSegment& seg, const MfccConfig& grid) {
  if (seg.samples.empty()) throw Error(ErrorCode::empty_input, "empty segment");
  return extract_pitch_f64(seg.samples, seg.sample_rate, grid).cast<float>();
}

/// 13 MFCC + 3 pitch columns on the identical frame grid.
inline FeatureMatrix extract_features(const AudioSegment& seg, const MfccConfig& cfg) {
  if (seg.samples.empty()) throw Error(ErrorCode::empty_input, "empty segment");
  MatrixXdRow mfcc = extract_mfcc_f64(seg.samples, seg.sample_rate, cfg);
  MatrixXdRow pitch = extract_pitch_f64(seg.samples, seg.sample_rate, cfg);
  FeatureMatrix fm;
  fm.frame_shift_ms = static_cast<float>(cfg.frame_shift_ms);
  fm.frame_length_ms = static_cast<float>(cfg.frame_length_ms);
  fm.frames.resize(mfcc.rows(), mfcc.cols() + pitch.cols());
  fm.frames.leftCols(mfcc.cols()) = mfcc.cast<float>();
  fm.frames.rightCols(pitch.cols()) = pitch.cast<float>();
  return fm;
}

// ---------------------------------------------------------------------------
// Feature file: magic + version + T + dim + frame params + row-major f32.

inline void write_feature_file(std::ostream& os, const FeatureMatrix& fm) {
  write_bytes(os, "OFEA", 4);
  write_u32(os, 1);
  write_u32(os, static_cast<uint32_t>(fm.frames.rows()));
  write_u32(os, static_cast<uint32_t>(fm.frames.cols()));
  write_f32(os, fm.frame_shift_ms);
  write_f32(os, fm.frame_length_ms);
  write_string(os, fm.provenance);
  write_bytes(os, fm.frames.data(), sizeof(float) * fm.frames.size());
}

inline void write_feature_file(const std::string& path, const FeatureMatrix& fm) {
  auto os = open_out(path);
  write_feature_file(os, fm);
}

inline FeatureMatrix read_feature_file(std::istream& is) {
  expect_magic(is, "OFEA", "feature file");
  uint32_t version = read_u32(is);
  if (version != 1)
    throw Error(ErrorCode::version_mismatch,
                "feature file: unsupported version " + std::to_string(version));
  uint32_t rows = read_u32(is), cols = read_u32(is);
  FeatureMatrix fm;
  fm.frame_shift_ms = read_f32(is);
  fm.frame_length_ms = read_f32(is);
  fm.provenance = read_string(is);
  fm.frames.resize(rows, cols);
  if (rows * cols) read_bytes(is, fm.frames.data(), sizeof(float) * rows * cols);
  return fm;
}

inline FeatureMatrix read_feature_file(const std::string& path) {
  auto is = open_in(path);
  return read_feature_file(is);
}

/// Header-only probe used by the cache layer to decide whether a feature file
/// matches the current configuration without loading the payload.
inline std::string read_feature_provenance(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "OFEA", "feature file");
  uint32_t version = read_u32(is);
  if (version != 1)
    throw Error(ErrorCode::version_mismatch,
                "feature file: unsupported version " + std::to_string(version));
  read_u32(is);
  read_u32(is);
  read_f32(is);
  read_f32(is);
  return read_string(is);
}

}  // namespace olid

#endif  // OLID_FEATURES_HPP
