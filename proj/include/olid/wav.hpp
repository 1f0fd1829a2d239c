// olid/wav.hpp

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

#ifndef OLID_WAV_HPP
#define OLID_WAV_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "olid/common.hpp"

namespace olid {

struct AudioBuffer {
  std::vector<float> samples;  // mono, in [-1, 1]
  int sample_rate = 0;

  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

/// Reads a RIFF/WAVE file.  Only 16-bit integer PCM is accepted; anything
/// else (float, ADPCM, a-law...) is a DecodeError.  Multi-channel input is
/// downmixed by averaging.
inline AudioBuffer read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::io, "cannot open: " + path);

  auto fail = [&](const std::string& why) -> Error {
    return Error(ErrorCode::decode, path + ": " + why);
  };

  char riff[4];
  try {
    read_bytes(is, riff, 4);
  } catch (const Error&) {
    throw fail("not a RIFF file");
  }
  if (std::memcmp(riff, "RIFF", 4) != 0) throw fail("not a RIFF file");
  (void)read_u32(is);  // declared size; chunks are walked instead
  char wave[4];
  read_bytes(is, wave, 4);
  if (std::memcmp(wave, "WAVE", 4) != 0) throw fail("not a WAVE file");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  std::vector<char> data;
  bool have_data = false;

  while (is && !(have_fmt && have_data)) {
    char id[4];
    is.read(id, 4);
    if (is.gcount() != 4) break;
    uint32_t size = 0;
    try {
      size = read_u32(is);
    } catch (const Error&) {
      throw fail("truncated chunk header");
    }
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw fail("fmt chunk too small");
      format = read_pod<uint16_t>(is);
      channels = read_pod<uint16_t>(is);
      rate = read_u32(is);
      (void)read_u32(is);           // byte rate
      (void)read_pod<uint16_t>(is); // block align
      bits = read_pod<uint16_t>(is);
      is.seekg(size - 16 + (size & 1), std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data.resize(size);
      if (size) {
        is.read(data.data(), size);
        if (static_cast<uint32_t>(is.gcount()) != size) throw fail("truncated data chunk");
      }
      if (size & 1) is.seekg(1, std::ios::cur);
      have_data = true;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
    }
  }

  if (!have_fmt || !have_data) throw fail("missing fmt or data chunk");
  if (format != 1) throw fail("unsupported format tag " + std::to_string(format) +
                              " (only 16-bit integer PCM is accepted)");
  if (bits != 16) throw fail("unsupported bit depth " + std::to_string(bits));
  if (channels == 0 || rate == 0) throw fail("bad fmt fields");
  if (data.size() % (2u * channels) != 0) throw fail("data size not a frame multiple");

  size_t frames = data.size() / (2u * channels);
  AudioBuffer out;
  out.sample_rate = static_cast<int>(rate);
  out.samples.resize(frames);
  const auto* raw = reinterpret_cast<const int16_t*>(data.data());
  for (size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (unsigned c = 0; c < channels; ++c) acc += raw[i * channels + c];
    out.samples[i] = static_cast<float>(acc / (channels * 32768.0));
  }
  return out;
}

/// Writes mono 16-bit PCM.  Samples are clipped to [-1, 1).
inline void write_wav16(const std::string& path, const std::vector<float>& samples,
                        int sample_rate) {
  auto os = open_out(path);
  uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
  write_bytes(os, "RIFF", 4);
  write_u32(os, 36 + data_bytes);
  write_bytes(os, "WAVE", 4);
  write_bytes(os, "fmt ", 4);
  write_u32(os, 16);
  write_pod<uint16_t>(os, 1);  // PCM
  write_pod<uint16_t>(os, 1);  // mono
  write_u32(os, static_cast<uint32_t>(sample_rate));
  write_u32(os, static_cast<uint32_t>(sample_rate * 2));
  write_pod<uint16_t>(os, 2);
  write_pod<uint16_t>(os, 16);
  write_bytes(os, "data", 4);
  write_u32(os, data_bytes);
  for (float s : samples) {
    double v = std::round(std::clamp(static_cast<double>(s), -1.0, 1.0 - 1.0 / 32768.0) * 32768.0);
    write_pod<int16_t>(os, static_cast<int16_t>(v));
  }
}

/// Linear-interpolation resampler.  Output sample n sits at input position
/// n * src_rate / dst_rate.
inline AudioBuffer resample_linear(const AudioBuffer& in, int dst_rate) {
  if (in.sample_rate == dst_rate) return in;
  if (in.sample_rate <= 0 || dst_rate <= 0)
    throw Error(ErrorCode::config, "resample: nonpositive rate");
  AudioBuffer out;
  out.sample_rate = dst_rate;
  if (in.samples.empty()) return out;
  size_t n_out = static_cast<size_t>(
      std::floor(static_cast<double>(in.samples.size() - 1) * dst_rate / in.sample_rate)) + 1;
  out.samples.resize(n_out);
  double step = static_cast<double>(in.sample_rate) / dst_rate;
  for (size_t n = 0; n < n_out; ++n) {
    double pos = n * step;
    size_t i = static_cast<size_t>(pos);
    double frac = pos - static_cast<double>(i);
    if (i + 1 < in.samples.size())
      out.samples[n] = static_cast<float>((1.0 - frac) * in.samples[i] + frac * in.samples[i + 1]);
    else
      out.samples[n] = in.samples.back();
  }
  return out;
}

}  // namespace olid

#endif  // OLID_WAV_HPP
