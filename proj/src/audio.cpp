// Copyright 2026 The CDPAM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cdpam/audio.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace cdpam {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void put16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void put32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

struct FmtChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
  std::uint16_t block_align = 0;
};

double decode_sample(const unsigned char* p, const FmtChunk& fmt) {
  if (fmt.format == kFormatFloat) {
    if (fmt.bits == 32) {
      const std::uint32_t bits = le32(p);
      float f;
      std::memcpy(&f, &bits, sizeof f);
      return static_cast<double>(f);
    }
    if (fmt.bits == 64) {
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
      double d;
      std::memcpy(&d, &bits, sizeof d);
      return d;
    }
  } else {
    switch (fmt.bits) {
      case 8:
        return (static_cast<int>(p[0]) - 128) / 128.0;
      case 16:
        return static_cast<std::int16_t>(le16(p)) / 32768.0;
      case 24: {
        std::int32_t v = p[0] | (p[1] << 8) | (p[2] << 16);
        if (v & 0x800000) v -= 0x1000000;
        return v / 8388608.0;
      }
      case 32:
        return static_cast<std::int32_t>(le32(p)) / 2147483648.0;
    }
  }
  throw UnsupportedFormatError("wav: unsupported sample encoding");
}

}  // namespace

void Waveform::validate() const {
  if (samples.size() == 0) throw PreconditionError("waveform: empty samples");
  if (sample_rate_hz <= 0) throw PreconditionError("waveform: non-positive sample rate");
  if (!samples.allFinite()) throw PreconditionError("waveform: non-finite sample");
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("wav: cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError("wav: not a RIFF/WAVE file: " + name);

  FmtChunk fmt;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (size > bytes.size() - body) throw FormatError("wav: truncated chunk in " + name);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError("wav: short fmt chunk in " + name);
      const unsigned char* f = bytes.data() + body;
      fmt.format = le16(f);
      fmt.channels = le16(f + 2);
      fmt.sample_rate = le32(f + 4);
      fmt.block_align = le16(f + 12);
      fmt.bits = le16(f + 14);
      if (fmt.format == kFormatExtensible) {
        if (size < 26) throw FormatError("wav: short extensible fmt chunk in " + name);
        fmt.format = le16(f + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw FormatError("wav: missing fmt chunk in " + name);
  if (data == nullptr) throw FormatError("wav: missing data chunk in " + name);
  if (fmt.format != kFormatPcm && fmt.format != kFormatFloat)
    throw UnsupportedFormatError("wav: unsupported format tag " + std::to_string(fmt.format));
  const bool int_ok = fmt.format == kFormatPcm &&
                      (fmt.bits == 8 || fmt.bits == 16 || fmt.bits == 24 || fmt.bits == 32);
  const bool float_ok = fmt.format == kFormatFloat && (fmt.bits == 32 || fmt.bits == 64);
  if (!int_ok && !float_ok)
    throw UnsupportedFormatError("wav: unsupported bit depth " + std::to_string(fmt.bits));
  if (fmt.channels == 0 || fmt.sample_rate == 0)
    throw FormatError("wav: invalid channel count or sample rate in " + name);
  const std::size_t bytes_per_sample = fmt.bits / 8;
  const std::size_t frame = bytes_per_sample * fmt.channels;
  const std::size_t frames = data_size / frame;
  if (frames == 0) throw FormatError("wav: no sample frames in " + name);

  Waveform w;
  w.sample_rate_hz = static_cast<int>(fmt.sample_rate);
  w.samples.resize(static_cast<Index>(frames));
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < fmt.channels; ++c)
      acc += decode_sample(data + i * frame + c * bytes_per_sample, fmt);
    w.samples[static_cast<Index>(i)] = acc / fmt.channels;
  }
  if (!w.samples.allFinite()) throw FormatError("wav: non-finite samples in " + name);
  return w;
}

void write_wav(const Waveform& w, const std::filesystem::path& path) {
  w.validate();
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  std::vector<unsigned char> out;
  out.reserve(44 + 2 * static_cast<std::size_t>(n));
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put32(out, 36 + 2 * n);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(out, 16);
  put16(out, kFormatPcm);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(w.sample_rate_hz));
  put32(out, static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
  put16(out, 2);
  put16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put32(out, 2 * n);
  for (Index i = 0; i < w.samples.size(); ++i) {
    const double q = std::clamp(std::round(w.samples[i] * 32768.0), -32768.0, 32767.0);
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("wav: cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("wav: write failed for " + path.string());
}

Waveform fix_length(const Waveform& w, Index n) {
  if (n <= 0) throw PreconditionError("fix_length: target length must be positive");
  Waveform out{Eigen::VectorXd::Zero(n), w.sample_rate_hz};
  const Index keep = std::min(n, w.samples.size());
  out.samples.head(keep) = w.samples.head(keep);
  return out;
}

Waveform apply_gain_db(const Waveform& w, double gain_db) {
  if (!std::isfinite(gain_db)) throw PreconditionError("apply_gain_db: non-finite gain");
  return Waveform{w.samples * db_to_amplitude(gain_db), w.sample_rate_hz};
}

Waveform resample_linear(const Waveform& w, int target_rate_hz) {
  w.validate();
  if (target_rate_hz <= 0) throw PreconditionError("resample: non-positive target rate");
  if (target_rate_hz == w.sample_rate_hz) return w;
  const double ratio = static_cast<double>(w.sample_rate_hz) / target_rate_hz;
  const auto n = std::max<Index>(
      1, static_cast<Index>(std::floor(static_cast<double>(w.size()) / ratio)));
  Waveform out{Eigen::VectorXd(n), target_rate_hz};
  const Index last = w.size() - 1;
  for (Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * ratio;
    const Index i0 = std::min(static_cast<Index>(t), last);
    const Index i1 = std::min(i0 + 1, last);
    const double frac = t - static_cast<double>(i0);
    out.samples[i] = (1.0 - frac) * w.samples[i0] + frac * w.samples[i1];
  }
  return out;
}

Waveform to_canonical(const Waveform& w, int sample_rate_hz, Index clip_samples) {
  return fix_length(resample_linear(w, sample_rate_hz), clip_samples);
}

}  // namespace cdpam
