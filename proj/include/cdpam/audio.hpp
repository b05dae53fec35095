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

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <filesystem>

#include "cdpam/error.hpp"

namespace cdpam {

using Index = Eigen::Index;

inline constexpr int kCanonicalSampleRate = 16000;
inline constexpr Index kCanonicalClipSamples = 40000;

// Mono audio. Samples are nominally in [-1, 1]; the invariants (non-empty,
// finite, positive rate) are checked by validate().
struct Waveform {
  Eigen::VectorXd samples;
  int sample_rate_hz = kCanonicalSampleRate;

  Index size() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
  void validate() const;
};

Waveform read_wav(const std::filesystem::path& path);

// 16-bit PCM mono. Out-of-range samples are clamped.
void write_wav(const Waveform& w, const std::filesystem::path& path);

// Zero-pads at the end or truncates to exactly n samples.
Waveform fix_length(const Waveform& w, Index n);

Waveform apply_gain_db(const Waveform& w, double gain_db);

// Linear-interpolation resampler. Lossy: no anti-aliasing filter.
Waveform resample_linear(const Waveform& w, int target_rate_hz);

// Resamples (if needed) and fixes the length.
Waveform to_canonical(const Waveform& w, int sample_rate_hz, Index clip_samples);

template <typename Derived>
double rms(const Eigen::MatrixBase<Derived>& x) {
  if (x.size() == 0) throw PreconditionError("rms: empty input");
  return std::sqrt(x.squaredNorm() / static_cast<double>(x.size()));
}

inline double rms(const Waveform& w) { return rms(w.samples); }

inline double peak(const Waveform& w) {
  return w.samples.size() ? w.samples.cwiseAbs().maxCoeff() : 0.0;
}

inline double db_to_amplitude(double db) { return std::pow(10.0, db / 20.0); }

}  // namespace cdpam
