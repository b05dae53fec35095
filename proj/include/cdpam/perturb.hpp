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

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cdpam/audio.hpp"
#include "json.hpp"

namespace cdpam {

enum class NoiseColor { kWhite, kPink };

enum class Family { kNoise, kReverb, kEq, kCompression, kDropouts, kPops };

inline constexpr std::array<Family, 6> kAllFamilies = {
    Family::kNoise, Family::kReverb,   Family::kEq,
    Family::kCompression, Family::kDropouts, Family::kPops};

inline constexpr int kEqBands = 8;
// Octave band centres, 62.5 Hz .. 8 kHz.
inline constexpr std::array<double, kEqBands> kEqCentersHz = {62.5, 125.0,  250.0,  500.0,
                                                              1000.0, 2000.0, 4000.0, 8000.0};

std::string family_name(Family f);
Family family_from_name(const std::string& name);

// Parameter record for one acoustic condition. Absent fields mean the family
// is not applied.
struct PerturbSpec {
  std::optional<double> noise_snr_db;
  NoiseColor noise_color = NoiseColor::kWhite;
  std::optional<double> reverb_rt60_s;
  std::optional<std::array<double, kEqBands>> eq_gains_db;
  std::optional<int> mulaw_bits;
  std::optional<double> dropout_rate;
  std::optional<double> pop_rate;
  std::uint64_t seed = 0;

  bool has(Family f) const;
  std::vector<Family> families() const;
  // Throws PreconditionError when empty or out of range.
  void validate() const;

  bool operator==(const PerturbSpec&) const = default;
};

void to_json(nlohmann::json& j, const PerturbSpec& s);
void from_json(const nlohmann::json& j, PerturbSpec& s);

// Sampling ranges and severity normalisation. The reverb severity scale starts
// at rt60_min_s; shorter (still valid) RT60 values have severity 0.
struct PerturbRanges {
  double snr_min_db = 0.0, snr_max_db = 40.0;
  double rt60_min_s = 0.05, rt60_max_s = 2.0;
  double eq_max_db = 12.0;
  int bits_min = 4, bits_max = 8;
  double dropout_max = 0.1;
  double pop_max = 10.0;
};

// Per-family weights for magnitude(); equal by default.
struct SeverityWeights {
  std::array<double, 6> weight = {1, 1, 1, 1, 1, 1};
};

// Seed used for a family's random draws inside apply().
std::uint64_t family_seed(const PerturbSpec& spec, Family f);

// Seeded noise scaled so that 20 log10(rms(w) / rms(noise)) == snr_db.
Eigen::VectorXd make_noise(const Waveform& w, double snr_db, NoiseColor color,
                           std::uint64_t seed);
Waveform apply_noise(const Waveform& w, double snr_db, NoiseColor color, std::uint64_t seed);

// Exponential decay envelope reaching -60 dB at rt60_s.
double reverb_envelope(double t_s, double rt60_s);
Eigen::VectorXd impulse_response(double rt60_s, int sample_rate_hz, std::uint64_t seed);
Waveform apply_reverb(const Waveform& w, double rt60_s, std::uint64_t seed);

// Cascade of peaking biquads on the octave bands. Bands at or above 0.45 fs
// are centred at 0.45 fs.
Waveform apply_eq(const Waveform& w, const std::array<double, kEqBands>& gains_db);

// mu-law (mu = 255) companding quantised to 2^bits levels and expanded back.
Waveform apply_compression(const Waveform& w, int bits);

Waveform apply_dropouts(const Waveform& w, double rate, std::uint64_t seed);
Waveform apply_pops(const Waveform& w, double rate_per_s, std::uint64_t seed);

// Applies present families in the order reverb, eq, compression, noise,
// dropouts, pops.
Waveform apply(const PerturbSpec& spec, const Waveform& w);

PerturbSpec sample_spec(std::uint64_t seed, const std::vector<Family>& families,
                        const PerturbRanges& ranges = {});

// Normalised severity of one family in [0, 1]; 0 when absent.
double severity(const PerturbSpec& spec, Family f, const PerturbRanges& ranges = {});

// Weighted mean severity over present families, in [0, 1].
double magnitude(const PerturbSpec& spec, const PerturbRanges& ranges = {},
                 const SeverityWeights& weights = {});

// Spec for the given families with every family at severity `level`. Integer
// parameters are rounded, so magnitude() of the result can differ slightly.
PerturbSpec spec_at_severity(const std::vector<Family>& families, double level,
                             std::uint64_t seed, const PerturbRanges& ranges = {});

}  // namespace cdpam
