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

#include "cdpam/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <unsupported/Eigen/FFT>

#include "cdpam/rng.hpp"

namespace cdpam {

namespace {

constexpr double kMu = 255.0;

void require(bool ok, const std::string& what) {
  if (!ok) throw PreconditionError(what);
}

Index next_pow2(Index n) {
  Index p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Linear convolution truncated to the first `keep` samples.
Eigen::VectorXd convolve_truncated(const Eigen::VectorXd& x, const Eigen::VectorXd& h,
                                   Index keep) {
  const Index n = next_pow2(x.size() + h.size() - 1);
  std::vector<double> xa(static_cast<std::size_t>(n), 0.0), ha(static_cast<std::size_t>(n), 0.0);
  std::copy(x.data(), x.data() + x.size(), xa.begin());
  std::copy(h.data(), h.data() + h.size(), ha.begin());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> xf, hf;
  fft.fwd(xf, xa);
  fft.fwd(hf, ha);
  for (std::size_t i = 0; i < xf.size(); ++i) xf[i] *= hf[i];
  std::vector<double> y;
  fft.inv(y, xf);
  Eigen::VectorXd out(keep);
  for (Index i = 0; i < keep; ++i) out[i] = y[static_cast<std::size_t>(i)];
  return out;
}

struct Biquad {
  double b0, b1, b2, a1, a2;
};

Biquad peaking(double center_hz, double gain_db, double q, int fs) {
  const double a = std::pow(10.0, gain_db / 40.0);
  const double w0 = 2.0 * std::numbers::pi * center_hz / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double c = std::cos(w0);
  const double a0 = 1.0 + alpha / a;
  return {(1.0 + alpha * a) / a0, -2.0 * c / a0, (1.0 - alpha * a) / a0, -2.0 * c / a0,
          (1.0 - alpha / a) / a0};
}

void run_biquad(const Biquad& f, Eigen::VectorXd& x) {
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (Index i = 0; i < x.size(); ++i) {
    const double in = x[i];
    const double y = f.b0 * in + f.b1 * x1 + f.b2 * x2 - f.a1 * y1 - f.a2 * y2;
    x2 = x1;
    x1 = in;
    y2 = y1;
    y1 = y;
    x[i] = y;
  }
}

double unit(double v, double lo, double hi) { return std::clamp((v - lo) / (hi - lo), 0.0, 1.0); }

}  // namespace

std::string family_name(Family f) {
  switch (f) {
    case Family::kNoise: return "noise";
    case Family::kReverb: return "reverb";
    case Family::kEq: return "eq";
    case Family::kCompression: return "compression";
    case Family::kDropouts: return "dropouts";
    case Family::kPops: return "pops";
  }
  return "unknown";
}

Family family_from_name(const std::string& name) {
  for (Family f : kAllFamilies)
    if (family_name(f) == name) return f;
  throw DataError("unknown perturbation family: " + name);
}

bool PerturbSpec::has(Family f) const {
  switch (f) {
    case Family::kNoise: return noise_snr_db.has_value();
    case Family::kReverb: return reverb_rt60_s.has_value();
    case Family::kEq: return eq_gains_db.has_value();
    case Family::kCompression: return mulaw_bits.has_value();
    case Family::kDropouts: return dropout_rate.has_value();
    case Family::kPops: return pop_rate.has_value();
  }
  return false;
}

std::vector<Family> PerturbSpec::families() const {
  std::vector<Family> out;
  for (Family f : kAllFamilies)
    if (has(f)) out.push_back(f);
  return out;
}

void PerturbSpec::validate() const {
  require(!families().empty(), "perturb spec: no family present");
  if (noise_snr_db) require(std::isfinite(*noise_snr_db), "perturb spec: non-finite snr");
  if (reverb_rt60_s)
    require(*reverb_rt60_s > 0.0 && *reverb_rt60_s <= 2.0, "perturb spec: rt60 outside (0, 2]");
  if (eq_gains_db)
    for (double g : *eq_gains_db)
      require(g >= -12.0 && g <= 12.0, "perturb spec: eq gain outside [-12, 12] dB");
  if (mulaw_bits) require(*mulaw_bits >= 4 && *mulaw_bits <= 8, "perturb spec: bits outside [4, 8]");
  if (dropout_rate)
    require(*dropout_rate >= 0.0 && *dropout_rate <= 0.1, "perturb spec: dropout rate outside [0, 0.1]");
  if (pop_rate) require(*pop_rate >= 0.0 && *pop_rate <= 10.0, "perturb spec: pop rate outside [0, 10]");
}

void to_json(nlohmann::json& j, const PerturbSpec& s) {
  j = nlohmann::json::object();
  if (s.noise_snr_db) {
    j["noise_snr_db"] = *s.noise_snr_db;
    j["noise_color"] = s.noise_color == NoiseColor::kPink ? "pink" : "white";
  }
  if (s.reverb_rt60_s) j["reverb_rt60_s"] = *s.reverb_rt60_s;
  if (s.eq_gains_db) j["eq_gains_db"] = *s.eq_gains_db;
  if (s.mulaw_bits) j["mulaw_bits"] = *s.mulaw_bits;
  if (s.dropout_rate) j["dropout_rate"] = *s.dropout_rate;
  if (s.pop_rate) j["pop_rate"] = *s.pop_rate;
  j["seed"] = s.seed;
}

void from_json(const nlohmann::json& j, PerturbSpec& s) {
  s = PerturbSpec{};
  try {
    if (j.contains("noise_snr_db")) s.noise_snr_db = j.at("noise_snr_db").get<double>();
    if (j.contains("noise_color")) {
      const auto c = j.at("noise_color").get<std::string>();
      if (c != "white" && c != "pink") throw DataError("perturb spec: unknown noise color " + c);
      s.noise_color = c == "pink" ? NoiseColor::kPink : NoiseColor::kWhite;
    }
    if (j.contains("reverb_rt60_s")) s.reverb_rt60_s = j.at("reverb_rt60_s").get<double>();
    if (j.contains("eq_gains_db")) s.eq_gains_db = j.at("eq_gains_db").get<std::array<double, kEqBands>>();
    if (j.contains("mulaw_bits")) s.mulaw_bits = j.at("mulaw_bits").get<int>();
    if (j.contains("dropout_rate")) s.dropout_rate = j.at("dropout_rate").get<double>();
    if (j.contains("pop_rate")) s.pop_rate = j.at("pop_rate").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("perturb spec: ") + e.what());
  }
}

std::uint64_t family_seed(const PerturbSpec& spec, Family f) {
  return derive_seed(spec.seed, {static_cast<std::uint64_t>(f)});
}

Eigen::VectorXd make_noise(const Waveform& w, double snr_db, NoiseColor color,
                           std::uint64_t seed) {
  w.validate();
  const double signal = rms(w);
  require(signal > 0.0, "apply_noise: silent input");
  require(std::isfinite(snr_db), "apply_noise: non-finite snr");
  Rng rng(seed);
  Eigen::VectorXd n(w.size());
  if (color == NoiseColor::kWhite) {
    for (Index i = 0; i < n.size(); ++i) n[i] = rng.normal();
  } else {
    // Paul Kellet's refined pink filter.
    double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
    for (Index i = 0; i < n.size(); ++i) {
      const double white = rng.normal();
      b0 = 0.99886 * b0 + white * 0.0555179;
      b1 = 0.99332 * b1 + white * 0.0750759;
      b2 = 0.96900 * b2 + white * 0.1538520;
      b3 = 0.86650 * b3 + white * 0.3104856;
      b4 = 0.55000 * b4 + white * 0.5329522;
      b5 = -0.7616 * b5 - white * 0.0168980;
      n[i] = b0 + b1 + b2 + b3 + b4 + b5 + b6 + white * 0.5362;
      b6 = white * 0.115926;
    }
  }
  const double noise = rms(n);
  if (noise <= 0.0) throw NumericError("apply_noise: degenerate noise draw");
  n *= signal / db_to_amplitude(snr_db) / noise;
  return n;
}

Waveform apply_noise(const Waveform& w, double snr_db, NoiseColor color, std::uint64_t seed) {
  return Waveform{w.samples + make_noise(w, snr_db, color, seed), w.sample_rate_hz};
}

double reverb_envelope(double t_s, double rt60_s) {
  return std::exp(-3.0 * std::numbers::ln10 * t_s / rt60_s);
}

Eigen::VectorXd impulse_response(double rt60_s, int sample_rate_hz, std::uint64_t seed) {
  require(rt60_s > 0.0 && rt60_s <= 2.0, "apply_reverb: rt60 outside (0, 2]");
  const auto len = static_cast<Index>(std::ceil(rt60_s * sample_rate_hz)) + 1;
  Rng rng(seed);
  Eigen::VectorXd h(len);
  h[0] = 1.0;
  for (Index i = 1; i < len; ++i)
    h[i] = rng.uniform(-1.0, 1.0) * reverb_envelope(static_cast<double>(i) / sample_rate_hz, rt60_s);
  return h;
}

Waveform apply_reverb(const Waveform& w, double rt60_s, std::uint64_t seed) {
  w.validate();
  const Eigen::VectorXd h = impulse_response(rt60_s, w.sample_rate_hz, seed);
  Waveform out{convolve_truncated(w.samples, h, w.size()), w.sample_rate_hz};
  const double in_peak = peak(w), out_peak = peak(out);
  if (out_peak > 0.0) out.samples *= in_peak / out_peak;
  return out;
}

Waveform apply_eq(const Waveform& w, const std::array<double, kEqBands>& gains_db) {
  w.validate();
  for (double g : gains_db) require(g >= -12.0 && g <= 12.0, "apply_eq: gain outside [-12, 12] dB");
  Waveform out = w;
  const double top = 0.45 * w.sample_rate_hz;
  for (int b = 0; b < kEqBands; ++b) {
    if (gains_db[b] == 0.0) continue;
    run_biquad(peaking(std::min(kEqCentersHz[b], top), gains_db[b], std::numbers::sqrt2,
                       w.sample_rate_hz),
               out.samples);
  }
  return out;
}

Waveform apply_compression(const Waveform& w, int bits) {
  w.validate();
  require(bits >= 4 && bits <= 8, "apply_compression: bits outside [4, 8]");
  const double half = std::ldexp(1.0, bits - 1);
  const double log_mu = std::log1p(kMu);
  Waveform out = w;
  for (Index i = 0; i < out.size(); ++i) {
    const double x = std::clamp(w.samples[i], -1.0, 1.0);
    const double y = std::copysign(std::log1p(kMu * std::abs(x)) / log_mu, x);
    const double q = std::clamp(std::round(y * half), -half, half - 1.0) / half;
    out.samples[i] = std::copysign((std::pow(1.0 + kMu, std::abs(q)) - 1.0) / kMu, q);
  }
  return out;
}

Waveform apply_dropouts(const Waveform& w, double rate, std::uint64_t seed) {
  w.validate();
  require(rate >= 0.0 && rate <= 0.1, "apply_dropouts: rate outside [0, 0.1]");
  Waveform out = w;
  const Index window = std::max<Index>(1, static_cast<Index>(std::lround(0.01 * w.sample_rate_hz)));
  if (rate == 0.0 || window > w.size()) return out;
  const auto count = static_cast<Index>(std::lround(rate * static_cast<double>(w.size()) / window));
  Rng rng(seed);
  for (Index k = 0; k < count; ++k) {
    const auto start = static_cast<Index>(rng.below(static_cast<std::uint64_t>(w.size() - window + 1)));
    out.samples.segment(start, window).setZero();
  }
  return out;
}

Waveform apply_pops(const Waveform& w, double rate_per_s, std::uint64_t seed) {
  w.validate();
  require(rate_per_s >= 0.0 && rate_per_s <= 10.0, "apply_pops: rate outside [0, 10]");
  Waveform out = w;
  const Index click = std::max<Index>(1, static_cast<Index>(std::lround(0.001 * w.sample_rate_hz)));
  if (rate_per_s == 0.0 || click > w.size()) return out;
  const auto count = static_cast<Index>(std::lround(rate_per_s * w.duration_s()));
  Rng rng(seed);
  for (Index k = 0; k < count; ++k) {
    const auto start = static_cast<Index>(rng.below(static_cast<std::uint64_t>(w.size() - click + 1)));
    const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    out.samples.segment(start, click).setConstant(sign);
  }
  return out;
}

Waveform apply(const PerturbSpec& spec, const Waveform& w) {
  spec.validate();
  Waveform out = w;
  if (spec.reverb_rt60_s) out = apply_reverb(out, *spec.reverb_rt60_s, family_seed(spec, Family::kReverb));
  if (spec.eq_gains_db) out = apply_eq(out, *spec.eq_gains_db);
  if (spec.mulaw_bits) out = apply_compression(out, *spec.mulaw_bits);
  if (spec.noise_snr_db)
    out = apply_noise(out, *spec.noise_snr_db, spec.noise_color, family_seed(spec, Family::kNoise));
  if (spec.dropout_rate)
    out = apply_dropouts(out, *spec.dropout_rate, family_seed(spec, Family::kDropouts));
  if (spec.pop_rate) out = apply_pops(out, *spec.pop_rate, family_seed(spec, Family::kPops));
  return out;
}

PerturbSpec sample_spec(std::uint64_t seed, const std::vector<Family>& families,
                        const PerturbRanges& ranges) {
  require(!families.empty(), "sample_spec: empty family subset");
  Rng rng(seed);
  PerturbSpec s;
  s.seed = rng.next_u64();
  // Draw in a fixed family order so the subset's listing order is irrelevant.
  auto wanted = [&](Family f) { return std::find(families.begin(), families.end(), f) != families.end(); };
  if (wanted(Family::kNoise)) {
    s.noise_snr_db = rng.uniform(ranges.snr_min_db, ranges.snr_max_db);
    s.noise_color = rng.bernoulli(0.5) ? NoiseColor::kPink : NoiseColor::kWhite;
  }
  if (wanted(Family::kReverb)) s.reverb_rt60_s = rng.uniform(ranges.rt60_min_s, ranges.rt60_max_s);
  if (wanted(Family::kEq)) {
    std::array<double, kEqBands> g{};
    for (double& v : g) v = rng.uniform(-ranges.eq_max_db, ranges.eq_max_db);
    s.eq_gains_db = g;
  }
  if (wanted(Family::kCompression))
    s.mulaw_bits = ranges.bits_min + static_cast<int>(rng.below(
                                         static_cast<std::uint64_t>(ranges.bits_max - ranges.bits_min + 1)));
  if (wanted(Family::kDropouts)) s.dropout_rate = rng.uniform(0.0, ranges.dropout_max);
  if (wanted(Family::kPops)) s.pop_rate = rng.uniform(0.0, ranges.pop_max);
  return s;
}

double severity(const PerturbSpec& spec, Family f, const PerturbRanges& r) {
  switch (f) {
    case Family::kNoise:
      return spec.noise_snr_db ? 1.0 - unit(*spec.noise_snr_db, r.snr_min_db, r.snr_max_db) : 0.0;
    case Family::kReverb:
      return spec.reverb_rt60_s ? unit(*spec.reverb_rt60_s, r.rt60_min_s, r.rt60_max_s) : 0.0;
    case Family::kEq: {
      if (!spec.eq_gains_db) return 0.0;
      double sq = 0.0;
      for (double g : *spec.eq_gains_db) sq += g * g;
      return std::clamp(std::sqrt(sq / kEqBands) / r.eq_max_db, 0.0, 1.0);
    }
    case Family::kCompression:
      return spec.mulaw_bits ? 1.0 - unit(*spec.mulaw_bits, r.bits_min, r.bits_max) : 0.0;
    case Family::kDropouts:
      return spec.dropout_rate ? unit(*spec.dropout_rate, 0.0, r.dropout_max) : 0.0;
    case Family::kPops:
      return spec.pop_rate ? unit(*spec.pop_rate, 0.0, r.pop_max) : 0.0;
  }
  return 0.0;
}

double magnitude(const PerturbSpec& spec, const PerturbRanges& ranges, const SeverityWeights& weights) {
  spec.validate();
  double num = 0.0, den = 0.0;
  for (Family f : spec.families()) {
    const double wgt = weights.weight[static_cast<std::size_t>(f)];
    num += wgt * severity(spec, f, ranges);
    den += wgt;
  }
  return den > 0.0 ? num / den : 0.0;
}

PerturbSpec spec_at_severity(const std::vector<Family>& families, double level, std::uint64_t seed,
                             const PerturbRanges& r) {
  require(!families.empty(), "spec_at_severity: empty family subset");
  level = std::clamp(level, 0.0, 1.0);
  Rng rng(seed);
  PerturbSpec s;
  s.seed = rng.next_u64();
  auto wanted = [&](Family f) { return std::find(families.begin(), families.end(), f) != families.end(); };
  if (wanted(Family::kNoise)) {
    s.noise_snr_db = r.snr_max_db - level * (r.snr_max_db - r.snr_min_db);
    s.noise_color = rng.bernoulli(0.5) ? NoiseColor::kPink : NoiseColor::kWhite;
  }
  if (wanted(Family::kReverb)) s.reverb_rt60_s = r.rt60_min_s + level * (r.rt60_max_s - r.rt60_min_s);
  if (wanted(Family::kEq)) {
    std::array<double, kEqBands> g{};
    for (double& v : g) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * level * r.eq_max_db;
    s.eq_gains_db = g;
  }
  if (wanted(Family::kCompression))
    s.mulaw_bits = static_cast<int>(std::lround(r.bits_max - level * (r.bits_max - r.bits_min)));
  if (wanted(Family::kDropouts)) s.dropout_rate = level * r.dropout_max;
  if (wanted(Family::kPops)) s.pop_rate = level * r.pop_max;
  return s;
}

}  // namespace cdpam
