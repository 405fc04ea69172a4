// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "modasr/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace modasr {

Domain Domain::make(NoiseKind noise, Origin origin) {
  Domain d{noise, origin};
  if (!d.valid()) {
    throw Error("invalid domain: noise '" + std::string(to_string(noise)) + "' with origin '" +
                std::string(to_string(origin)) + "'");
  }
  return d;
}

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::Clean: return "clean";
    case NoiseKind::Bus: return "bus";
    case NoiseKind::Cafe: return "cafe";
    case NoiseKind::Pedestrian: return "pedestrian";
    case NoiseKind::Street: return "street";
  }
  return "?";
}

std::string_view to_string(Origin origin) {
  switch (origin) {
    case Origin::CleanOrig: return "clean";
    case Origin::Simu: return "simu";
    case Origin::Real: return "real";
  }
  return "?";
}

NoiseKind parse_noise_kind(std::string_view s) {
  for (NoiseKind k : {NoiseKind::Clean, NoiseKind::Bus, NoiseKind::Cafe, NoiseKind::Pedestrian,
                      NoiseKind::Street}) {
    if (s == to_string(k)) return k;
  }
  if (s == "caf\xc3\xa9") return NoiseKind::Cafe;
  throw Error("unknown domain '" + std::string(s) + "'");
}

Origin parse_origin(std::string_view s) {
  for (Origin o : {Origin::CleanOrig, Origin::Simu, Origin::Real}) {
    if (s == to_string(o)) return o;
  }
  throw Error("unknown origin '" + std::string(s) + "'");
}

void TokenSpec::validate() const {
  if (vocab_size < 2) throw Error("vocabulary must hold the blank plus at least one token");
  if (token_ms <= 0.0 || sample_rate <= 0) throw Error("token duration and sample rate must be positive");
  if (!(min_hz > 0.0 && max_hz >= min_hz && 3.0 * max_hz < sample_rate / 2.0)) {
    throw Error("token frequency range must be positive and keep harmonics below Nyquist");
  }
}

std::size_t TokenSpec::token_samples() const {
  return static_cast<std::size_t>(std::lround(token_ms * 1e-3 * sample_rate));
}

double TokenSpec::fundamental_hz(int token) const {
  if (token < 1 || token >= vocab_size) {
    throw Error("token id " + std::to_string(token) + " outside [1, " + std::to_string(vocab_size) + ")");
  }
  if (vocab_size == 2) return min_hz;
  const double lo = hz_to_mel(min_hz), hi = hz_to_mel(max_hz);
  return mel_to_hz(lo + (hi - lo) * (token - 1) / (vocab_size - 2));
}

void Utterance::validate(int vocab_size) const {
  if (waveform.empty()) throw Error("utterance '" + id + "' has an empty waveform");
  if (sample_rate <= 0) throw Error("utterance '" + id + "' has a non-positive sample rate");
  for (float s : waveform) {
    if (!std::isfinite(s) || s < -1.0f || s > 1.0f) {
      throw Error("utterance '" + id + "' has samples outside [-1, 1]");
    }
  }
  if (tokens.empty()) throw Error("utterance '" + id + "' has an empty transcript");
  for (int t : tokens) {
    if (t < 1 || t >= vocab_size) {
      throw Error("utterance '" + id + "' token " + std::to_string(t) + " outside vocabulary");
    }
  }
  if (!domain.valid()) throw Error("utterance '" + id + "' has an invalid domain");
  if (snr_db.has_value() != (domain.origin == Origin::Simu)) {
    throw Error("utterance '" + id + "': snr_db must be present exactly for simu data");
  }
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kPartials[] = {1.0, 2.0, 3.0};
constexpr double kPartialGain[] = {1.0, 0.5, 0.25};

// Second-order low-pass section (RBJ cookbook), direct form I.
class Biquad {
 public:
  Biquad(double cutoff_hz, double q, int sample_rate) {
    const double w0 = kTwoPi * cutoff_hz / sample_rate;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double c = std::cos(w0);
    const double a0 = 1.0 + alpha;
    b0_ = (1.0 - c) / 2.0 / a0;
    b1_ = (1.0 - c) / a0;
    b2_ = b0_;
    a1_ = -2.0 * c / a0;
    a2_ = (1.0 - alpha) / a0;
  }

  double operator()(double x) {
    const double y = b0_ * x + b1_ * x1_ + b2_ * x2_ - a1_ * y1_ - a2_ * y2_;
    x2_ = x1_;
    x1_ = x;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double b0_, b1_, b2_, a1_, a2_;
  double x1_ = 0, x2_ = 0, y1_ = 0, y2_ = 0;
};

// Fourth-order Butterworth low-pass white noise; the filter is run in before
// samples are kept.
std::vector<double> rumble(std::size_t length, double cutoff_hz, int sample_rate, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Biquad s1(cutoff_hz, 0.5412, sample_rate), s2(cutoff_hz, 1.3066, sample_rate);
  const std::size_t warmup = static_cast<std::size_t>(sample_rate / 10);
  std::vector<double> out(length);
  for (std::size_t i = 0; i < warmup + length; ++i) {
    const double y = s2(s1(gauss(rng)));
    if (i >= warmup) out[i - warmup] = y;
  }
  return out;
}

// Sum of harmonic "voices", each with a syllable-rate amplitude envelope.
std::vector<double> babble(std::size_t length, int voices, int sample_rate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> f0_dist(100.0, 260.0), rate_dist(2.5, 6.0),
      phase_dist(0.0, kTwoPi), gain_dist(0.5, 1.0);
  std::vector<double> out(length, 0.0);
  for (int v = 0; v < voices; ++v) {
    const double f0 = f0_dist(rng), rate = rate_dist(rng), env_phase = phase_dist(rng);
    const double gain = gain_dist(rng);
    const double vibrato = rate_dist(rng) * 0.5;
    double phases[5];
    for (auto& p : phases) p = phase_dist(rng);
    for (std::size_t i = 0; i < length; ++i) {
      const double t = static_cast<double>(i) / sample_rate;
      const double env = std::abs(std::sin(std::numbers::pi * rate * t + env_phase));
      const double f = f0 * (1.0 + 0.03 * std::sin(kTwoPi * vibrato * t));
      double s = 0.0;
      for (int h = 0; h < 5; ++h) s += std::sin(kTwoPi * f * (h + 1) * t + phases[h]) / (h + 1);
      out[i] += gain * env * s;
    }
  }
  return out;
}

std::vector<float> to_unit_power(const std::vector<double>& x) {
  double p = 0.0;
  for (double v : x) p += v * v;
  p /= static_cast<double>(x.size());
  const double g = p > 0.0 ? 1.0 / std::sqrt(p) : 0.0;
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(x[i] * g);
  return out;
}

}  // namespace

Utterance synth_clean(std::uint64_t seed, std::span<const int> tokens, const TokenSpec& vocab) {
  vocab.validate();
  if (tokens.empty()) throw Error("synth_clean needs at least one token");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pitch_dist(0.97, 1.03), amp_dist(0.6, 1.0),
      phase_dist(0.0, kTwoPi);
  const double pitch = pitch_dist(rng);
  const std::size_t n = vocab.token_samples();
  const std::size_t ramp = std::min<std::size_t>(n / 4, static_cast<std::size_t>(vocab.sample_rate / 100));

  Utterance u;
  u.sample_rate = vocab.sample_rate;
  u.tokens.assign(tokens.begin(), tokens.end());
  u.waveform.resize(n * tokens.size());
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    const double f0 = vocab.fundamental_hz(tokens[j]) * pitch;
    const double amp = 0.25 * amp_dist(rng);
    double phases[3];
    for (auto& p : phases) p = phase_dist(rng);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / vocab.sample_rate;
      double env = 1.0;
      if (i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * i / ramp);
      if (n - 1 - i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * (n - 1 - i) / ramp);
      double s = 0.0;
      for (int h = 0; h < 3; ++h) s += kPartialGain[h] * std::sin(kTwoPi * f0 * kPartials[h] * t + phases[h]);
      u.waveform[j * n + i] = static_cast<float>(amp * env * s);
    }
  }
  return u;
}

Utterance synth_clean(std::uint64_t seed, std::size_t token_count, const TokenSpec& vocab) {
  vocab.validate();
  if (token_count < 1) throw Error("synth_clean needs token_count >= 1");
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<int> dist(1, vocab.vocab_size - 1);
  std::vector<int> tokens(token_count);
  for (auto& t : tokens) t = dist(rng);
  return synth_clean(seed, tokens, vocab);
}

std::vector<float> gen_noise(NoiseKind kind, std::size_t length, std::uint64_t seed, int sample_rate) {
  if (length < 1) throw Error("gen_noise needs length >= 1");
  if (kind == NoiseKind::Clean) throw Error("gen_noise: clean is not a noise archetype");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> x(length, 0.0);
  switch (kind) {
    case NoiseKind::Bus: {
      // Engine rumble: steep low-pass well under 300 Hz plus a faint hum.
      const double cutoff = 90.0 + 70.0 * unit(rng);
      x = rumble(length, cutoff, sample_rate, rng);
      const double hum = 40.0 + 40.0 * unit(rng), phase = kTwoPi * unit(rng);
      double p = 0.0;
      for (double v : x) p += v * v;
      const double rms = std::sqrt(p / static_cast<double>(length));
      for (std::size_t i = 0; i < length; ++i) {
        x[i] += 0.3 * rms * std::sin(kTwoPi * hum * i / sample_rate + phase);
      }
      break;
    }
    case NoiseKind::Street: {
      // Broadband traffic with slowly swelling passes and some rumble.
      const double rate = 0.3 + 0.7 * unit(rng), phase = kTwoPi * unit(rng);
      const double rumble_mix = 0.2 + 0.4 * unit(rng);
      const auto low = rumble(length, 120.0 + 80.0 * unit(rng), sample_rate, rng);
      double plow = 0.0;
      for (double v : low) plow += v * v;
      const double low_gain = 1.0 / std::sqrt(std::max(plow / static_cast<double>(length), 1e-30));
      for (std::size_t i = 0; i < length; ++i) {
        const double env = 1.0 + 0.5 * std::sin(kTwoPi * rate * i / sample_rate + phase);
        x[i] = env * gauss(rng) + rumble_mix * low_gain * low[i];
      }
      break;
    }
    case NoiseKind::Cafe: {
      std::uniform_int_distribution<int> voices(6, 10);
      x = babble(length, voices(rng), sample_rate, rng);
      double p = 0.0;
      for (double v : x) p += v * v;
      const double rms = std::sqrt(p / static_cast<double>(length));
      for (auto& v : x) v += 0.15 * rms * gauss(rng);
      break;
    }
    case NoiseKind::Pedestrian: {
      std::uniform_int_distribution<int> voices(3, 6);
      x = babble(length, voices(rng), sample_rate, rng);
      double p = 0.0;
      for (double v : x) p += v * v;
      const double rms = std::sqrt(p / static_cast<double>(length));
      for (auto& v : x) v += 0.1 * rms * gauss(rng);
      // Footsteps: sparse decaying clicks.
      const double step_s = 0.25 + 0.3 * unit(rng);
      const double decay = 0.004 * sample_rate;
      double next = unit(rng) * step_s * sample_rate;
      while (next < static_cast<double>(length)) {
        const auto start = static_cast<std::size_t>(next);
        const double amp = (3.0 + 3.0 * unit(rng)) * rms;
        for (std::size_t i = start; i < std::min(length, start + static_cast<std::size_t>(6 * decay)); ++i) {
          x[i] += amp * std::exp(-static_cast<double>(i - start) / decay) * gauss(rng);
        }
        next += step_s * sample_rate * (0.8 + 0.4 * unit(rng));
      }
      break;
    }
    case NoiseKind::Clean:
      break;
  }
  return to_unit_power(x);
}

double mean_power(std::span<const float> x) {
  if (x.empty()) return 0.0;
  double p = 0.0;
  for (float v : x) p += static_cast<double>(v) * v;
  return p / static_cast<double>(x.size());
}

MixResult mix_at_snr(std::span<const float> clean, std::span<const float> noise, double snr_db) {
  if (clean.size() != noise.size()) {
    throw Error("mix_at_snr length mismatch: clean " + std::to_string(clean.size()) + " vs noise " +
                std::to_string(noise.size()));
  }
  const double pc = mean_power(clean);
  if (!(pc > 0.0)) throw Error("mix_at_snr: clean signal has zero power");
  MixResult r;
  if (std::isinf(snr_db) && snr_db > 0) {
    r.mixture.assign(clean.begin(), clean.end());
    return r;
  }
  const double pn = mean_power(noise);
  if (!(pn > 0.0)) throw Error("mix_at_snr: noise signal has zero power");
  r.noise_gain = std::sqrt(pc / (pn * std::pow(10.0, snr_db / 10.0)));
  std::vector<double> sum(clean.size());
  double peak = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    sum[i] = static_cast<double>(clean[i]) + r.noise_gain * noise[i];
    peak = std::max(peak, std::abs(sum[i]));
  }
  if (peak > 1.0) r.output_scale = 1.0 / peak;
  r.mixture.resize(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    r.mixture[i] = static_cast<float>(std::clamp(sum[i] * r.output_scale, -1.0, 1.0));
  }
  return r;
}

std::vector<float> channel_tilt(std::span<const float> x, double coeff) {
  std::vector<float> out(x.size());
  double prev = 0.0, peak = 0.0;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = x[i] - coeff * prev;
    prev = x[i];
    peak = std::max(peak, std::abs(y[i]));
  }
  const double g = peak > 1.0 ? 1.0 / peak : 1.0;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(y[i] * g);
  return out;
}

void FeatureConfig::validate() const {
  if (sample_rate <= 0) throw Error("sample_rate: must be positive");
  if (window == 0) throw Error("window: must be positive");
  if (hop == 0) throw Error("hop: must be positive");
  if (mel_bins == 0) throw Error("mel_bins: must be positive");
  if (fft_size < window || (fft_size & (fft_size - 1)) != 0) {
    throw Error("fft_size: must be a power of two >= window");
  }
  if (!(low_hz >= 0.0 && high_hz > low_hz && high_hz <= sample_rate / 2.0)) {
    throw Error("high_hz: need 0 <= low_hz < high_hz <= Nyquist");
  }
  if (!(log_floor > 0.0)) throw Error("log_floor: must be positive");
}

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

struct LogMelExtractor::Impl {
  std::vector<double> window;
  std::vector<double> filters;  // [mel_bins, fft_size / 2 + 1]
  std::vector<double> centers;
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;

  ~Impl() {
    if (plan) fftw_destroy_plan(plan);
    if (in) fftw_free(in);
    if (out) fftw_free(out);
  }
};

LogMelExtractor::LogMelExtractor(FeatureConfig cfg) : cfg_(cfg), impl_(std::make_unique<Impl>()) {
  cfg_.validate();
  auto& im = *impl_;
  im.window.resize(cfg_.window);
  for (std::size_t i = 0; i < cfg_.window; ++i) {
    im.window[i] = 0.5 - 0.5 * std::cos(kTwoPi * i / static_cast<double>(cfg_.window));
  }
  const std::size_t bins = cfg_.fft_size / 2 + 1;
  im.filters.assign(cfg_.mel_bins * bins, 0.0);
  im.centers.resize(cfg_.mel_bins);
  const double lo = hz_to_mel(cfg_.low_hz), hi = hz_to_mel(cfg_.high_hz);
  const double step = (hi - lo) / static_cast<double>(cfg_.mel_bins + 1);
  for (std::size_t m = 0; m < cfg_.mel_bins; ++m) {
    const double left = lo + step * m, center = left + step, right = center + step;
    im.centers[m] = mel_to_hz(center);
    for (std::size_t k = 0; k < bins; ++k) {
      const double mel = hz_to_mel(static_cast<double>(k) * cfg_.sample_rate / cfg_.fft_size);
      double w = 0.0;
      if (mel > left && mel <= center) w = (mel - left) / (center - left);
      else if (mel > center && mel < right) w = (right - mel) / (right - center);
      im.filters[m * bins + k] = w;
    }
  }
  im.in = fftw_alloc_real(cfg_.fft_size);
  im.out = fftw_alloc_complex(bins);
  im.plan = fftw_plan_dft_r2c_1d(static_cast<int>(cfg_.fft_size), im.in, im.out, FFTW_ESTIMATE);
  if (!im.plan) throw Error("failed to create FFT plan");
}

LogMelExtractor::~LogMelExtractor() = default;
LogMelExtractor::LogMelExtractor(LogMelExtractor&&) noexcept = default;
LogMelExtractor& LogMelExtractor::operator=(LogMelExtractor&&) noexcept = default;

std::size_t LogMelExtractor::num_frames(std::size_t samples) const {
  if (samples < cfg_.window) return 0;
  return 1 + (samples - cfg_.window) / cfg_.hop;
}

double LogMelExtractor::bin_center_hz(std::size_t m) const { return impl_->centers.at(m); }

Tensor<float> LogMelExtractor::compute(std::span<const float> waveform) const {
  if (waveform.size() < cfg_.window) {
    throw Error("waveform of " + std::to_string(waveform.size()) +
                " samples is shorter than one analysis window (" + std::to_string(cfg_.window) + ")");
  }
  auto& im = *impl_;
  const std::size_t frames = num_frames(waveform.size());
  const std::size_t bins = cfg_.fft_size / 2 + 1;
  const double floor_log = std::log(cfg_.log_floor);
  std::vector<float> out(frames * cfg_.mel_bins);
  std::vector<double> power(bins);
  for (std::size_t f = 0; f < frames; ++f) {
    const float* src = waveform.data() + f * cfg_.hop;
    for (std::size_t i = 0; i < cfg_.fft_size; ++i) {
      im.in[i] = i < cfg_.window ? static_cast<double>(src[i]) * im.window[i] : 0.0;
    }
    fftw_execute(im.plan);
    for (std::size_t k = 0; k < bins; ++k) {
      power[k] = im.out[k][0] * im.out[k][0] + im.out[k][1] * im.out[k][1];
    }
    for (std::size_t m = 0; m < cfg_.mel_bins; ++m) {
      const double* w = im.filters.data() + m * bins;
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += w[k] * power[k];
      out[f * cfg_.mel_bins + m] =
          static_cast<float>(e > cfg_.log_floor ? std::log(e) : floor_log);
    }
  }
  return Tensor<float>({frames, cfg_.mel_bins}, std::move(out));
}

FeatureSequence logmel(std::span<const float> waveform, int sample_rate, const FeatureConfig& cfg) {
  if (sample_rate != cfg.sample_rate) {
    throw Error("waveform sample rate " + std::to_string(sample_rate) +
                " does not match feature config " + std::to_string(cfg.sample_rate));
  }
  LogMelExtractor ex(cfg);
  return {ex.compute(waveform), Domain{}, ""};
}

}  // namespace modasr
