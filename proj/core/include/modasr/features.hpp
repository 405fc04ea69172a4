// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modasr/tensor.hpp"

namespace modasr {

enum class NoiseKind { Clean, Bus, Cafe, Pedestrian, Street };
enum class Origin { CleanOrig, Simu, Real };

// Acoustic condition of an utterance. Clean noise implies clean origin and
// vice versa.
struct Domain {
  NoiseKind noise = NoiseKind::Clean;
  Origin origin = Origin::CleanOrig;

  static Domain make(NoiseKind noise, Origin origin);
  bool valid() const { return (noise == NoiseKind::Clean) == (origin == Origin::CleanOrig); }
  bool clean() const { return noise == NoiseKind::Clean; }
  friend bool operator==(const Domain&, const Domain&) = default;
};

std::string_view to_string(NoiseKind kind);
std::string_view to_string(Origin origin);
NoiseKind parse_noise_kind(std::string_view s);
Origin parse_origin(std::string_view s);

inline constexpr NoiseKind kNoiseKinds[] = {NoiseKind::Bus, NoiseKind::Cafe,
                                            NoiseKind::Pedestrian, NoiseKind::Street};

// Rendering of the synthetic vocabulary. Token k in [1, vocab_size) is a
// harmonic chord whose fundamental sits on a mel-uniform grid; id 0 is the
// CTC blank and is never rendered.
struct TokenSpec {
  int vocab_size = 10;
  double token_ms = 80.0;
  int sample_rate = 16000;
  double min_hz = 300.0;
  double max_hz = 2400.0;

  void validate() const;
  std::size_t token_samples() const;
  double fundamental_hz(int token) const;
};

struct Utterance {
  std::string id;
  std::vector<float> waveform;
  int sample_rate = 16000;
  std::vector<int> tokens;
  Domain domain;
  std::optional<double> snr_db;

  // Throws if a field invariant is violated.
  void validate(int vocab_size) const;
};

Utterance synth_clean(std::uint64_t seed, std::span<const int> tokens, const TokenSpec& vocab);
// Draws `token_count` ids uniformly from [1, vocab_size) using `seed`.
Utterance synth_clean(std::uint64_t seed, std::size_t token_count, const TokenSpec& vocab);

// Unit average power noise of the given archetype.
std::vector<float> gen_noise(NoiseKind kind, std::size_t length, std::uint64_t seed,
                             int sample_rate = 16000);

inline constexpr double kCleanPassthrough = std::numeric_limits<double>::infinity();

struct MixResult {
  std::vector<float> mixture;
  double noise_gain = 0.0;    // alpha applied to the noise before summing
  double output_scale = 1.0;  // < 1 when the sum was renormalized into [-1, 1]
};

// clean + alpha * noise with alpha chosen so the component SNR is `snr_db`.
MixResult mix_at_snr(std::span<const float> clean, std::span<const float> noise, double snr_db);

double mean_power(std::span<const float> x);

// Fixed first-order channel tilt y[n] = x[n] - coeff * x[n-1].
std::vector<float> channel_tilt(std::span<const float> x, double coeff);

struct FeatureConfig {
  int sample_rate = 16000;
  std::size_t window = 400;  // 25 ms
  std::size_t hop = 160;     // 10 ms
  std::size_t fft_size = 512;
  std::size_t mel_bins = 40;
  double low_hz = 20.0;
  double high_hz = 8000.0;
  double log_floor = 1e-10;

  void validate() const;
};

struct FeatureSequence {
  Tensor<float> frames;  // [T, mel_bins]
  Domain domain;
  std::string utterance_id;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Hann-windowed power spectrum, triangular mel filterbank, floored log.
// Reuses one FFT plan and filterbank across calls.
class LogMelExtractor {
 public:
  explicit LogMelExtractor(FeatureConfig cfg);
  ~LogMelExtractor();
  LogMelExtractor(LogMelExtractor&&) noexcept;
  LogMelExtractor& operator=(LogMelExtractor&&) noexcept;

  const FeatureConfig& config() const { return cfg_; }
  std::size_t num_frames(std::size_t samples) const;
  // Center frequency of mel bin m.
  double bin_center_hz(std::size_t m) const;

  Tensor<float> compute(std::span<const float> waveform) const;

 private:
  struct Impl;
  FeatureConfig cfg_;
  std::unique_ptr<Impl> impl_;
};

FeatureSequence logmel(std::span<const float> waveform, int sample_rate, const FeatureConfig& cfg);

}  // namespace modasr
