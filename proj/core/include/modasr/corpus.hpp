// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "modasr/features.hpp"

namespace modasr {

enum class Subset { Train, Dev, Eval };

std::string_view to_string(Subset s);
Subset parse_subset(std::string_view s);

// Requested utterance count for one (subset, origin) cell. For noisy
// origins `noise` either pins a single archetype or, when empty, spreads the
// count round-robin over bus, cafe, pedestrian and street.
struct CorpusCount {
  Subset subset = Subset::Train;
  std::optional<NoiseKind> noise;
  Origin origin = Origin::CleanOrig;
  std::size_t count = 0;
};

struct CorpusSpec {
  std::vector<CorpusCount> counts;
  double snr_min_db = -5.0;
  double snr_max_db = 15.0;
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 6;
  TokenSpec tokens;
  std::size_t noise_pool_size = 32;  // distinct noise seeds per origin and archetype
  double real_tilt = 0.4;

  void validate() const;

  // Per-origin counts proportional to the CHiME4 subset sizes (train
  // 37416 / 42828 / 9600, dev - / 1640 / 1640, eval 1206 / 1320 / 1320),
  // rounded to nearest.
  static CorpusSpec chime4_scaled(double train_fraction, double heldout_fraction);
};

void to_json(nlohmann::json& j, const CorpusSpec& spec);
CorpusSpec corpus_spec_from_json(const nlohmann::json& j);

// One manifest line. Synthetic audio is described in-line as
// "synth:clean_seed=..,noise_seed=..,snr=..,token_ms=..,sr=..,vocab=..,tilt=..";
// anything else is a WAV path, relative to the manifest's directory.
struct ManifestEntry {
  std::string id;
  std::string audio;
  std::vector<int> tokens;
  Domain domain;
  Subset subset = Subset::Train;
  std::optional<double> snr_db;

  bool synthetic() const { return audio.rfind("synth:", 0) == 0; }
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  void validate() const;
  std::size_t count(Subset subset) const;
};

Manifest build_corpus(const CorpusSpec& spec, std::uint64_t seed);

void write_manifest(const Manifest& m, std::ostream& os);
void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(std::istream& is);
Manifest read_manifest(const std::filesystem::path& path);

// Materializes the waveform for an entry (synthesis or WAV read).
Utterance render_utterance(const ManifestEntry& entry, const std::filesystem::path& base_dir = {});

// Feature-extracted utterance, ready for the models.
struct Example {
  std::string id;
  Tensor<float> feats;  // [T, mel_bins]
  std::vector<int> tokens;
  Domain domain;
  Subset subset = Subset::Train;
};

struct Dataset {
  std::vector<Example> items;

  std::vector<const Example*> subset(Subset s) const;
  std::vector<const Example*> all() const;
};

Dataset load_dataset(const Manifest& manifest, const FeatureConfig& cfg,
                     const std::filesystem::path& base_dir = {});

}  // namespace modasr
