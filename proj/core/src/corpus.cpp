// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "modasr/corpus.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "modasr/seed.hpp"
#include "modasr/wav.hpp"

namespace modasr {

using nlohmann::json;

std::string_view to_string(Subset s) {
  switch (s) {
    case Subset::Train: return "train";
    case Subset::Dev: return "dev";
    case Subset::Eval: return "eval";
  }
  return "?";
}

Subset parse_subset(std::string_view s) {
  for (Subset v : {Subset::Train, Subset::Dev, Subset::Eval}) {
    if (s == to_string(v)) return v;
  }
  throw Error("unknown subset '" + std::string(s) + "'");
}

void CorpusSpec::validate() const {
  tokens.validate();
  if (!(snr_min_db <= snr_max_db)) throw Error("corpus spec: snr_db range is empty");
  if (min_tokens < 1 || max_tokens < min_tokens) throw Error("corpus spec: need 1 <= min_tokens <= max_tokens");
  if (noise_pool_size < 1) throw Error("corpus spec: noise_pool_size must be >= 1");
  std::size_t total = 0;
  for (const auto& c : counts) total += c.count;
  if (total == 0) throw Error("corpus spec: requests no utterances");
  for (const auto& c : counts) {
    const std::string where = std::string(to_string(c.subset)) + "/" + std::string(to_string(c.origin));
    if (c.origin == Origin::CleanOrig) {
      if (c.noise && *c.noise != NoiseKind::Clean) {
        throw Error("corpus spec: noisy domain '" + std::string(to_string(*c.noise)) +
                    "' requested under clean origin (" + where + ")");
      }
      if (c.subset == Subset::Dev && c.count > 0) {
        throw Error("corpus spec: the dev subset has no clean data");
      }
    } else if (c.noise && *c.noise == NoiseKind::Clean) {
      throw Error("corpus spec: clean domain requested under noisy origin (" + where + ")");
    }
  }
}

CorpusSpec CorpusSpec::chime4_scaled(double train_fraction, double heldout_fraction) {
  auto scaled = [](double n, double f) { return static_cast<std::size_t>(std::llround(n * f)); };
  CorpusSpec s;
  s.counts = {
      {Subset::Train, std::nullopt, Origin::CleanOrig, scaled(37416, train_fraction)},
      {Subset::Train, std::nullopt, Origin::Simu, scaled(42828, train_fraction)},
      {Subset::Train, std::nullopt, Origin::Real, scaled(9600, train_fraction)},
      {Subset::Dev, std::nullopt, Origin::Simu, scaled(1640, heldout_fraction)},
      {Subset::Dev, std::nullopt, Origin::Real, scaled(1640, heldout_fraction)},
      {Subset::Eval, std::nullopt, Origin::CleanOrig, scaled(1206, heldout_fraction)},
      {Subset::Eval, std::nullopt, Origin::Simu, scaled(1320, heldout_fraction)},
      {Subset::Eval, std::nullopt, Origin::Real, scaled(1320, heldout_fraction)},
  };
  return s;
}

void to_json(json& j, const CorpusSpec& spec) {
  json counts = json::array();
  for (const auto& c : spec.counts) {
    counts.push_back({{"subset", to_string(c.subset)},
                      {"domain", c.noise ? std::string(to_string(*c.noise))
                                         : (c.origin == Origin::CleanOrig ? "clean" : "noisy")},
                      {"origin", to_string(c.origin)},
                      {"count", c.count}});
  }
  j = json{{"version", 1},
           {"counts", counts},
           {"snr_db", {spec.snr_min_db, spec.snr_max_db}},
           {"tokens_per_utterance", {spec.min_tokens, spec.max_tokens}},
           {"vocab_size", spec.tokens.vocab_size},
           {"token_ms", spec.tokens.token_ms},
           {"sample_rate", spec.tokens.sample_rate},
           {"min_hz", spec.tokens.min_hz},
           {"max_hz", spec.tokens.max_hz},
           {"noise_pool_size", spec.noise_pool_size},
           {"real_tilt", spec.real_tilt}};
}

CorpusSpec corpus_spec_from_json(const json& j) {
  if (j.value("version", 1) != 1) {
    throw Error("corpus spec version " + std::to_string(j.value("version", 0)) + " unsupported (expected 1)");
  }
  static const std::set<std::string> known = {"version", "chime4_scale", "counts", "snr_db", "tokens_per_utterance",
                                              "vocab_size", "token_ms", "sample_rate", "min_hz", "max_hz",
                                              "noise_pool_size", "real_tilt"};
  if (!j.is_object()) throw Error("corpus spec: expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error("corpus spec: unknown field '" + key + "'");
  }
  CorpusSpec s;
  if (j.contains("chime4_scale")) {
    const auto& sc = j.at("chime4_scale");
    s = CorpusSpec::chime4_scaled(sc.at("train").get<double>(), sc.at("heldout").get<double>());
  }
  if (j.contains("counts")) {
    s.counts.clear();
    for (const auto& c : j.at("counts")) {
      CorpusCount cc;
      cc.subset = parse_subset(c.at("subset").get<std::string>());
      cc.origin = parse_origin(c.at("origin").get<std::string>());
      const std::string dom = c.value("domain", cc.origin == Origin::CleanOrig ? "clean" : "noisy");
      if (dom != "noisy") cc.noise = parse_noise_kind(dom);
      cc.count = c.at("count").get<std::size_t>();
      s.counts.push_back(cc);
    }
  }
  if (j.contains("snr_db")) {
    s.snr_min_db = j.at("snr_db").at(0).get<double>();
    s.snr_max_db = j.at("snr_db").at(1).get<double>();
  }
  if (j.contains("tokens_per_utterance")) {
    s.min_tokens = j.at("tokens_per_utterance").at(0).get<std::size_t>();
    s.max_tokens = j.at("tokens_per_utterance").at(1).get<std::size_t>();
  }
  s.tokens.vocab_size = j.value("vocab_size", s.tokens.vocab_size);
  s.tokens.token_ms = j.value("token_ms", s.tokens.token_ms);
  s.tokens.sample_rate = j.value("sample_rate", s.tokens.sample_rate);
  s.tokens.min_hz = j.value("min_hz", s.tokens.min_hz);
  s.tokens.max_hz = j.value("max_hz", s.tokens.max_hz);
  s.noise_pool_size = j.value("noise_pool_size", s.noise_pool_size);
  s.real_tilt = j.value("real_tilt", s.real_tilt);
  s.validate();
  return s;
}

void Manifest::validate() const {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.id).second) throw Error("manifest: duplicate id '" + e.id + "'");
    if (!e.domain.valid()) throw Error("manifest: invalid domain/origin pair for '" + e.id + "'");
    if (e.tokens.empty()) throw Error("manifest: empty transcript for '" + e.id + "'");
    if (e.snr_db.has_value() != (e.domain.origin == Origin::Simu)) {
      throw Error("manifest: snr_db must be given exactly for simu entries ('" + e.id + "')");
    }
  }
}

std::size_t Manifest::count(Subset subset) const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.subset == subset;
  return n;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct SynthAudio {
  std::uint64_t clean_seed = 0;
  std::uint64_t noise_seed = 0;
  double snr = kCleanPassthrough;
  TokenSpec tokens;
  double tilt = 0.0;
};

std::string encode_synth(const SynthAudio& a, bool noisy) {
  std::ostringstream os;
  os << "synth:clean_seed=" << a.clean_seed;
  if (noisy) os << ",noise_seed=" << a.noise_seed << ",snr=" << format_double(a.snr);
  os << ",token_ms=" << format_double(a.tokens.token_ms) << ",sr=" << a.tokens.sample_rate
     << ",vocab=" << a.tokens.vocab_size << ",min_hz=" << format_double(a.tokens.min_hz)
     << ",max_hz=" << format_double(a.tokens.max_hz);
  if (a.tilt != 0.0) os << ",tilt=" << format_double(a.tilt);
  return os.str();
}

SynthAudio decode_synth(const std::string& audio) {
  SynthAudio a;
  std::map<std::string, std::string> kv;
  std::stringstream ss(audio.substr(6));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error("malformed synthetic audio spec '" + audio + "'");
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (!get("clean_seed")) throw Error("synthetic audio spec lacks clean_seed: '" + audio + "'");
  a.clean_seed = std::stoull(*get("clean_seed"));
  if (auto* v = get("noise_seed")) a.noise_seed = std::stoull(*v);
  if (auto* v = get("snr")) a.snr = std::stod(*v);
  if (auto* v = get("token_ms")) a.tokens.token_ms = std::stod(*v);
  if (auto* v = get("sr")) a.tokens.sample_rate = std::stoi(*v);
  if (auto* v = get("vocab")) a.tokens.vocab_size = std::stoi(*v);
  if (auto* v = get("min_hz")) a.tokens.min_hz = std::stod(*v);
  if (auto* v = get("max_hz")) a.tokens.max_hz = std::stod(*v);
  if (auto* v = get("tilt")) a.tilt = std::stod(*v);
  return a;
}

std::size_t noise_index(NoiseKind k) {
  for (std::size_t i = 0; i < 4; ++i) {
    if (kNoiseKinds[i] == k) return i;
  }
  return 0;
}

}  // namespace

Manifest build_corpus(const CorpusSpec& spec, std::uint64_t seed) {
  spec.validate();
  Manifest m;
  const std::uint64_t simu_pool = derive_seed(seed, "simu-noise-pool");
  const std::uint64_t real_pool = derive_seed(seed, "real-noise-pool");
  for (std::size_t cell = 0; cell < spec.counts.size(); ++cell) {
    const CorpusCount& c = spec.counts[cell];
    for (std::size_t i = 0; i < c.count; ++i) {
      NoiseKind kind = NoiseKind::Clean;
      if (c.origin != Origin::CleanOrig) kind = c.noise ? *c.noise : kNoiseKinds[i % 4];
      char idbuf[128];
      std::snprintf(idbuf, sizeof idbuf, "%s_%s_%s_c%zu_%05zu", std::string(to_string(c.subset)).c_str(),
                    std::string(to_string(c.origin)).c_str(), std::string(to_string(kind)).c_str(), cell, i);
      ManifestEntry e;
      e.id = idbuf;
      e.subset = c.subset;
      e.domain = Domain::make(kind, c.origin);

      const std::uint64_t base = derive_seed(seed, e.id);
      std::mt19937_64 token_rng(derive_seed(base, "tokens"));
      std::uniform_int_distribution<std::size_t> len_dist(spec.min_tokens, spec.max_tokens);
      std::uniform_int_distribution<int> tok_dist(1, spec.tokens.vocab_size - 1);
      e.tokens.resize(len_dist(token_rng));
      for (auto& t : e.tokens) t = tok_dist(token_rng);

      SynthAudio a;
      a.clean_seed = derive_seed(base, "clean");
      a.tokens = spec.tokens;
      const bool noisy = kind != NoiseKind::Clean;
      if (noisy) {
        std::mt19937_64 snr_rng(derive_seed(base, "snr"));
        a.snr = std::uniform_real_distribution<double>(spec.snr_min_db, spec.snr_max_db)(snr_rng);
        const std::uint64_t slot = derive_seed(base, "noise") % spec.noise_pool_size;
        const std::uint64_t pool = c.origin == Origin::Real ? real_pool : simu_pool;
        a.noise_seed = derive_seed(pool, noise_index(kind) * spec.noise_pool_size + slot);
        if (c.origin == Origin::Real) a.tilt = spec.real_tilt;
        if (c.origin == Origin::Simu) e.snr_db = a.snr;
      }
      e.audio = encode_synth(a, noisy);
      m.entries.push_back(std::move(e));
    }
  }
  m.validate();
  return m;
}

void write_manifest(const Manifest& m, std::ostream& os) {
  for (const auto& e : m.entries) {
    std::ostringstream text;
    for (std::size_t i = 0; i < e.tokens.size(); ++i) text << (i ? " " : "") << e.tokens[i];
    json j = {{"id", e.id},
              {"audio", e.audio},
              {"text", text.str()},
              {"domain", to_string(e.domain.noise)},
              {"origin", to_string(e.domain.origin)},
              {"snr_db", e.snr_db ? json(*e.snr_db) : json(nullptr)},
              {"subset", to_string(e.subset)}};
    os << j.dump() << '\n';
  }
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write manifest '" + path.string() + "'");
  write_manifest(m, os);
}

Manifest read_manifest(std::istream& is) {
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.audio = j.at("audio").get<std::string>();
      std::istringstream text(j.at("text").get<std::string>());
      int t;
      while (text >> t) e.tokens.push_back(t);
      e.domain = Domain::make(parse_noise_kind(j.at("domain").get<std::string>()),
                              parse_origin(j.at("origin").get<std::string>()));
      if (j.contains("snr_db") && !j.at("snr_db").is_null()) e.snr_db = j.at("snr_db").get<double>();
      e.subset = parse_subset(j.value("subset", std::string("train")));
      m.entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw Error("manifest line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  m.validate();
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read manifest '" + path.string() + "'");
  return read_manifest(is);
}

Utterance render_utterance(const ManifestEntry& entry, const std::filesystem::path& base_dir) {
  Utterance u;
  if (entry.synthetic()) {
    const SynthAudio a = decode_synth(entry.audio);
    u = synth_clean(a.clean_seed, entry.tokens, a.tokens);
    if (!entry.domain.clean()) {
      const auto noise = gen_noise(entry.domain.noise, u.waveform.size(), a.noise_seed, a.tokens.sample_rate);
      u.waveform = mix_at_snr(u.waveform, noise, a.snr).mixture;
      if (a.tilt != 0.0) u.waveform = channel_tilt(u.waveform, a.tilt);
    }
  } else {
    std::filesystem::path p(entry.audio);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    WavData w = read_wav(p);
    u.waveform = std::move(w.samples);
    u.sample_rate = w.sample_rate;
    u.tokens = entry.tokens;
  }
  u.id = entry.id;
  u.domain = entry.domain;
  u.snr_db = entry.snr_db;
  return u;
}

std::vector<const Example*> Dataset::subset(Subset s) const {
  std::vector<const Example*> out;
  for (const auto& e : items) {
    if (e.subset == s) out.push_back(&e);
  }
  return out;
}

std::vector<const Example*> Dataset::all() const {
  std::vector<const Example*> out;
  for (const auto& e : items) out.push_back(&e);
  return out;
}

Dataset load_dataset(const Manifest& manifest, const FeatureConfig& cfg,
                     const std::filesystem::path& base_dir) {
  LogMelExtractor ex(cfg);
  Dataset ds;
  ds.items.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    const Utterance u = render_utterance(e, base_dir);
    if (u.sample_rate != cfg.sample_rate) {
      throw Error("utterance '" + e.id + "' sample rate " + std::to_string(u.sample_rate) +
                  " does not match feature config " + std::to_string(cfg.sample_rate));
    }
    ds.items.push_back({e.id, ex.compute(u.waveform), e.tokens, e.domain, e.subset});
  }
  return ds;
}

}  // namespace modasr
