// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "modasr/seed.hpp"

namespace modasr::cli {

using json = nlohmann::json;

namespace {

// Reads the fields of one JSON object, remembering which keys were used so
// leftovers can be reported with their full path.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + "expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + "has the wrong type (" + j_.at(key).dump() + ")");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }
  std::string where(const std::string& key) const {
    const std::string p = path_.empty() ? key : key.empty() ? path_ : path_ + "." + key;
    return p.empty() ? "" : p + ": ";
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError(where(key) + "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig e;
  Fields f(j, "encoder");
  f.get("feat_dim", e.feat_dim);
  f.get("num_layers", e.num_layers);
  f.get("d_model", e.d_model);
  f.get("heads", e.heads);
  f.get("ffn_dim", e.ffn_dim);
  f.get("kernel_size", e.kernel_size);
  f.get("vocab_size", e.vocab_size);
  f.get("subsampling", e.subsampling);
  f.get("frontend_kernel", e.frontend_kernel);
  f.get("dropout", e.dropout);
  f.finish();
  return e;
}

json encoder_to_json(const EncoderConfig& e) {
  return {{"feat_dim", e.feat_dim},       {"num_layers", e.num_layers},   {"d_model", e.d_model},
          {"heads", e.heads},             {"ffn_dim", e.ffn_dim},         {"kernel_size", e.kernel_size},
          {"vocab_size", e.vocab_size},   {"subsampling", e.subsampling}, {"frontend_kernel", e.frontend_kernel},
          {"dropout", e.dropout}};
}

FeatureConfig features_from_json(const json& j) {
  FeatureConfig c;
  Fields f(j, "features");
  f.get("sample_rate", c.sample_rate);
  f.get("window", c.window);
  f.get("hop", c.hop);
  f.get("fft_size", c.fft_size);
  f.get("mel_bins", c.mel_bins);
  f.get("low_hz", c.low_hz);
  f.get("high_hz", c.high_hz);
  f.get("log_floor", c.log_floor);
  f.finish();
  return c;
}

json features_to_json(const FeatureConfig& c) {
  return {{"sample_rate", c.sample_rate}, {"window", c.window}, {"hop", c.hop},         {"fft_size", c.fft_size},
          {"mel_bins", c.mel_bins},       {"low_hz", c.low_hz}, {"high_hz", c.high_hz}, {"log_floor", c.log_floor}};
}

TrainSchedule schedule_from_json(const json& j, const std::string& path, TrainSchedule s) {
  Fields f(j, path);
  if (f.has("seed")) throw ConfigError(f.where("seed") + "not configurable; derived from the top-level seed and name");
  f.get("max_epochs", s.max_epochs);
  f.get("warmup_steps", s.warmup_steps);
  f.get("peak_lr", s.peak_lr);
  f.get("batch_size", s.batch_size);
  f.get("router_frozen_epochs", s.router_frozen_epochs);
  f.get("momentum", s.momentum);
  f.get("clip_norm", s.clip_norm);
  f.finish();
  return s;
}

json schedule_to_json(const TrainSchedule& s) {
  json j = to_json(s);
  j.erase("seed");
  return j;
}

std::string init_name(ExpertInit i) { return i == ExpertInit::Clone ? "clone" : "independent"; }

RoutingSpec routing_from_json(const json& j) {
  RoutingSpec r;
  Fields f(j, "routing");
  f.get("mode", r.mode);
  f.get("experts", r.experts);
  f.get("modular_layers", r.modular_layers);
  std::string init = init_name(r.init);
  f.get("init", init);
  if (init == "clone") {
    r.init = ExpertInit::Clone;
  } else if (init != "independent") {
    throw ConfigError(f.where("init") + "expected independent or clone, got '" + init + "'");
  }
  if (f.has("router")) {
    Fields rf(f.raw("router"), "routing.router");
    rf.get("channels", r.router_channels);
    rf.get("kernel_size", r.router_kernel);
    rf.get("pool", r.router_pool);
    rf.finish();
  }
  f.get("router_checkpoint", r.router_checkpoint);
  f.finish();
  return r;
}

json routing_to_json(const RoutingSpec& r) {
  return {{"mode", r.mode},
          {"experts", r.experts},
          {"modular_layers", r.modular_layers},
          {"init", init_name(r.init)},
          {"router", {{"channels", r.router_channels}, {"kernel_size", r.router_kernel}, {"pool", r.router_pool}}},
          {"router_checkpoint", r.router_checkpoint}};
}

GridCell cell_from_json(const json& j, const std::string& path, const RoutingSpec& base) {
  GridCell c{base.mode, base.experts, base.modular_layers};
  Fields f(j, path);
  f.get("routing", c.routing);
  f.get("experts", c.experts);
  f.get("modular_layers", c.modular_layers);
  f.finish();
  return c;
}

GridSpec grid_from_json(const json& j, const RoutingSpec& base) {
  GridSpec g;
  Fields f(j, "grid");
  if (f.has("cells")) {
    const json& cells = f.raw("cells");
    if (!cells.is_array()) throw ConfigError("grid.cells: expected an array");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      g.cells.push_back(cell_from_json(cells[i], "grid.cells[" + std::to_string(i) + "]", base));
    }
  }
  f.get("routing", g.routing);
  f.get("experts", g.experts);
  f.get("modular_layers", g.modular_layers);
  f.finish();
  return g;
}

json grid_to_json(const GridSpec& g) {
  json cells = json::array();
  for (const auto& c : g.cells) {
    cells.push_back({{"routing", c.routing}, {"experts", c.experts}, {"modular_layers", c.modular_layers}});
  }
  return {{"cells", cells}, {"routing", g.routing}, {"experts", g.experts}, {"modular_layers", g.modular_layers}};
}

void validate_routing(const RoutingSpec& r, const EncoderConfig& enc, const TrainSchedule& train,
                      const std::string& prefix) {
  if (r.mode != "none" && r.mode != "fixed" && r.mode != "learned") {
    throw ConfigError(prefix + "routing.mode: expected none, fixed or learned, got '" + r.mode + "'");
  }
  if (!r.modular()) return;
  if (r.experts != 2 && r.experts != 3 && r.experts != 5) {
    throw ConfigError(prefix + "routing.experts: " + std::to_string(r.experts) +
                      " has no expert class scheme (use 2, 3 or 5)");
  }
  if (r.modular_layers.empty()) throw ConfigError(prefix + "routing.modular_layers: at least one layer is required");
  std::set<std::size_t> seen;
  for (std::size_t l : r.modular_layers) {
    if (l < 1 || l > enc.num_layers) {
      throw ConfigError(prefix + "routing.modular_layers: layer " + std::to_string(l) + " is outside 1.." +
                        std::to_string(enc.num_layers) + " (encoder.num_layers)");
    }
    if (!seen.insert(l).second) {
      throw ConfigError(prefix + "routing.modular_layers: layer " + std::to_string(l) + " is listed twice");
    }
  }
  if (r.mode == "learned" && (r.router_channels == 0 || r.router_kernel == 0 || r.router_pool == 0)) {
    throw ConfigError(prefix + "routing.router: channels, kernel_size and pool must be positive");
  }
  if (r.mode != "learned" && train.router_frozen_epochs != 0) {
    throw ConfigError(prefix + "train.router_frozen_epochs: only meaningful with routing.mode learned");
  }
}

}  // namespace

std::set<std::size_t> RoutingSpec::zero_based_layers() const {
  std::set<std::size_t> out;
  for (std::size_t l : modular_layers) out.insert(l - 1);
  return out;
}

void ExperimentConfig::validate() const {
  if (name.empty() || name.find_first_of("/\\") != std::string::npos) {
    throw ConfigError("name: must be non-empty and contain no path separators");
  }
  if (output_dir.empty()) throw ConfigError("output_dir: must be non-empty");
  if (corpus.manifest.empty() == !corpus.spec.has_value()) {
    throw ConfigError("corpus: exactly one of manifest or spec is required");
  }
  try {
    features.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("features.") + e.what());
  }
  try {
    encoder.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("encoder.") + e.what());
  }
  if (encoder.feat_dim != features.mel_bins) {
    throw ConfigError("encoder.feat_dim: " + std::to_string(encoder.feat_dim) + " must equal features.mel_bins " +
                      std::to_string(features.mel_bins));
  }
  if (corpus.spec) {
    try {
      corpus.spec->validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("corpus.spec: ") + e.what());
    }
    if (static_cast<int>(encoder.vocab_size) != corpus.spec->tokens.vocab_size) {
      throw ConfigError("encoder.vocab_size: " + std::to_string(encoder.vocab_size) +
                        " must equal corpus.spec.vocab_size " + std::to_string(corpus.spec->tokens.vocab_size));
    }
    if (corpus.spec->tokens.sample_rate != features.sample_rate) {
      throw ConfigError("features.sample_rate: must equal corpus.spec.sample_rate");
    }
  }
  if (train.router_frozen_epochs > train.max_epochs) {
    throw ConfigError("train.router_frozen_epochs: " + std::to_string(train.router_frozen_epochs) +
                      " exceeds train.max_epochs " + std::to_string(train.max_epochs));
  }
  try {
    train.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  try {
    router_train.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("router_train: ") + e.what());
  }
  if (average_k < 1) throw ConfigError("average_k: must be >= 1");
  validate_routing(routing, encoder, train, "");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Fields f(j, "");
  if (!j.contains("version")) throw ConfigError("version: required (expected " + std::to_string(kConfigVersion) + ")");
  int version = 0;
  f.get("version", version);
  if (version != kConfigVersion) {
    throw ConfigError("version: " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kConfigVersion) + ")");
  }
  f.get("name", c.name);
  f.get("seed", c.seed);
  f.get("output_dir", c.output_dir);
  if (f.has("corpus")) {
    Fields cf(f.raw("corpus"), "corpus");
    cf.get("manifest", c.corpus.manifest);
    if (cf.has("spec")) {
      try {
        c.corpus.spec = corpus_spec_from_json(cf.raw("spec"));
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError(std::string("corpus.spec: ") + e.what());
      }
    }
    cf.finish();
  }
  if (f.has("features")) c.features = features_from_json(f.raw("features"));
  if (f.has("encoder")) c.encoder = encoder_from_json(f.raw("encoder"));
  if (f.has("routing")) c.routing = routing_from_json(f.raw("routing"));
  if (f.has("train")) c.train = schedule_from_json(f.raw("train"), "train", c.train);
  if (f.has("router_train")) c.router_train = schedule_from_json(f.raw("router_train"), "router_train", c.router_train);
  f.get("average_k", c.average_k);
  if (f.has("grid")) c.grid = grid_from_json(f.raw("grid"), c.routing);
  f.finish();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json corpus = json::object();
  if (!c.corpus.manifest.empty()) corpus["manifest"] = c.corpus.manifest;
  if (c.corpus.spec) {
    json s;
    to_json(s, *c.corpus.spec);
    corpus["spec"] = s;
  }
  return {{"version", kConfigVersion},
          {"name", c.name},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"corpus", corpus},
          {"features", features_to_json(c.features)},
          {"encoder", encoder_to_json(c.encoder)},
          {"routing", routing_to_json(c.routing)},
          {"train", schedule_to_json(c.train)},
          {"router_train", schedule_to_json(c.router_train)},
          {"average_k", c.average_k},
          {"grid", grid_to_json(c.grid)}};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": not valid JSON (" + e.what() + ")");
  }
  ExperimentConfig c = config_from_json(j);
  // Paths inside the file are relative to the file.
  const auto base = std::filesystem::absolute(path).parent_path();
  auto anchor = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  anchor(c.corpus.manifest);
  anchor(c.routing.router_checkpoint);
  return c;
}

std::uint64_t run_seed(const ExperimentConfig& c) { return derive_seed(c.seed, c.name); }
std::uint64_t corpus_seed(const ExperimentConfig& c) { return derive_seed(c.seed, "corpus"); }

std::filesystem::path resolve_output(const std::string& dir) {
  std::filesystem::path p(dir);
  const char* root = std::getenv("MODASR_OUTPUT_ROOT");
  if (root && *root && p.is_relative()) p = std::filesystem::path(root) / p;
  return p;
}

std::vector<GridCell> expand_grid(const ExperimentConfig& c) {
  std::vector<GridCell> out = c.grid.cells;
  const auto& g = c.grid;
  if (g.routing.empty() && g.experts.empty() && g.modular_layers.empty()) return out;
  const std::vector<std::string> modes = g.routing.empty() ? std::vector<std::string>{c.routing.mode} : g.routing;
  const std::vector<std::size_t> experts = g.experts.empty() ? std::vector<std::size_t>{c.routing.experts} : g.experts;
  const auto layers = g.modular_layers.empty() ? std::vector<std::vector<std::size_t>>{c.routing.modular_layers}
                                               : g.modular_layers;
  for (const auto& m : modes) {
    for (std::size_t e : experts) {
      for (const auto& l : layers) out.push_back({m, e, l});
    }
  }
  return out;
}

std::string cell_name(const GridCell& cell) {
  if (cell.routing == "none") return "baseline";
  std::ostringstream os;
  os << cell.routing << "-e" << cell.experts << "-l";
  for (std::size_t i = 0; i < cell.modular_layers.size(); ++i) os << (i ? "-" : "") << cell.modular_layers[i];
  return os.str();
}

ExperimentConfig apply_cell(const ExperimentConfig& base, const GridCell& cell) {
  ExperimentConfig c = base;
  c.grid = {};
  c.name = base.name + "-" + cell_name(cell);
  c.output_dir = (std::filesystem::path(base.output_dir) / cell_name(cell)).string();
  c.routing.mode = cell.routing;
  c.routing.experts = cell.experts;
  c.routing.modular_layers = cell.modular_layers;
  if (cell.routing != "learned") c.train.router_frozen_epochs = 0;
  c.validate();
  return c;
}

Dataset load_corpus(const ExperimentConfig& c) {
  if (c.corpus.spec) return load_dataset(build_corpus(*c.corpus.spec, corpus_seed(c)), c.features);
  const std::filesystem::path p(c.corpus.manifest);
  return load_dataset(read_manifest(p), c.features, p.parent_path());
}

std::vector<const Example*> heldout(const Dataset& d) {
  auto out = d.subset(Subset::Dev);
  const auto ev = d.subset(Subset::Eval);
  out.insert(out.end(), ev.begin(), ev.end());
  return out;
}

RouterConfig router_config(const ExperimentConfig& c) {
  RouterConfig rc;
  rc.feat_dim = c.features.mel_bins;
  rc.channels = c.routing.router_channels;
  rc.kernel_size = c.routing.router_kernel;
  rc.pool = c.routing.router_pool;
  rc.classes = c.routing.experts;
  return rc;
}

AsrModel build_model(const ExperimentConfig& c, const std::optional<RouterClassifierParams<float>>& router) {
  const std::uint64_t seed = derive_seed(run_seed(c), "model");
  if (!c.routing.modular()) return AsrModel::baseline(c.encoder, seed);
  const RoutingMode mode = parse_routing_mode(c.routing.mode);
  if (mode == RoutingMode::Learned && !router) throw Error("learned routing needs a router");
  return AsrModel::modular(c.encoder, seed, mode, c.routing.zero_based_layers(), c.routing.experts, c.routing.init,
                           mode == RoutingMode::Learned ? router : std::nullopt);
}

std::string router_fingerprint(const RouterConfig& rc) {
  std::ostringstream os;
  os << "router-F" << rc.feat_dim << "-c" << rc.channels << "-k" << rc.kernel_size << "-p" << rc.pool << "-E"
     << rc.classes;
  return os.str();
}

Checkpoint router_checkpoint(const RouterClassifierParams<float>& r) {
  ParamList<float> ps;
  r.collect("router", ps);
  return snapshot(ps, router_fingerprint(r.config), 0, std::numeric_limits<double>::quiet_NaN());
}

RouterClassifierParams<float> router_from_checkpoint(const Checkpoint& ck, const RouterConfig& rc) {
  if (ck.fingerprint != router_fingerprint(rc)) {
    throw Error("router checkpoint is for '" + ck.fingerprint + "' but the config needs '" + router_fingerprint(rc) +
                "'");
  }
  std::mt19937_64 rng(0);
  auto r = RouterClassifierParams<float>::init(rc, rng);
  ParamList<float> ps;
  r.collect("router", ps);
  restore(ck, ps);
  return r;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(path.string() + ": not valid JSON (" + e.what() + ")");
  }
}

}  // namespace modasr::cli
