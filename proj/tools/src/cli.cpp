// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "experiment.hpp"
#include "modasr/seed.hpp"
#include "modasr/wav.hpp"

namespace modasr::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string fmt(double v, int digits = 4) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// First column left-aligned, the rest right-aligned, two-space gutters.
std::string aligned(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    if (width.size() < r.size()) width.resize(r.size(), 0);
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::ostringstream os;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < r.size(); ++i) {
      const std::string pad(width[i] - r[i].size(), ' ');
      if (i) line += "  ";
      line += i == 0 ? r[i] + pad : pad + r[i];
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    os << line << '\n';
  }
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

std::string csv(const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream os;
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << csv_field(r[i]);
    os << '\n';
  }
  return os.str();
}

std::string join_layers(const std::vector<std::size_t>& layers, const char* sep) {
  std::string s;
  for (std::size_t i = 0; i < layers.size(); ++i) s += (i ? sep : "") + std::to_string(layers[i]);
  return s;
}

std::string epoch_file(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch-%03d.ckpt", epoch);
  return buf;
}

// Command-line overrides shared by the config-driven subcommands.
struct Overrides {
  std::string config;
  std::string out;
  std::string name;
  std::int64_t seed = -1;
  std::string routing;
  std::size_t experts = 0;
  std::vector<std::size_t> layers;
  int frozen = -1;
  int epochs = -1;
  std::string router_checkpoint;
};

void add_config_flags(CLI::App* s, Overrides& o) {
  s->add_option("--config", o.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  s->add_option("--out", o.out, "Output directory (overrides output_dir)");
  s->add_option("--name", o.name, "Run name (seeds derive from it)");
  s->add_option("--seed", o.seed, "Top-level seed")->check(CLI::NonNegativeNumber);
}

void add_model_flags(CLI::App* s, Overrides& o) {
  s->add_option("--routing", o.routing, "none, fixed or learned")->check(CLI::IsMember({"none", "fixed", "learned"}));
  s->add_option("--experts", o.experts, "Experts per modular layer (2, 3 or 5)");
  s->add_option("--modular-layers", o.layers, "Comma-separated 1-based layer list")->delimiter(',');
  s->add_option("--router-checkpoint", o.router_checkpoint, "Pretrained router for learned routing");
}

ExperimentConfig resolve(const Overrides& o, CLI::App* s) {
  ExperimentConfig c = load_config(o.config);
  if (!o.out.empty()) c.output_dir = o.out;
  if (!o.name.empty()) c.name = o.name;
  if (o.seed >= 0) c.seed = static_cast<std::uint64_t>(o.seed);
  if (!o.routing.empty()) c.routing.mode = o.routing;
  if (o.experts) c.routing.experts = o.experts;
  if (const auto* opt = s->get_option_no_throw("--modular-layers"); opt && opt->count()) c.routing.modular_layers = o.layers;
  if (o.frozen >= 0) c.train.router_frozen_epochs = o.frozen;
  if (o.epochs > 0) c.train.max_epochs = o.epochs;
  if (!o.router_checkpoint.empty()) c.routing.router_checkpoint = fs::absolute(o.router_checkpoint).string();
  c.output_dir = resolve_output(c.output_dir).string();
  c.validate();
  return c;
}

fs::path prepare_output(const ExperimentConfig& c) {
  const fs::path dir(c.output_dir);
  fs::create_directories(dir);
  write_json(dir / "resolved_config.json", config_to_json(c));
  return dir;
}

void write_invocation(const fs::path& dir, const std::string& command, json args) {
  args["subcommand"] = command;
  args["version"] = kConfigVersion;
  write_json(dir / ("resolved_" + command + ".json"), args);
}

std::vector<const Example*> pick_subset(const Dataset& d, const std::string& which) {
  if (which == "heldout") return heldout(d);
  if (which == "all") return d.all();
  return d.subset(parse_subset(which));
}

std::vector<std::string> class_labels(ExpertScheme scheme) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < scheme_classes(scheme); ++i) out.emplace_back(scheme_class_name(scheme, i));
  return out;
}

std::mutex log_mutex;

void log_line(std::ostream& out, const std::string& s) {
  std::lock_guard<std::mutex> lock(log_mutex);
  out << s << '\n' << std::flush;
}

RouterTrainResult pretrain(const ExperimentConfig& c, const Dataset& d) {
  TrainSchedule s = c.router_train;
  s.seed = derive_seed(run_seed(c), "router");
  return pretrain_router(d.subset(Subset::Train), heldout(d), scheme_for_experts(c.routing.experts), s,
                         router_config(c));
}

void write_router_outputs(const fs::path& dir, const ExperimentConfig& c, const RouterTrainResult& r) {
  save_checkpoint(router_checkpoint(r.params), dir / "router.ckpt");
  const auto scheme = scheme_for_experts(c.routing.experts);
  write_text(dir / "router_confusion.csv", confusion_csv(r.confusion, class_labels(scheme)));
  std::vector<std::vector<std::string>> rows{{"epoch", "train_loss", "heldout_accuracy"}};
  for (const auto& e : r.curve) rows.push_back({std::to_string(e.epoch), fmt(e.train_loss, 6), fmt(e.heldout_accuracy, 6)});
  write_text(dir / "router_curve.csv", csv(rows));
  write_json(dir / "router_report.json", {{"fingerprint", router_fingerprint(r.params.config)},
                                          {"accuracy", r.accuracy},
                                          {"classes", class_labels(scheme)},
                                          {"confusion", r.confusion.counts}});
}

std::optional<RouterClassifierParams<float>> obtain_router(const ExperimentConfig& c, const Dataset& d,
                                                           const fs::path& dir, std::ostream& out) {
  if (c.routing.mode != "learned") return std::nullopt;
  if (!c.routing.router_checkpoint.empty()) {
    return router_from_checkpoint(load_checkpoint(c.routing.router_checkpoint), router_config(c));
  }
  const auto r = pretrain(c, d);
  write_router_outputs(dir, c, r);
  log_line(out, c.name + ": router pretrained, held-out accuracy " + fmt(r.accuracy));
  return r.params;
}

TrainResult train_run(const ExperimentConfig& c, const Dataset& d, std::ostream& out) {
  const fs::path dir = prepare_output(c);
  AsrModel model = build_model(c, obtain_router(c, d, dir, out));
  TrainSchedule s = c.train;
  s.seed = derive_seed(run_seed(c), "train");
  const auto result = train_asr(model, d.subset(Subset::Train), d.subset(Subset::Dev), s, [&](const EpochRecord& e) {
    std::string line = c.name + ": epoch " + std::to_string(e.epoch) + "/" + std::to_string(s.max_epochs) +
                       "  train " + fmt(e.train_loss) + "  val " + fmt(e.val_loss) + "  lr " + fmt(e.lr, 5);
    if (!std::isnan(e.util_entropy)) line += "  entropy " + fmt(e.util_entropy);
    if (model.learned()) line += e.router_frozen ? "  router frozen" : "  router trained";
    if (e.collapsed) line += "  COLLAPSED";
    log_line(out, line);
  });
  fs::create_directories(dir / "checkpoints");
  for (const auto& ck : result.checkpoints) save_checkpoint(ck, dir / "checkpoints" / epoch_file(ck.epoch));
  write_text(dir / "loss_curve.csv", loss_curve_csv(result.curve));
  write_json(dir / "epochs.json", curve_to_json(result.curve));
  return result;
}

std::vector<Checkpoint> load_run_checkpoints(const fs::path& dir) {
  const fs::path sub = fs::is_directory(dir / "checkpoints") ? dir / "checkpoints" : dir;
  if (!fs::is_directory(sub)) throw Error("no such run directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(sub)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && e.path().extension() == ".ckpt" && name.rfind("epoch-", 0) == 0) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Checkpoint> out;
  for (const auto& f : files) out.push_back(load_checkpoint(f));
  return out;
}

Checkpoint average_run(const fs::path& dir, std::size_t k, const fs::path& dest) {
  const auto cks = load_run_checkpoints(dir);
  if (cks.size() < k) {
    throw Error("average-checkpoints: " + dir.string() + " has " + std::to_string(cks.size()) +
                " epoch checkpoints, fewer than k = " + std::to_string(k));
  }
  const auto avg = average_checkpoints(cks, k);
  save_checkpoint(avg, dest);
  return avg;
}

// Rebuilds the configured architecture and loads `ckpt` into it.
AsrModel load_model(const ExperimentConfig& c, const Checkpoint& ck) {
  std::optional<RouterClassifierParams<float>> router;
  if (c.routing.mode == "learned") {
    std::mt19937_64 rng(0);
    router = RouterClassifierParams<float>::init(router_config(c), rng);
  }
  AsrModel m = build_model(c, router);
  if (ck.fingerprint != m.fingerprint()) {
    throw Error("checkpoint is for '" + ck.fingerprint + "' but the config builds '" + m.fingerprint() + "'");
  }
  restore(ck, m.parameters());
  return m;
}

fs::path default_checkpoint(const fs::path& dir) {
  if (fs::exists(dir / "averaged.ckpt")) return dir / "averaged.ckpt";
  const fs::path sub = dir / "checkpoints";
  if (fs::is_directory(sub)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(sub)) {
      if (e.path().extension() == ".ckpt") files.push_back(e.path());
    }
    if (!files.empty()) return *std::max_element(files.begin(), files.end());
  }
  throw Error("no checkpoint found in " + dir.string() + " (pass --checkpoint)");
}

void write_report(const fs::path& dir, const EvalReport& r, ExpertScheme scheme) {
  write_text(dir / "report.txt", format_report(r));
  write_json(dir / "report.json", report_to_json(r));
  if (r.routing_confusion) write_text(dir / "routing_confusion.csv", confusion_csv(*r.routing_confusion, class_labels(scheme)));
}

const std::vector<std::string> kSummarySubsets{"clean", "real-dev", "simu-dev", "real-eval", "simu-eval"};

std::vector<std::string> summary_header() {
  std::vector<std::string> h{"cell", "routing", "experts", "layers"};
  for (const auto& s : kSummarySubsets) h.push_back(s);
  h.insert(h.end(), {"macs_per_utt", "status"});
  return h;
}

// ---- subcommands ----------------------------------------------------------

int cmd_synth(const std::string& spec_path, std::uint64_t seed, const std::string& out_dir, bool wav,
              std::ostream& out) {
  const CorpusSpec spec = corpus_spec_from_json(read_json(spec_path));
  spec.validate();
  const fs::path dir = resolve_output(out_dir);
  fs::create_directories(dir);
  Manifest m = build_corpus(spec, seed);
  if (wav) {
    fs::create_directories(dir / "wav");
    for (auto& e : m.entries) {
      const auto u = render_utterance(e);
      const std::string rel = "wav/" + e.id + ".wav";
      write_wav(dir / rel, u.waveform, u.sample_rate);
      e.audio = rel;
    }
  }
  write_manifest(m, dir / "manifest.jsonl");
  json sj;
  to_json(sj, spec);
  write_json(dir / "corpus_spec.json", sj);
  write_json(dir / "resolved_config.json",
             {{"version", kConfigVersion}, {"subcommand", "synth-data"}, {"spec", sj}, {"seed", seed}, {"wav", wav}});
  out << "wrote " << m.entries.size() << " utterances (train " << m.count(Subset::Train) << ", dev "
      << m.count(Subset::Dev) << ", eval " << m.count(Subset::Eval) << ") to " << (dir / "manifest.jsonl").string()
      << '\n';
  return kExitOk;
}

int cmd_train_router(const ExperimentConfig& c, std::ostream& out) {
  const fs::path dir = prepare_output(c);
  const Dataset d = load_corpus(c);
  const auto r = pretrain(c, d);
  write_router_outputs(dir, c, r);
  for (const auto& e : r.curve) {
    out << "epoch " << e.epoch << "  loss " << fmt(e.train_loss) << "  held-out accuracy " << fmt(e.heldout_accuracy)
        << '\n';
  }
  out << confusion_csv(r.confusion, class_labels(scheme_for_experts(c.routing.experts)));
  out << "router accuracy " << fmt(r.accuracy) << "  -> " << (dir / "router.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_train_asr(const ExperimentConfig& c, std::ostream& out) {
  const Dataset d = load_corpus(c);
  const auto r = train_run(c, d, out);
  const auto best = std::min_element(r.curve.begin(), r.curve.end(),
                                     [](const EpochRecord& a, const EpochRecord& b) { return a.val_loss < b.val_loss; });
  out << "best val_loss " << fmt(best->val_loss) << " at epoch " << best->epoch << "  -> " << c.output_dir << '\n';
  return kExitOk;
}

int cmd_eval(const ExperimentConfig& c, const std::string& checkpoint, const std::string& subset, std::ostream& out) {
  const fs::path dir(c.output_dir);
  fs::create_directories(dir);
  const fs::path ck_path = checkpoint.empty() ? default_checkpoint(dir) : fs::path(checkpoint);
  const AsrModel m = load_model(c, load_checkpoint(ck_path));
  const Dataset d = load_corpus(c);
  const auto r = evaluate(m, pick_subset(d, subset));
  write_json(dir / "resolved_config.json", config_to_json(c));
  write_report(dir, r, scheme_for_experts(c.routing.modular() ? c.routing.experts : 2));
  out << "checkpoint " << ck_path.string() << '\n' << format_report(r);
  return kExitOk;
}

int cmd_route_stats(const fs::path& dir, std::ostream& out) {
  const auto curve = curve_from_json(read_json(dir / "epochs.json"));
  if (curve.empty() || std::isnan(curve.front().util_entropy)) {
    throw Error("route-stats: " + dir.string() + " is not a routed run");
  }
  const std::size_t e = curve.front().routing_counts.size();
  bool learned = true;
  if (fs::exists(dir / "resolved_config.json")) {
    learned = read_json(dir / "resolved_config.json").at("routing").at("mode") == "learned";
  }
  std::vector<std::string> header{"epoch"};
  for (std::size_t i = 0; i < e; ++i) header.push_back("expert_" + std::to_string(i));
  header.insert(header.end(), {"entropy", "max_fraction", "collapsed", "router_frozen", "router_delta"});
  std::vector<std::vector<std::string>> rows{header};
  for (const auto& r : curve) {
    std::vector<std::string> row{std::to_string(r.epoch)};
    for (auto n : r.routing_counts) row.push_back(std::to_string(n));
    row.insert(row.end(), {fmt(r.util_entropy), fmt(r.max_fraction), r.collapsed ? "yes" : "no",
                           learned ? (r.router_frozen ? "yes" : "no") : "-", learned ? fmt(r.router_delta, 6) : "-"});
    rows.push_back(row);
  }
  const std::size_t collapsed = std::count_if(curve.begin(), curve.end(), [](const EpochRecord& r) { return r.collapsed; });
  std::string text = aligned(rows);
  text += "collapsed epochs " + std::to_string(collapsed) + " of " + std::to_string(curve.size()) + " (threshold max_fraction > " +
          fmt(kCollapseThreshold, 2) + ")\n";
  write_text(dir / "route_stats.txt", text);
  write_text(dir / "route_stats.csv", csv(rows));
  write_invocation(dir, "route-stats", {{"dir", dir.string()}});
  out << text;
  return kExitOk;
}

int cmd_average(const fs::path& dir, std::size_t k, const std::string& dest, std::ostream& out) {
  const fs::path target = dest.empty() ? dir / "averaged.ckpt" : fs::path(dest);
  const auto avg = average_run(dir, k, target);
  write_invocation(dir, "average-checkpoints", {{"dir", dir.string()}, {"k", k}, {"out", target.string()}});
  out << "averaged epochs";
  for (int e : avg.contributing_epochs) out << ' ' << e;
  out << "  -> " << target.string() << '\n';
  return kExitOk;
}

int cmd_export_loss(const fs::path& dir, const std::string& dest, std::ostream& out) {
  const auto curve = curve_from_json(read_json(dir / "epochs.json"));
  const std::string text = loss_curve_csv(curve);
  if (dest == "-") {
    out << text;
  } else {
    const fs::path target = dest.empty() ? dir / "loss_curve.csv" : fs::path(dest);
    write_text(target, text);
    out << "wrote " << curve.size() << " epochs to " << target.string() << '\n';
  }
  write_invocation(dir, "export-loss", {{"dir", dir.string()}, {"out", dest}});
  return kExitOk;
}

int cmd_confusion(const ExperimentConfig& c, const std::string& router_path, const std::string& subset,
                  std::ostream& out) {
  const fs::path dir(c.output_dir);
  fs::path path = router_path;
  if (path.empty()) path = c.routing.router_checkpoint.empty() ? dir / "router.ckpt" : fs::path(c.routing.router_checkpoint);
  const auto router = router_from_checkpoint(load_checkpoint(path), router_config(c));
  const Dataset d = load_corpus(c);
  const auto scheme = scheme_for_experts(c.routing.experts);
  const auto m = router_confusion(router, pick_subset(d, subset), scheme);
  const std::string text = confusion_csv(m, class_labels(scheme));
  fs::create_directories(dir);
  write_text(dir / "router_confusion.csv", text);
  write_json(dir / "resolved_config.json", config_to_json(c));
  out << text << "accuracy " << fmt(m.accuracy()) << '\n';
  return kExitOk;
}

int cmd_grid(const ExperimentConfig& base, std::size_t jobs, std::ostream& out) {
  const fs::path dir = prepare_output(base);
  const auto cells = expand_grid(base);
  std::vector<std::vector<std::string>> rows(cells.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::optional<Dataset> data;
  if (!cells.empty()) data = load_corpus(base);
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const GridCell& cell = cells[i];
      std::vector<std::string> row{cell_name(cell), cell.routing, cell.routing == "none" ? "-" : std::to_string(cell.experts),
                                   cell.routing == "none" ? "-" : join_layers(cell.modular_layers, "-")};
      try {
        const ExperimentConfig c = apply_cell(base, cell);
        const auto result = train_run(c, *data, out);
        const std::size_t k = std::min(c.average_k, result.checkpoints.size());
        const auto avg = average_checkpoints(result.checkpoints, k);
        save_checkpoint(avg, fs::path(c.output_dir) / "averaged.ckpt");
        const auto report = evaluate(load_model(c, avg), heldout(*data));
        write_report(c.output_dir, report, scheme_for_experts(c.routing.modular() ? c.routing.experts : 2));
        for (const auto& s : kSummarySubsets) row.push_back(report.has(s) ? fmt(100.0 * report.subsets.at(s).wer(), 2) : "-");
        row.push_back(std::to_string(report.macs_per_utterance));
        row.push_back("ok");
      } catch (const std::exception& e) {
        failed = true;
        row.resize(4);
        for (std::size_t s = 0; s < kSummarySubsets.size() + 1; ++s) row.push_back("-");
        row.push_back(std::string("failed: ") + e.what());
        log_line(out, cell_name(cell) + ": FAILED " + e.what());
      }
      rows[i] = std::move(row);
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(jobs, cells.size()); ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  rows.insert(rows.begin(), summary_header());
  const std::string text = aligned(rows);
  write_text(dir / "summary.txt", text);
  write_text(dir / "summary.csv", csv(rows));
  out << text;
  return failed ? kExitFailure : kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Modular conformer ASR toolkit", "modasr"};
  app.require_subcommand(1);
  app.fallthrough(false);

  std::string spec_path, synth_out;
  std::uint64_t synth_seed = 0;
  bool synth_wav = false;
  auto* synth = app.add_subcommand("synth-data", "Synthesize a corpus manifest");
  synth->add_option("--spec", spec_path, "Corpus spec (JSON)")->required()->check(CLI::ExistingFile);
  synth->add_option("--seed", synth_seed, "Corpus seed")->required();
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_flag("--wav", synth_wav, "Also export 16-bit PCM WAV files");

  Overrides router_o;
  auto* train_router = app.add_subcommand("train-router", "Pretrain the routing classifier");
  add_config_flags(train_router, router_o);
  train_router->add_option("--experts", router_o.experts, "Router classes (2, 3 or 5)");
  train_router->add_option("--epochs", router_o.epochs, "Override router_train.max_epochs")->check(CLI::PositiveNumber);

  Overrides asr_o;
  auto* train = app.add_subcommand("train-asr", "Train a baseline or modular model");
  add_config_flags(train, asr_o);
  add_model_flags(train, asr_o);
  train->add_option("--frozen-epochs", asr_o.frozen, "Epochs with the router frozen")->check(CLI::NonNegativeNumber);
  train->add_option("--epochs", asr_o.epochs, "Override train.max_epochs")->check(CLI::PositiveNumber);

  Overrides eval_o;
  std::string eval_ckpt, eval_subset = "heldout";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_config_flags(eval, eval_o);
  add_model_flags(eval, eval_o);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint (default: averaged.ckpt or the last epoch)");
  eval->add_option("--subset", eval_subset, "train, dev, eval, heldout or all")
      ->check(CLI::IsMember({"train", "dev", "eval", "heldout", "all"}));

  std::string stats_dir;
  auto* stats = app.add_subcommand("route-stats", "Per-epoch expert utilization of a run");
  stats->add_option("--dir", stats_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  std::string avg_dir, avg_out;
  std::size_t avg_k = 10;
  auto* avg = app.add_subcommand("average-checkpoints", "Average the k best epoch checkpoints");
  avg->add_option("--dir", avg_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  avg->add_option("--k", avg_k, "Checkpoints to average")->check(CLI::PositiveNumber);
  avg->add_option("--out", avg_out, "Destination (default: <dir>/averaged.ckpt)");

  std::string loss_dir, loss_out;
  auto* loss = app.add_subcommand("export-loss", "Write the loss curve as CSV");
  loss->add_option("--dir", loss_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  loss->add_option("--out", loss_out, "Destination, '-' for stdout (default: <dir>/loss_curve.csv)");

  Overrides grid_o;
  std::size_t grid_jobs = 1;
  auto* grid = app.add_subcommand("grid", "Run every cell of the config grid");
  add_config_flags(grid, grid_o);
  grid->add_option("--jobs", grid_jobs, "Cells run in parallel (default 1)")->check(CLI::PositiveNumber);

  Overrides conf_o;
  std::string conf_router, conf_subset = "heldout";
  auto* conf = app.add_subcommand("confusion", "Router confusion matrix as CSV");
  add_config_flags(conf, conf_o);
  conf->add_option("--experts", conf_o.experts, "Router classes (2, 3 or 5)");
  conf->add_option("--router", conf_router, "Router checkpoint (default: routing.router_checkpoint or <out>/router.ckpt)");
  conf->add_option("--subset", conf_subset, "train, dev, eval, heldout or all")
      ->check(CLI::IsMember({"train", "dev", "eval", "heldout", "all"}));

  if (!args.empty() && !args[0].empty() && args[0][0] != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == args[0];
    if (!known) {
      err << "error: unknown subcommand '" << args[0] << "'\n" << app.help();
      return kExitUsage;
    }
  }
  std::vector<std::string> argv_store{"modasr"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(spec_path, synth_seed, synth_out, synth_wav, out);
    if (train_router->parsed()) {
      ExperimentConfig c = resolve(router_o, train_router);
      if (router_o.epochs > 0) c.router_train.max_epochs = router_o.epochs;
      if (c.routing.mode == "none") c.routing.mode = "learned";
      c.validate();
      return cmd_train_router(c, out);
    }
    if (train->parsed()) return cmd_train_asr(resolve(asr_o, train), out);
    if (eval->parsed()) return cmd_eval(resolve(eval_o, eval), eval_ckpt, eval_subset, out);
    if (stats->parsed()) return cmd_route_stats(stats_dir, out);
    if (avg->parsed()) return cmd_average(avg_dir, avg_k, avg_out, out);
    if (loss->parsed()) return cmd_export_loss(loss_dir, loss_out, out);
    if (grid->parsed()) return cmd_grid(resolve(grid_o, grid), grid_jobs, out);
    if (conf->parsed()) return cmd_confusion(resolve(conf_o, conf), conf_router, conf_subset, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  err << "error: no subcommand\n" << app.help();
  return kExitUsage;
}

}  // namespace modasr::cli
