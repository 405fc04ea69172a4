// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "modasr/eval.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <sstream>

namespace modasr {

WerResult wer(std::span<const int> ref, std::span<const int> hyp) {
  if (ref.empty()) throw Error("wer: empty reference");
  const std::size_t n = ref.size(), m = hyp.size();
  // cost[i][j] for ref[:i] vs hyp[:j]; ops traced back afterwards.
  std::vector<std::vector<std::size_t>> cost(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) cost[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) cost[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = cost[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cost[i][j] = std::min({diag, cost[i - 1][j] + 1, cost[i][j - 1] + 1});
    }
  }
  WerResult r;
  r.ref_length = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && cost[i][j] == cost[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++r.substitutions;
      --i;
      --j;
    } else if (i > 0 && cost[i][j] == cost[i - 1][j] + 1) {
      ++r.deletions;
      --i;
    } else {
      ++r.insertions;
      --j;
    }
  }
  r.wer = static_cast<double>(r.errors()) / static_cast<double>(n);
  return r;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (const auto& row : counts) {
    for (auto c : row) t += c;
  }
  return t;
}

std::size_t ConfusionMatrix::row_sum(std::size_t t) const {
  std::size_t s = 0;
  for (auto c : counts.at(t)) s += c;
  return s;
}

double ConfusionMatrix::accuracy() const {
  const std::size_t t = total();
  if (t == 0) return 0.0;
  std::size_t diag = 0;
  for (std::size_t i = 0; i < classes; ++i) diag += counts[i][i];
  return static_cast<double>(diag) / static_cast<double>(t);
}

std::vector<std::vector<double>> ConfusionMatrix::row_normalized() const {
  std::vector<std::vector<double>> out(classes, std::vector<double>(classes, 0.0));
  for (std::size_t i = 0; i < classes; ++i) {
    const std::size_t s = row_sum(i);
    if (s == 0) continue;
    for (std::size_t j = 0; j < classes; ++j) out[i][j] = static_cast<double>(counts[i][j]) / static_cast<double>(s);
  }
  return out;
}

ConfusionMatrix confusion(std::span<const std::size_t> true_labels, std::span<const std::size_t> predicted,
                          std::size_t classes) {
  if (true_labels.size() != predicted.size()) {
    throw Error("confusion: " + std::to_string(true_labels.size()) + " labels but " +
                std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < true_labels.size(); ++i) {
    if (true_labels[i] >= classes || predicted[i] >= classes) {
      throw Error("confusion: label out of range for " + std::to_string(classes) + " classes");
    }
    ++m.counts[true_labels[i]][predicted[i]];
  }
  return m;
}

std::string confusion_csv(const ConfusionMatrix& m, const std::vector<std::string>& labels) {
  if (labels.size() != m.classes) throw Error("confusion_csv: label count differs from class count");
  std::ostringstream os;
  os << "predicted\\true";
  for (const auto& l : labels) os << ',' << l;
  os << '\n';
  for (std::size_t p = 0; p < m.classes; ++p) {
    os << labels[p];
    for (std::size_t t = 0; t < m.classes; ++t) os << ',' << m.counts[t][p];
    os << '\n';
  }
  return os.str();
}

double EvalReport::pooled_wer(const std::vector<std::string>& names) const {
  std::size_t errors = 0, tokens = 0;
  for (const auto& n : names) {
    auto it = subsets.find(n);
    if (it == subsets.end()) continue;
    errors += it->second.errors();
    tokens += it->second.ref_tokens;
  }
  if (tokens == 0) throw Error("pooled_wer: none of the requested subsets are present");
  return static_cast<double>(errors) / static_cast<double>(tokens);
}

std::string report_subset(const Domain& domain, Subset subset) {
  if (domain.clean()) return "clean";
  return std::string(to_string(domain.origin)) + "-" + std::string(to_string(subset));
}

std::vector<std::string> report_column_order() {
  return {"clean", "real-dev", "simu-dev", "real-eval", "simu-eval", "real-train", "simu-train"};
}

EvalReport evaluate(const AsrModel& model, std::span<const Example* const> examples) {
  model.validate();
  EvalReport r;
  r.fingerprint = model.fingerprint();
  if (examples.empty()) return r;
  const auto vocab = static_cast<int>(model.encoder.config.vocab_size);
  std::vector<RoutingDecision> decisions;
  std::vector<std::size_t> labels;
  std::uint64_t macs = 0;
  NoGradGuard no_grad;
  for (const Example* ex : examples) {
    for (int t : ex->tokens) {
      if (t <= 0 || t >= vocab) {
        throw Error("utterance " + ex->id + " has token " + std::to_string(t) + " outside the model vocabulary [1, " +
                    std::to_string(vocab) + ")");
      }
    }
    std::vector<RoutingDecision> d;
    const std::array<const Example*, 1> one{ex};
    mac::Scope scope;
    const auto logits = model_logits(model, one, &d);
    macs += scope.count();
    const auto hyp = ctc_greedy_decode(logits.front());
    const WerResult w = wer(ex->tokens, hyp);
    SubsetScore& s = r.subsets[report_subset(ex->domain, ex->subset)];
    ++s.utterances;
    s.ref_tokens += w.ref_length;
    s.substitutions += w.substitutions;
    s.insertions += w.insertions;
    s.deletions += w.deletions;
    if (!d.empty()) {
      labels.push_back(scheme_label(ex->domain, model.routing->scheme));
      decisions.push_back(std::move(d.front()));
    }
  }
  r.macs_per_utterance = macs / examples.size();
  if (model.routing) {
    r.routing = utilization_stats(decisions, model.num_experts());
    if (model.learned()) {
      std::vector<std::size_t> predicted;
      for (const auto& d : decisions) predicted.push_back(d.expert_index);
      r.routing_confusion = confusion(labels, predicted, model.num_experts());
    }
  }
  return r;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "model   " << r.fingerprint << '\n' << "decode  " << r.decode_method << '\n';
  char line[160];
  std::snprintf(line, sizeof line, "%-11s %6s %7s %5s %5s %5s %8s\n", "subset", "utts", "tokens", "S", "I", "D",
                "WER%");
  os << line;
  for (const auto& name : report_column_order()) {
    auto it = r.subsets.find(name);
    if (it == r.subsets.end()) continue;
    const auto& s = it->second;
    std::snprintf(line, sizeof line, "%-11s %6zu %7zu %5zu %5zu %5zu %8.2f\n", name.c_str(), s.utterances,
                  s.ref_tokens, s.substitutions, s.insertions, s.deletions, 100.0 * s.wer());
    os << line;
  }
  if (r.routing) {
    os << "routing counts";
    for (auto c : r.routing->counts) os << ' ' << c;
    std::snprintf(line, sizeof line, "  entropy %.4f nats  max_fraction %.4f  collapsed %s\n", r.routing->entropy,
                  r.routing->max_fraction, r.routing->collapsed ? "yes" : "no");
    os << line;
  }
  if (r.routing_confusion) os << "router accuracy " << r.routing_confusion->accuracy() << '\n';
  os << "macs/utt " << r.macs_per_utterance << '\n';
  return os.str();
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["fingerprint"] = r.fingerprint;
  j["decode_method"] = r.decode_method;
  j["macs_per_utterance"] = r.macs_per_utterance;
  nlohmann::json subsets = nlohmann::json::object();
  for (const auto& [name, s] : r.subsets) {
    subsets[name] = {{"utterances", s.utterances}, {"ref_tokens", s.ref_tokens}, {"substitutions", s.substitutions},
                     {"insertions", s.insertions}, {"deletions", s.deletions}, {"wer", s.wer()}};
  }
  j["subsets"] = subsets;
  if (r.routing) {
    j["routing"] = {{"counts", r.routing->counts},
                    {"entropy", r.routing->entropy},
                    {"max_fraction", r.routing->max_fraction},
                    {"collapsed", r.routing->collapsed}};
  }
  if (r.routing_confusion) j["routing_confusion"] = r.routing_confusion->counts;
  return j;
}

}  // namespace modasr
