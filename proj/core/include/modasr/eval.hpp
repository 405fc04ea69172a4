// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modasr/ctc.hpp"
#include "modasr/model.hpp"

namespace modasr {

struct WerResult {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t ref_length = 0;
  double wer = 0.0;

  std::size_t errors() const { return substitutions + insertions + deletions; }
};

// Unit-cost Levenshtein alignment on token ids. Among minimum-cost
// alignments, substitutions are preferred over insertion/deletion pairs.
WerResult wer(std::span<const int> ref, std::span<const int> hyp);

// counts[true][predicted].
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::vector<std::size_t>> counts;

  explicit ConfusionMatrix(std::size_t e = 0) : classes(e), counts(e, std::vector<std::size_t>(e, 0)) {}
  std::size_t total() const;
  std::size_t row_sum(std::size_t t) const;
  double accuracy() const;
  // Rows normalized to sum 1 (zero rows stay zero).
  std::vector<std::vector<double>> row_normalized() const;
};

ConfusionMatrix confusion(std::span<const std::size_t> true_labels, std::span<const std::size_t> predicted,
                          std::size_t classes);

// Comma-separated grid with predicted classes as rows and true classes as
// columns (x-axis true, y-axis predicted).
std::string confusion_csv(const ConfusionMatrix& m, const std::vector<std::string>& labels);

inline constexpr const char* kDecodeMethod = "ctc-greedy";

struct SubsetScore {
  std::size_t utterances = 0;
  std::size_t ref_tokens = 0;
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;

  std::size_t errors() const { return substitutions + insertions + deletions; }
  double wer() const { return ref_tokens ? static_cast<double>(errors()) / static_cast<double>(ref_tokens) : 0.0; }
};

struct EvalReport {
  std::string fingerprint;
  std::string decode_method = kDecodeMethod;
  std::map<std::string, SubsetScore> subsets;  // clean, real-dev, simu-dev, real-eval, simu-eval, ...
  std::optional<UtilizationStats> routing;
  std::optional<ConfusionMatrix> routing_confusion;  // learned routing vs scheme labels
  std::uint64_t macs_per_utterance = 0;              // mean encoder MACs

  // Pooled WER over the named subsets that are present.
  double pooled_wer(const std::vector<std::string>& names) const;
  bool has(const std::string& name) const { return subsets.count(name) != 0; }
};

// Report column name of an utterance: "clean" or "{real,simu}-{train,dev,eval}".
std::string report_subset(const Domain& domain, Subset subset);
std::vector<std::string> report_column_order();

EvalReport evaluate(const AsrModel& model, std::span<const Example* const> examples);

std::string format_report(const EvalReport& r);
nlohmann::json report_to_json(const EvalReport& r);

}  // namespace modasr
