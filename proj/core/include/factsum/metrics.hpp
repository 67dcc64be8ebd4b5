#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "factsum/corpus.hpp"
#include "factsum/decoding.hpp"
#include "factsum/embedder.hpp"

namespace factsum {

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  // Harmonic mean, 0 when both are 0.
  static PRF from(double precision, double recall);
};

PRF rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n);
PRF rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);

// Set overlap of canonical ids. Both empty: 1/1/1. Otherwise an empty side
// gives 0 for the ratio it divides.
PRF entity_consistency(const std::set<std::string>& generated,
                       const std::set<std::string>& reference);

struct Novelty {
  std::map<int, double> per_n;  // only n with at least one summary n-gram
  double mean = 0.0;
  bool defined() const { return !per_n.empty(); }
};

// Fraction of unique summary n-grams missing from the source's n-grams.
Novelty ngram_novelty(std::span<const std::string> summary, std::span<const std::string> source,
                      std::span<const int> n_values);

// Greedy cosine matching without idf weighting. Empty side: all zero.
PRF embed_score(std::span<const Vector> candidate, std::span<const Vector> reference);
PRF embed_score(std::span<const std::string> candidate, std::span<const std::string> reference,
                const HashEmbedder& embedder);

// Canonical ids of gazetteer mentions in `tokens`.
std::set<std::string> entity_set(std::span<const std::string> tokens, const Gazetteer& gazetteer);

struct DocMetrics {
  std::string doc_id;
  PRF entity_source;
  Novelty novelty;
  // Present only when the document has a reference summary.
  std::optional<PRF> rouge1, rouge2, rougeL, entity_target, embed;
};

struct MetricReport {
  std::vector<int> n_values;
  std::vector<DocMetrics> docs;
  DocMetrics mean;  // arithmetic means over the documents where defined
  bool has_references = false;

  nlohmann::json to_json() const;
};

struct EvalOptions {
  std::vector<int> n_values{1, 2, 3};
};

// Predictions are matched to `sources` by id; the reference for target
// metrics is each source document's summary when present.
MetricReport evaluate(std::span<const Prediction> predictions, const Corpus& sources,
                      const Gazetteer& gazetteer, const HashEmbedder& embedder,
                      const EvalOptions& options = {});

// Aligned plain-text table, one row per labelled report, percentages with
// three decimals. Target columns print "-" when absent.
std::string format_report_table(const std::vector<std::pair<std::string, const MetricReport*>>& rows);

}  // namespace factsum
