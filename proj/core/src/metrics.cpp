#include "factsum/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_map>

#include "factsum/error.hpp"
#include "factsum/text.hpp"

namespace factsum {

namespace {

using Gram = std::vector<std::string>;

std::map<Gram, int> ngram_counts(std::span<const std::string> tokens, int n) {
  std::map<Gram, int> counts;
  if (n < 1 || tokens.size() < static_cast<std::size_t>(n)) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    ++counts[Gram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                  tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return counts;
}

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

// Running sums for corpus means of optional per-document values.
struct PrfMean {
  PRF sum;
  int n = 0;
  void add(const PRF& v) {
    sum.precision += v.precision;
    sum.recall += v.recall;
    sum.f1 += v.f1;
    ++n;
  }
  std::optional<PRF> get() const {
    if (n == 0) return std::nullopt;
    return PRF{sum.precision / n, sum.recall / n, sum.f1 / n};
  }
};

nlohmann::json prf_json(const PRF& p) {
  return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
}

nlohmann::json doc_json(const DocMetrics& d) {
  nlohmann::json j = {{"doc_id", d.doc_id}, {"entity_source", prf_json(d.entity_source)}};
  nlohmann::json nov = nlohmann::json::object();
  for (const auto& [n, v] : d.novelty.per_n) nov[std::to_string(n)] = v;
  j["novelty"] = {{"per_n", nov}};
  j["novelty"]["mean"] = d.novelty.defined() ? nlohmann::json(d.novelty.mean) : nlohmann::json(nullptr);
  if (d.rouge1) j["rouge1"] = prf_json(*d.rouge1);
  if (d.rouge2) j["rouge2"] = prf_json(*d.rouge2);
  if (d.rougeL) j["rougeL"] = prf_json(*d.rougeL);
  if (d.entity_target) j["entity_target"] = prf_json(*d.entity_target);
  if (d.embed) j["embed_score"] = prf_json(*d.embed);
  return j;
}

}  // namespace

PRF PRF::from(double precision, double recall) {
  double f = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  return PRF{precision, recall, f};
}

PRF rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, int n) {
  if (n < 1) throw Error(ErrorKind::kPrecondition, "rouge_n: n must be >= 1");
  auto cand = ngram_counts(candidate, n);
  auto ref = ngram_counts(reference, n);
  double overlap = 0.0;
  double cand_total = 0.0;
  double ref_total = 0.0;
  for (const auto& [g, c] : cand) {
    cand_total += c;
    auto it = ref.find(g);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  for (const auto& [g, c] : ref) ref_total += c;
  return PRF::from(ratio(overlap, cand_total), ratio(overlap, ref_total));
}

PRF rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
  const std::size_t m = candidate.size();
  const std::size_t n = reference.size();
  std::vector<int> prev(n + 1, 0);
  std::vector<int> cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  double lcs = prev[n];
  return PRF::from(ratio(lcs, static_cast<double>(m)), ratio(lcs, static_cast<double>(n)));
}

PRF entity_consistency(const std::set<std::string>& generated,
                       const std::set<std::string>& reference) {
  if (generated.empty() && reference.empty()) return PRF{1.0, 1.0, 1.0};
  double common = 0.0;
  for (const std::string& id : generated) common += reference.count(id) ? 1.0 : 0.0;
  return PRF::from(ratio(common, static_cast<double>(generated.size())),
                   ratio(common, static_cast<double>(reference.size())));
}

Novelty ngram_novelty(std::span<const std::string> summary, std::span<const std::string> source,
                      std::span<const int> n_values) {
  Novelty out;
  double sum = 0.0;
  for (int n : n_values) {
    if (n < 1) throw Error(ErrorKind::kPrecondition, "ngram_novelty: n must be >= 1");
    auto sum_grams = ngram_counts(summary, n);
    if (sum_grams.empty()) continue;
    auto src_grams = ngram_counts(source, n);
    double novel = 0.0;
    for (const auto& [g, c] : sum_grams) novel += src_grams.count(g) ? 0.0 : 1.0;
    double frac = novel / static_cast<double>(sum_grams.size());
    out.per_n[n] = frac;
    sum += frac;
  }
  if (!out.per_n.empty()) out.mean = sum / static_cast<double>(out.per_n.size());
  return out;
}

PRF embed_score(std::span<const Vector> candidate, std::span<const Vector> reference) {
  if (candidate.empty() || reference.empty()) return PRF{};
  auto greedy = [](std::span<const Vector> from, std::span<const Vector> to) {
    double total = 0.0;
    for (const Vector& a : from) {
      double best = -1.0;
      for (const Vector& b : to) best = std::max(best, cosine(a, b));
      total += best;
    }
    return total / static_cast<double>(from.size());
  };
  return PRF::from(greedy(candidate, reference), greedy(reference, candidate));
}

PRF embed_score(std::span<const std::string> candidate, std::span<const std::string> reference,
                const HashEmbedder& embedder) {
  std::unordered_map<std::string, Vector> cache;
  auto embed_all = [&](std::span<const std::string> toks) {
    std::vector<Vector> out;
    out.reserve(toks.size());
    for (const std::string& t : toks) {
      auto it = cache.find(t);
      if (it == cache.end()) it = cache.emplace(t, embedder.embed_token(t)).first;
      out.push_back(it->second);
    }
    return out;
  };
  std::vector<Vector> c = embed_all(candidate);
  std::vector<Vector> r = embed_all(reference);
  return embed_score(c, r);
}

std::set<std::string> entity_set(std::span<const std::string> tokens, const Gazetteer& gazetteer) {
  std::set<std::string> ids;
  for (const EntityMention& m : find_mentions(tokens, gazetteer)) ids.insert(m.canonical_id);
  return ids;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json docs_json = nlohmann::json::array();
  for (const DocMetrics& d : docs) docs_json.push_back(doc_json(d));
  return {{"n_values", n_values},
          {"novelty_note", "type-level unique n-grams, unweighted mean over n_values"},
          {"has_references", has_references},
          {"documents", docs.size()},
          {"mean", doc_json(mean)},
          {"per_doc", docs_json}};
}

MetricReport evaluate(std::span<const Prediction> predictions, const Corpus& sources,
                      const Gazetteer& gazetteer, const HashEmbedder& embedder,
                      const EvalOptions& options) {
  std::unordered_map<std::string, const Document*> by_id;
  for (const Document& d : sources) by_id.emplace(d.id, &d);

  MetricReport report;
  report.n_values = options.n_values;
  PrfMean ent_src, ent_tgt, r1, r2, rl, emb;
  std::map<int, std::pair<double, int>> nov_n;
  double nov_sum = 0.0;
  int nov_docs = 0;

  for (const Prediction& pred : predictions) {
    auto it = by_id.find(pred.doc_id);
    if (it == by_id.end()) {
      throw Error(ErrorKind::kInvalidInput, "prediction for unknown doc_id " + pred.doc_id);
    }
    const Document& src = *it->second;
    const std::vector<std::string> src_tokens = src.tokens();
    DocMetrics m;
    m.doc_id = pred.doc_id;
    const std::set<std::string> gen = entity_set(pred.tokens, gazetteer);
    m.entity_source = entity_consistency(gen, entity_set(src_tokens, gazetteer));
    ent_src.add(m.entity_source);
    m.novelty = ngram_novelty(pred.tokens, src_tokens, options.n_values);
    if (m.novelty.defined()) {
      for (const auto& [n, v] : m.novelty.per_n) {
        nov_n[n].first += v;
        nov_n[n].second += 1;
      }
      nov_sum += m.novelty.mean;
      ++nov_docs;
    }
    if (src.summary) {
      const std::vector<std::string> ref = src.summary_tokens();
      m.rouge1 = rouge_n(pred.tokens, ref, 1);
      m.rouge2 = rouge_n(pred.tokens, ref, 2);
      m.rougeL = rouge_l(pred.tokens, ref);
      m.entity_target = entity_consistency(gen, entity_set(ref, gazetteer));
      m.embed = embed_score(pred.tokens, ref, embedder);
      r1.add(*m.rouge1);
      r2.add(*m.rouge2);
      rl.add(*m.rougeL);
      ent_tgt.add(*m.entity_target);
      emb.add(*m.embed);
      report.has_references = true;
    }
    report.docs.push_back(std::move(m));
  }

  report.mean.doc_id = "mean";
  report.mean.entity_source = ent_src.get().value_or(PRF{});
  for (const auto& [n, acc] : nov_n) report.mean.novelty.per_n[n] = acc.first / acc.second;
  if (nov_docs > 0) report.mean.novelty.mean = nov_sum / nov_docs;
  report.mean.rouge1 = r1.get();
  report.mean.rouge2 = r2.get();
  report.mean.rougeL = rl.get();
  report.mean.entity_target = ent_tgt.get();
  report.mean.embed = emb.get();
  return report;
}

std::string format_report_table(const std::vector<std::pair<std::string, const MetricReport*>>& rows) {
  const std::vector<std::string> header{"config", "R-1",   "R-2",   "R-L",   "P-src", "R-src", "F-src",
                                        "P-tgt",  "R-tgt", "F-tgt", "Novel", "Emb-F"};
  std::vector<std::vector<std::string>> cells{header};
  auto pct = [](std::optional<double> v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", *v * 100.0);
    return std::string(buf);
  };
  for (const auto& [label, rep] : rows) {
    const DocMetrics& m = rep->mean;
    auto f = [](const std::optional<PRF>& p) { return p ? std::optional<double>(p->f1) : std::nullopt; };
    std::optional<double> nov;
    if (m.novelty.defined()) nov = m.novelty.mean;
    cells.push_back({label, pct(f(m.rouge1)), pct(f(m.rouge2)), pct(f(m.rougeL)),
                     pct(m.entity_source.precision), pct(m.entity_source.recall),
                     pct(m.entity_source.f1),
                     pct(m.entity_target ? std::optional<double>(m.entity_target->precision) : std::nullopt),
                     pct(m.entity_target ? std::optional<double>(m.entity_target->recall) : std::nullopt),
                     pct(f(m.entity_target)), pct(nov), pct(f(m.embed))});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      std::string cell = row[c];
      if (c == 0) {
        out += cell + std::string(width[c] - cell.size(), ' ');
      } else {
        out += "  " + std::string(width[c] - cell.size(), ' ') + cell;
      }
    }
    out += '\n';
  }
  return out;
}

}  // namespace factsum
