#include "factsum/corpus.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <unordered_map>

#include "factsum/error.hpp"
#include "factsum/jsonl.hpp"
#include "factsum/text.hpp"

namespace factsum {
namespace {

std::vector<Sentence> make_sentences(std::span<const std::string> raw,
                                     const IngestOptions& options) {
  std::vector<Sentence> out;
  for (const std::string& entry : raw) {
    for (const std::string& piece : split(entry, options.sentence_delimiter)) {
      std::vector<std::string> tokens = tokenize(piece);
      if (tokens.empty()) continue;
      Sentence s;
      s.index = out.size();
      s.tokens = std::move(tokens);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<std::string> flatten(const std::vector<Sentence>& sentences) {
  std::vector<std::string> out;
  for (const Sentence& s : sentences) out.insert(out.end(), s.tokens.begin(), s.tokens.end());
  return out;
}

}  // namespace

std::vector<std::string> Document::tokens() const { return flatten(sentences); }

std::vector<std::string> Document::summary_tokens() const {
  return summary ? flatten(*summary) : std::vector<std::string>{};
}

std::size_t Document::mention_count() const {
  std::size_t n = 0;
  for (const Sentence& s : sentences) n += s.mentions.size();
  return n;
}

std::vector<std::string> Document::entity_ids() const {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const Sentence& s : sentences) {
    for (const EntityMention& m : s.mentions) {
      if (seen.insert(m.canonical_id).second) ids.push_back(m.canonical_id);
    }
  }
  return ids;
}

Document make_document(std::string id, std::span<const std::string> sentences,
                       const std::optional<std::vector<std::string>>& summary,
                       const IngestOptions& options) {
  Document doc;
  doc.id = std::move(id);
  doc.sentences = make_sentences(sentences, options);
  if (summary) doc.summary = make_sentences(*summary, options);
  return doc;
}

Corpus ingest_corpus(const std::filesystem::path& path, const IngestOptions& options) {
  Corpus corpus;
  std::set<std::string> ids;
  for_each_jsonl(path, [&](std::size_t line, const Json& obj) {
    std::string id = require_string(obj, "id", line);
    if (id.empty()) {
      throw Error(ErrorKind::kInvalidInput, "line " + std::to_string(line) + ": empty \"id\"");
    }
    std::vector<std::string> raw = require_string_array(obj, "sentences", line);
    std::optional<std::vector<std::string>> summary;
    if (obj.contains("summary")) summary = require_string_array(obj, "summary", line);
    Document doc = make_document(id, raw, summary, options);
    if (doc.sentences.empty()) {
      throw Error(ErrorKind::kInvalidInput,
                  "line " + std::to_string(line) + ": document \"" + id + "\" has no tokens");
    }
    if (auto meta = obj.find("meta"); meta != obj.end()) {
      if (!meta->is_object()) {
        throw Error(ErrorKind::kInvalidInput,
                    "line " + std::to_string(line) + ": \"meta\" must be an object");
      }
      for (const auto& [k, v] : meta->items()) {
        doc.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
    if (!ids.insert(id).second) {
      throw Error(ErrorKind::kInvalidInput,
                  "line " + std::to_string(line) + ": duplicate id \"" + id + "\"");
    }
    corpus.push_back(std::move(doc));
  });
  if (corpus.empty()) throw Error(ErrorKind::kInvalidInput, path.string() + ": empty corpus");
  return corpus;
}

// ---------------------------------------------------------------------------
// Gazetteer

Gazetteer Gazetteer::from_entries(
    const std::map<std::string, std::vector<std::string>>& entries) {
  Gazetteer gaz;
  for (const auto& [id, aliases] : entries) gaz.add(id, aliases, "entry \"" + id + "\"");
  return gaz;
}

Gazetteer Gazetteer::load(const std::filesystem::path& path) {
  Gazetteer gaz;
  for_each_jsonl(path, [&](std::size_t line, const Json& obj) {
    std::string id = require_string(obj, "canonical_id", line);
    std::vector<std::string> aliases = require_string_array(obj, "aliases", line);
    gaz.add(id, aliases, "line " + std::to_string(line));
  });
  return gaz;
}

void Gazetteer::add(const std::string& canonical_id, const std::vector<std::string>& raw_aliases,
                    const std::string& where) {
  if (canonical_id.empty()) throw Error(ErrorKind::kInvalidInput, where + ": empty canonical id");
  if (aliases_.contains(canonical_id)) {
    throw Error(ErrorKind::kInvalidInput,
                where + ": canonical id \"" + canonical_id + "\" defined twice");
  }
  if (raw_aliases.empty()) {
    throw Error(ErrorKind::kInvalidInput, where + ": \"" + canonical_id + "\" has no aliases");
  }
  std::vector<std::vector<std::string>> aliases;
  for (const std::string& raw : raw_aliases) {
    std::vector<std::string> tokens = tokenize(raw);
    if (tokens.empty()) {
      throw Error(ErrorKind::kInvalidInput, where + ": empty alias for \"" + canonical_id + "\"");
    }
    auto [it, inserted] = alias_to_id_.emplace(tokens, canonical_id);
    if (!inserted) {
      if (it->second != canonical_id) {
        throw Error(ErrorKind::kInvalidInput, where + ": alias \"" + join_tokens(tokens) +
                                                  "\" maps to both \"" + it->second +
                                                  "\" and \"" + canonical_id + "\"");
      }
      continue;  // repeated alias within one entry
    }
    max_alias_len_ = std::max(max_alias_len_, tokens.size());
    aliases.push_back(std::move(tokens));
  }
  aliases_.emplace(canonical_id, std::move(aliases));
}

bool Gazetteer::contains(const std::string& canonical_id) const {
  return aliases_.contains(canonical_id);
}

const std::vector<std::vector<std::string>>& Gazetteer::aliases(
    const std::string& canonical_id) const {
  auto it = aliases_.find(canonical_id);
  if (it == aliases_.end()) {
    throw Error(ErrorKind::kInvalidInput, "unknown canonical id \"" + canonical_id + "\"");
  }
  return it->second;
}

const std::vector<std::string>& Gazetteer::surface(const std::string& canonical_id) const {
  return aliases(canonical_id).front();
}

std::optional<std::pair<std::string, std::size_t>> Gazetteer::longest_match(
    std::span<const std::string> tokens, std::size_t pos) const {
  std::size_t longest = std::min(max_alias_len_, tokens.size() - std::min(pos, tokens.size()));
  std::vector<std::string> key;
  for (std::size_t len = longest; len >= 1; --len) {
    key.assign(tokens.begin() + static_cast<std::ptrdiff_t>(pos),
               tokens.begin() + static_cast<std::ptrdiff_t>(pos + len));
    if (auto it = alias_to_id_.find(key); it != alias_to_id_.end()) {
      return std::make_pair(it->second, len);
    }
  }
  return std::nullopt;
}

std::vector<EntityMention> find_mentions(std::span<const std::string> tokens,
                                         const Gazetteer& gazetteer) {
  std::vector<EntityMention> mentions;
  if (gazetteer.empty()) return mentions;
  std::size_t pos = 0;
  while (pos < tokens.size()) {
    auto match = gazetteer.longest_match(tokens, pos);
    if (!match) {
      ++pos;
      continue;
    }
    EntityMention m;
    m.canonical_id = match->first;
    m.start = pos;
    m.end = pos + match->second;
    m.surface = join_tokens(tokens.subspan(m.start, m.end - m.start));
    mentions.push_back(std::move(m));
    pos += match->second;
  }
  return mentions;
}

Document recognize_entities(Document doc, const Gazetteer& gazetteer) {
  for (Sentence& s : doc.sentences) s.mentions = find_mentions(s.tokens, gazetteer);
  if (doc.summary) {
    for (Sentence& s : *doc.summary) s.mentions = find_mentions(s.tokens, gazetteer);
  }
  return doc;
}

Vector embed_entity(const Gazetteer& gazetteer, const std::string& canonical_id,
                    const HashEmbedder& embedder) {
  std::vector<std::string> tokens;
  for (const auto& alias : gazetteer.aliases(canonical_id)) {
    tokens.insert(tokens.end(), alias.begin(), alias.end());
  }
  return embedder.embed_sequence(tokens);
}

// ---------------------------------------------------------------------------
// Clustering

std::vector<EntityCluster> cluster_entities(const std::map<std::string, Vector>& embeddings,
                                            double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw Error(ErrorKind::kPrecondition, "cluster_entities: tau must lie in [0, 1]");
  }
  std::vector<std::string> ids;
  std::vector<Vector> unit;
  for (const auto& [id, v] : embeddings) {
    ids.push_back(id);
    unit.push_back(normalized(v));
  }
  const std::size_t n = ids.size();
  if (n == 0) return {};

  // Members are indices into `ids`, which is sorted, so a cluster's first
  // member is also its smallest id.
  std::vector<std::vector<std::size_t>> members(n);
  std::vector<bool> active(n, true);
  std::vector<std::vector<double>> pair_sum(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    members[i] = {i};
    for (std::size_t j = i + 1; j < n; ++j) {
      pair_sum[i][j] = pair_sum[j][i] = unit[i].dot(unit[j]);
    }
  }

  while (true) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_a = n, best_b = n;
    for (std::size_t a = 0; a < n; ++a) {
      if (!active[a]) continue;
      for (std::size_t b = a + 1; b < n; ++b) {
        if (!active[b]) continue;
        double avg = pair_sum[a][b] /
                     static_cast<double>(members[a].size() * members[b].size());
        // Scanning (a, b) in ascending smallest-member order makes the first
        // strict maximum the tie-break winner.
        if (avg > best) {
          best = avg;
          best_a = a;
          best_b = b;
        }
      }
    }
    if (best_a == n || best < tau) break;
    members[best_a].insert(members[best_a].end(), members[best_b].begin(),
                           members[best_b].end());
    std::sort(members[best_a].begin(), members[best_a].end());
    members[best_b].clear();
    active[best_b] = false;
    for (std::size_t c = 0; c < n; ++c) {
      if (!active[c] || c == best_a) continue;
      pair_sum[best_a][c] += pair_sum[best_b][c];
      pair_sum[c][best_a] = pair_sum[best_a][c];
    }
  }

  std::vector<EntityCluster> clusters;
  for (std::size_t a = 0; a < n; ++a) {
    if (!active[a]) continue;
    EntityCluster c;
    Vector sum = Vector::Zero(unit[a].size());
    for (std::size_t m : members[a]) {
      c.members.push_back(ids[m]);
      sum += unit[m];
    }
    c.centroid = normalized(sum / static_cast<double>(members[a].size()));
    clusters.push_back(std::move(c));
  }
  std::sort(clusters.begin(), clusters.end(), [](const EntityCluster& x, const EntityCluster& y) {
    return x.members.front() < y.members.front();
  });
  for (std::size_t i = 0; i < clusters.size(); ++i) clusters[i].cluster_id = static_cast<int>(i);
  return clusters;
}

DocumentAssignment assign_documents(const Corpus& corpus,
                                    const std::vector<EntityCluster>& clusters,
                                    const std::map<std::string, Vector>& entity_embeddings) {
  if (clusters.empty()) throw Error(ErrorKind::kPrecondition, "assign_documents: no clusters");
  std::vector<std::vector<std::string>> buckets(clusters.size());
  DocumentAssignment result;
  for (const Document& doc : corpus) {
    std::vector<std::string> entities = doc.entity_ids();
    if (entities.empty()) {
      result.skipped.push_back(doc.id);
      continue;
    }
    Vector mean = Vector::Zero(clusters.front().centroid.size());
    for (const std::string& e : entities) {
      auto it = entity_embeddings.find(e);
      if (it == entity_embeddings.end()) {
        throw Error(ErrorKind::kPrecondition,
                    "assign_documents: no embedding for entity \"" + e + "\"");
      }
      mean += normalized(it->second);
    }
    mean /= static_cast<double>(entities.size());
    std::size_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      double sim = cosine(mean, clusters[c].centroid);
      if (sim > best_sim) {
        best_sim = sim;
        best = c;
      }
    }
    buckets[best].push_back(doc.id);
  }
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    if (buckets[c].empty()) continue;
    DocCluster dc;
    dc.cluster_id = clusters[c].cluster_id;
    dc.doc_ids = std::move(buckets[c]);
    result.clusters.push_back(std::move(dc));
  }
  std::sort(result.clusters.begin(), result.clusters.end(),
            [](const DocCluster& a, const DocCluster& b) { return a.cluster_id < b.cluster_id; });
  return result;
}

double document_importance(const std::string& target, const DocCluster& cluster,
                           const std::map<std::string, Vector>& doc_vectors) {
  if (cluster.doc_ids.size() < 2) {
    throw Error(ErrorKind::kPrecondition, "importance undefined for a singleton cluster");
  }
  if (std::find(cluster.doc_ids.begin(), cluster.doc_ids.end(), target) ==
      cluster.doc_ids.end()) {
    throw Error(ErrorKind::kPrecondition,
                "document \"" + target + "\" is not a member of cluster " +
                    std::to_string(cluster.cluster_id));
  }
  auto lookup = [&](const std::string& id) -> const Vector& {
    auto it = doc_vectors.find(id);
    if (it == doc_vectors.end()) {
      throw Error(ErrorKind::kPrecondition, "no vector for document \"" + id + "\"");
    }
    return it->second;
  };
  const Vector& di = lookup(target);
  double sum = 0.0;
  for (const std::string& other : cluster.doc_ids) {
    if (other == target) continue;
    sum += cosine(di, lookup(other));
  }
  return sum / static_cast<double>(cluster.doc_ids.size() - 1);
}

void compute_importance(DocCluster& cluster, const std::map<std::string, Vector>& doc_vectors) {
  cluster.importance.clear();
  if (cluster.doc_ids.size() == 1) {
    cluster.importance[cluster.doc_ids.front()] = 1.0;
    return;
  }
  for (const std::string& id : cluster.doc_ids) {
    cluster.importance[id] = document_importance(id, cluster, doc_vectors);
  }
}

// ---------------------------------------------------------------------------
// Pseudo-documents

std::string PseudoDocument::id() const { return "pseudo-" + std::to_string(cluster_id); }

Document PseudoDocument::to_document() const {
  Document doc;
  doc.id = id();
  for (const PseudoSentence& ps : sentences) {
    Sentence s = ps.sentence;
    s.index = doc.sentences.size();
    doc.sentences.push_back(std::move(s));
  }
  return doc;
}

PseudoDocument build_pseudo_document(const DocCluster& cluster, const Corpus& corpus) {
  std::unordered_map<std::string, const Document*> by_id;
  for (const Document& d : corpus) by_id.emplace(d.id, &d);

  std::vector<std::pair<double, std::string>> order;
  for (const std::string& id : cluster.doc_ids) {
    double score = 1.0;
    if (auto it = cluster.importance.find(id); it != cluster.importance.end()) {
      score = it->second;
    } else if (cluster.doc_ids.size() > 1) {
      throw Error(ErrorKind::kPrecondition, "importance missing for document \"" + id + "\"");
    }
    order.emplace_back(score, id);
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  PseudoDocument pseudo;
  pseudo.cluster_id = cluster.cluster_id;
  for (const auto& [score, id] : order) {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw Error(ErrorKind::kPrecondition, "document \"" + id + "\" not found in corpus");
    }
    for (const Sentence& s : it->second->sentences) {
      if (s.mentions.empty()) continue;
      pseudo.sentences.push_back(PseudoSentence{id, s.index, s});
    }
  }
  if (pseudo.sentences.empty()) {
    throw Error(ErrorKind::kInvalidInput,
                "empty pseudo-document for cluster " + std::to_string(cluster.cluster_id));
  }
  return pseudo;
}

}  // namespace factsum
