#include "factsum/knowledge.hpp"

#include <algorithm>
#include <set>

#include "factsum/error.hpp"
#include "factsum/jsonl.hpp"
#include "factsum/text.hpp"

namespace factsum {

FactStore FactStore::from_facts(std::vector<Fact> facts) {
  FactStore store;
  for (Fact& f : facts) {
    if (f.tokens.empty()) f.tokens = tokenize(f.text);
    if (f.fact_id.empty()) throw Error(ErrorKind::kInvalidInput, "fact with empty fact_id");
    if (f.tokens.empty()) {
      throw Error(ErrorKind::kInvalidInput, "fact \"" + f.fact_id + "\" has empty text");
    }
    std::size_t pos = store.facts_.size();
    if (!store.by_id_.emplace(f.fact_id, pos).second) {
      throw Error(ErrorKind::kInvalidInput, "duplicate fact_id \"" + f.fact_id + "\"");
    }
    std::set<std::string> unique(f.tokens.begin(), f.tokens.end());
    for (const std::string& t : unique) store.postings_[t].push_back(pos);
    store.facts_.push_back(std::move(f));
  }
  return store;
}

FactStore FactStore::from_texts(const std::vector<std::pair<std::string, std::string>>& id_text) {
  std::vector<Fact> facts;
  for (const auto& [id, text] : id_text) facts.push_back(Fact{id, text, {}});
  return from_facts(std::move(facts));
}

FactStore FactStore::load(const std::filesystem::path& path) {
  std::vector<Fact> facts;
  std::set<std::string> ids;
  for_each_jsonl(path, [&](std::size_t line, const Json& obj) {
    Fact f;
    f.fact_id = require_string(obj, "fact_id", line);
    f.text = require_string(obj, "text", line);
    f.tokens = tokenize(f.text);
    if (f.tokens.empty()) {
      throw Error(ErrorKind::kInvalidInput, "line " + std::to_string(line) + ": empty fact text");
    }
    if (!ids.insert(f.fact_id).second) {
      throw Error(ErrorKind::kInvalidInput,
                  "line " + std::to_string(line) + ": duplicate fact_id \"" + f.fact_id + "\"");
    }
    facts.push_back(std::move(f));
  });
  return from_facts(std::move(facts));
}

const Fact* FactStore::find(const std::string& fact_id) const {
  auto it = by_id_.find(fact_id);
  return it == by_id_.end() ? nullptr : &facts_[it->second];
}

std::span<const std::size_t> FactStore::containing(const std::string& token) const {
  auto it = postings_.find(token);
  if (it == postings_.end()) return {};
  return it->second;
}

EntityChain entity_chain(const Document& doc) { return EntityChain{doc.entity_ids()}; }

std::vector<EntityPair> entity_pairs(const EntityChain& chain) {
  std::vector<EntityPair> pairs;
  const auto& e = chain.entities;
  for (std::size_t i = 0; i < e.size(); ++i) {
    for (std::size_t j = i + 1; j < e.size(); ++j) pairs.push_back(EntityPair{e[i], e[j]});
  }
  return pairs;
}

bool contains_subsequence(std::span<const std::string> haystack,
                          std::span<const std::string> needle) {
  if (needle.empty()) return true;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

namespace {

// Store positions of facts containing any alias of `entity`.
std::set<std::size_t> facts_mentioning(const FactStore& store, const std::string& entity,
                                       const Gazetteer& gazetteer) {
  std::set<std::size_t> hits;
  for (const auto& alias : gazetteer.aliases(entity)) {
    for (std::size_t pos : store.containing(alias.front())) {
      if (hits.contains(pos)) continue;
      if (contains_subsequence(store.facts()[pos].tokens, alias)) hits.insert(pos);
    }
  }
  return hits;
}

}  // namespace

std::vector<const Fact*> candidate_facts(const FactStore& store, const EntityPair& pair,
                                         const Gazetteer& gazetteer) {
  std::set<std::size_t> first = facts_mentioning(store, pair.first, gazetteer);
  std::set<std::size_t> second = facts_mentioning(store, pair.second, gazetteer);
  std::vector<const Fact*> out;
  for (std::size_t pos : first) {
    if (second.contains(pos)) out.push_back(&store.facts()[pos]);
  }
  std::sort(out.begin(), out.end(),
            [](const Fact* a, const Fact* b) { return a->fact_id < b->fact_id; });
  return out;
}

FactIndex FactIndex::build(const FactStore& store, const HashEmbedder& embedder) {
  if (store.empty()) throw Error(ErrorKind::kPrecondition, "build_index: empty fact store");
  std::vector<std::string> ids;
  Matrix vectors(static_cast<Eigen::Index>(store.size()), embedder.dim());
  Eigen::Index row = 0;
  for (const Fact& f : store.facts()) {
    ids.push_back(f.fact_id);
    vectors.row(row++) = embedder.embed_sequence(f.tokens).transpose();
  }
  return from_vectors(std::move(ids), std::move(vectors));
}

FactIndex FactIndex::from_vectors(std::vector<std::string> ids, Matrix vectors) {
  if (static_cast<Eigen::Index>(ids.size()) != vectors.rows()) {
    throw Error(ErrorKind::kPrecondition, "FactIndex: id count does not match vector rows");
  }
  FactIndex index;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!index.rows_.emplace(ids[i], i).second) {
      throw Error(ErrorKind::kInvalidInput, "FactIndex: duplicate id \"" + ids[i] + "\"");
    }
  }
  index.ids_ = std::move(ids);
  index.vectors_ = std::move(vectors);
  return index;
}

std::ptrdiff_t FactIndex::row_of(const std::string& fact_id) const {
  auto it = rows_.find(fact_id);
  return it == rows_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
}

std::vector<ScoredFact> top_k(const FactIndex& index, std::span<const std::string> candidates,
                              const Vector& query, int k) {
  if (k < 1) throw Error(ErrorKind::kPrecondition, "top_k: k must be >= 1");
  if (candidates.empty()) return {};
  if (query.size() != index.dim()) {
    throw Error(ErrorKind::kPrecondition, "top_k: query dimension mismatch");
  }
  std::vector<ScoredFact> scored;
  scored.reserve(candidates.size());
  std::set<std::string> seen;
  for (const std::string& id : candidates) {
    if (!seen.insert(id).second) continue;
    std::ptrdiff_t row = index.row_of(id);
    if (row < 0) throw Error(ErrorKind::kPrecondition, "top_k: unknown fact \"" + id + "\"");
    scored.push_back(ScoredFact{id, index.vectors().row(row).dot(query)});
  }
  auto better = [](const ScoredFact& a, const ScoredFact& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.fact_id < b.fact_id;
  };
  std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep),
                    scored.end(), better);
  scored.resize(keep);
  return scored;
}

GuidanceBundle retrieve_guidance(const Document& doc, const FactStore& store,
                                 const FactIndex& index, const Gazetteer& gazetteer,
                                 const HashEmbedder& embedder, int k) {
  GuidanceBundle bundle;
  bundle.doc_id = doc.id;
  bundle.chain = entity_chain(doc);
  std::set<std::string> candidate_ids;
  for (const EntityPair& pair : entity_pairs(bundle.chain)) {
    for (const Fact* f : candidate_facts(store, pair, gazetteer)) candidate_ids.insert(f->fact_id);
  }
  if (candidate_ids.empty()) return bundle;
  std::vector<std::string> candidates(candidate_ids.begin(), candidate_ids.end());
  Vector query = embedder.embed_sequence(doc.tokens());
  for (const ScoredFact& sf : top_k(index, candidates, query, k)) {
    bundle.facts.push_back(GuidanceFact{sf.fact_id, sf.score, store.find(sf.fact_id)->tokens});
  }
  return bundle;
}

void write_guidance(const std::filesystem::path& path, std::span<const GuidanceBundle> bundles) {
  std::vector<Json> records;
  for (const GuidanceBundle& b : bundles) {
    Json facts = Json::array();
    for (const GuidanceFact& f : b.facts) facts.push_back({{"fact_id", f.fact_id}, {"score", f.score}});
    records.push_back({{"doc_id", b.doc_id}, {"chain", b.chain.entities}, {"facts", facts}});
  }
  write_jsonl(path, records);
}

std::vector<GuidanceBundle> read_guidance(const std::filesystem::path& path,
                                          const FactStore& store) {
  std::vector<GuidanceBundle> bundles;
  for_each_jsonl(path, [&](std::size_t line, const Json& obj) {
    GuidanceBundle b;
    b.doc_id = require_string(obj, "doc_id", line);
    b.chain.entities = require_string_array(obj, "chain", line);
    if (!obj.contains("facts") || !obj["facts"].is_array()) {
      throw Error(ErrorKind::kInvalidInput, "line " + std::to_string(line) + ": missing \"facts\"");
    }
    for (const Json& f : obj["facts"]) {
      GuidanceFact gf;
      gf.fact_id = require_string(f, "fact_id", line);
      gf.score = f.value("score", 0.0);
      const Fact* fact = store.find(gf.fact_id);
      if (fact == nullptr) {
        throw Error(ErrorKind::kInvalidInput, "line " + std::to_string(line) +
                                                  ": fact \"" + gf.fact_id +
                                                  "\" not in the fact store");
      }
      gf.tokens = fact->tokens;
      b.facts.push_back(std::move(gf));
    }
    bundles.push_back(std::move(b));
  });
  return bundles;
}

}  // namespace factsum
