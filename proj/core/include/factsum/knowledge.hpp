#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "factsum/corpus.hpp"
#include "factsum/embedder.hpp"

namespace factsum {

struct Fact {
  std::string fact_id;
  std::string text;
  std::vector<std::string> tokens;
};

// Flat-file knowledge base with an inverted token index for full-text
// candidate lookup.
class FactStore {
 public:
  FactStore() = default;

  // Throws kInvalidInput on a duplicate fact_id or a fact without tokens.
  static FactStore from_facts(std::vector<Fact> facts);
  static FactStore from_texts(const std::vector<std::pair<std::string, std::string>>& id_text);

  // JSON lines: {"fact_id": string, "text": string}.
  static FactStore load(const std::filesystem::path& path);

  std::span<const Fact> facts() const { return facts_; }
  std::size_t size() const { return facts_.size(); }
  bool empty() const { return facts_.empty(); }

  const Fact* find(const std::string& fact_id) const;

  // Positions (into facts()) of facts whose text contains `token`.
  std::span<const std::size_t> containing(const std::string& token) const;

 private:
  std::vector<Fact> facts_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::unordered_map<std::string, std::vector<std::size_t>> postings_;
};

struct EntityChain {
  std::vector<std::string> entities;

  bool operator==(const EntityChain&) const = default;
};

EntityChain entity_chain(const Document& doc);

struct EntityPair {
  std::string first;
  std::string second;

  bool operator==(const EntityPair&) const = default;
};

// Every (e_i, e_j) with i < j in chain order.
std::vector<EntityPair> entity_pairs(const EntityChain& chain);

// True when `needle` occurs as a contiguous run inside `haystack`.
bool contains_subsequence(std::span<const std::string> haystack,
                          std::span<const std::string> needle);

// Facts in which some alias of each pair member occurs; sorted by fact_id.
std::vector<const Fact*> candidate_facts(const FactStore& store, const EntityPair& pair,
                                         const Gazetteer& gazetteer);

// Dense fact matrix for exhaustive inner-product search. Immutable once built.
class FactIndex {
 public:
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  static FactIndex build(const FactStore& store, const HashEmbedder& embedder);

  // Index over raw vectors (rows used as-is); for tests and benchmarks.
  static FactIndex from_vectors(std::vector<std::string> ids, Matrix vectors);

  std::size_t size() const { return ids_.size(); }
  int dim() const { return static_cast<int>(vectors_.cols()); }
  const Matrix& vectors() const { return vectors_; }
  const std::string& id(std::size_t row) const { return ids_[row]; }
  std::ptrdiff_t row_of(const std::string& fact_id) const;

 private:
  std::vector<std::string> ids_;
  Matrix vectors_;
  std::unordered_map<std::string, std::size_t> rows_;
};

struct ScoredFact {
  std::string fact_id;
  double score = 0.0;
};

// Exhaustive inner-product scan over the candidate ids: descending score,
// ascending fact_id on ties, at most k results.
std::vector<ScoredFact> top_k(const FactIndex& index, std::span<const std::string> candidates,
                              const Vector& query, int k);

struct GuidanceFact {
  std::string fact_id;
  double score = 0.0;
  std::vector<std::string> tokens;
};

struct GuidanceBundle {
  std::string doc_id;
  EntityChain chain;
  std::vector<GuidanceFact> facts;  // descending score
};

// Union of per-pair candidates (deduplicated), ranked against the whole
// document embedding, truncated to k.
GuidanceBundle retrieve_guidance(const Document& doc, const FactStore& store,
                                 const FactIndex& index, const Gazetteer& gazetteer,
                                 const HashEmbedder& embedder, int k = 3);

// {"doc_id", "chain": [...], "facts": [{"fact_id", "score"}]} per line.
void write_guidance(const std::filesystem::path& path, std::span<const GuidanceBundle> bundles);

// Fact texts are resolved through `store`.
std::vector<GuidanceBundle> read_guidance(const std::filesystem::path& path,
                                          const FactStore& store);

}  // namespace factsum
