#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "factsum/embedder.hpp"

namespace factsum {

struct EntityMention {
  std::string canonical_id;
  std::string surface;     // tokens in [start, end) joined by a space
  std::size_t start = 0;   // token offsets within the sentence
  std::size_t end = 0;

  bool operator==(const EntityMention&) const = default;
};

struct Sentence {
  std::size_t index = 0;
  std::vector<std::string> tokens;
  std::vector<EntityMention> mentions;
};

struct Document {
  std::string id;
  std::vector<Sentence> sentences;
  std::optional<std::vector<Sentence>> summary;
  std::map<std::string, std::string> meta;

  std::vector<std::string> tokens() const;
  std::vector<std::string> summary_tokens() const;
  std::size_t mention_count() const;
  // Canonical ids in first-mention order, duplicates removed.
  std::vector<std::string> entity_ids() const;
};

using Corpus = std::vector<Document>;

struct IngestOptions {
  // Each entry of "sentences"/"summary" is further split on this delimiter.
  std::string sentence_delimiter = "\n";
};

// One JSON object per line: {"id", "sentences": [...], "summary": [...]?,
// "meta": {...}?}. Unknown fields are ignored.
Corpus ingest_corpus(const std::filesystem::path& path, const IngestOptions& options = {});

// Builds a document from raw sentence strings with the shared tokenizer.
Document make_document(std::string id, std::span<const std::string> sentences,
                       const std::optional<std::vector<std::string>>& summary = std::nullopt,
                       const IngestOptions& options = {});

// Alias table standing in for a neural NER + coreference stack: every alias
// of an entry resolves to its canonical id.
class Gazetteer {
 public:
  Gazetteer() = default;

  // Aliases are tokenized with the shared tokenizer. Throws kInvalidInput on
  // an entry without aliases, an alias that tokenizes to nothing, a repeated
  // canonical id, or an alias claimed by two canonical ids.
  static Gazetteer from_entries(const std::map<std::string, std::vector<std::string>>& entries);

  // JSON lines: {"canonical_id": string, "aliases": [string, ...]}.
  static Gazetteer load(const std::filesystem::path& path);

  bool empty() const { return aliases_.empty(); }
  std::size_t size() const { return aliases_.size(); }
  bool contains(const std::string& canonical_id) const;

  const std::map<std::string, std::vector<std::vector<std::string>>>& entries() const {
    return aliases_;
  }
  const std::vector<std::vector<std::string>>& aliases(const std::string& canonical_id) const;

  // First alias of the entry; used as the entity's textual form downstream.
  const std::vector<std::string>& surface(const std::string& canonical_id) const;

  // Longest alias starting at `pos`, as (canonical id, token length).
  std::optional<std::pair<std::string, std::size_t>> longest_match(
      std::span<const std::string> tokens, std::size_t pos) const;

 private:
  void add(const std::string& canonical_id, const std::vector<std::string>& raw_aliases,
           const std::string& where);

  std::map<std::string, std::vector<std::vector<std::string>>> aliases_;
  std::map<std::vector<std::string>, std::string> alias_to_id_;
  std::size_t max_alias_len_ = 0;
};

// Longest-match, left-to-right, non-overlapping alias matching.
std::vector<EntityMention> find_mentions(std::span<const std::string> tokens,
                                         const Gazetteer& gazetteer);

// Fills mentions for every source sentence (and summary sentence, if any).
Document recognize_entities(Document doc, const Gazetteer& gazetteer);

// Entity vector: normalized mean over the tokens of all its aliases.
Vector embed_entity(const Gazetteer& gazetteer, const std::string& canonical_id,
                    const HashEmbedder& embedder);

struct EntityCluster {
  int cluster_id = 0;
  std::vector<std::string> members;  // sorted
  Vector centroid;
};

// Bottom-up average-linkage agglomeration under cosine similarity. Merges the
// most similar pair while its mean pairwise similarity is >= tau; equal
// similarities resolve toward the pair with the smallest member ids.
// Clusters come back ordered by smallest member id, numbered from 0.
std::vector<EntityCluster> cluster_entities(const std::map<std::string, Vector>& embeddings,
                                            double tau);

struct DocCluster {
  int cluster_id = 0;
  std::vector<std::string> doc_ids;
  std::map<std::string, double> importance;
};

struct DocumentAssignment {
  std::vector<DocCluster> clusters;   // non-empty clusters, ascending cluster_id
  std::vector<std::string> skipped;   // documents without any entity mention
};

// Each document goes to the cluster whose centroid is most cosine-similar to
// the mean embedding of the document's unique entities (lowest id on ties).
DocumentAssignment assign_documents(const Corpus& corpus,
                                    const std::vector<EntityCluster>& clusters,
                                    const std::map<std::string, Vector>& entity_embeddings);

// Mean cosine similarity of `target` to the other members of its cluster.
double document_importance(const std::string& target, const DocCluster& cluster,
                           const std::map<std::string, Vector>& doc_vectors);

// Populates cluster.importance for every member (1.0 for a singleton).
void compute_importance(DocCluster& cluster, const std::map<std::string, Vector>& doc_vectors);

struct PseudoSentence {
  std::string source_doc_id;
  std::size_t original_index = 0;
  Sentence sentence;
};

struct PseudoDocument {
  int cluster_id = 0;
  std::vector<PseudoSentence> sentences;

  std::string id() const;
  Document to_document() const;
};

// Keeps entity-bearing sentences in their original order, with documents
// ordered by descending importance (ascending id on ties).
PseudoDocument build_pseudo_document(const DocCluster& cluster, const Corpus& corpus);

}  // namespace factsum
