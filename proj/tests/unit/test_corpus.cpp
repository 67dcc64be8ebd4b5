#include <cmath>

#include <gtest/gtest.h>

#include "factsum/corpus.hpp"
#include "factsum/error.hpp"
#include "factsum/text.hpp"
#include "support.hpp"

using namespace factsum;
using factsum::testing::TempDir;
using factsum::testing::write_lines;

namespace {

Vector vec2(double x, double y) {
  Vector v(2);
  v << x, y;
  return v;
}

Gazetteer iron_gaz() {
  return Gazetteer::from_entries({{"E1", {"iron", "ferric iron"}}, {"E2", {"anemia"}}});
}

}  // namespace

TEST(Ingest, ReadsRecordsAndSplitsSentences) {
  TempDir dir;
  write_lines(dir / "c.jsonl",
              {R"({"id": "a", "sentences": ["Iron levels.", "Low anemia"], "summary": ["Short."]})",
               "",
               R"({"id": "b", "sentences": ["one\ntwo"]})"});
  Corpus c = ingest_corpus(dir / "c.jsonl");
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].sentences.size(), 2u);
  EXPECT_EQ(c[0].sentences[1].tokens, (std::vector<std::string>{"low", "anemia"}));
  EXPECT_EQ(c[0].sentences[1].index, 1u);
  ASSERT_TRUE(c[0].summary.has_value());
  EXPECT_FALSE(c[1].summary.has_value());
  EXPECT_EQ(c[1].sentences.size(), 2u);
}

TEST(Ingest, EmptyFileIsAnError) {
  TempDir dir;
  write_lines(dir / "c.jsonl", {});
  try {
    ingest_corpus(dir / "c.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("empty corpus"), std::string::npos);
  }
}

TEST(Ingest, MissingIdNamesTheLine) {
  TempDir dir;
  write_lines(dir / "c.jsonl", {R"({"id": "a", "sentences": ["x"]})", R"({"id": "b", "sentences": ["y"]})",
                                R"({"sentences": ["z"]})"});
  try {
    ingest_corpus(dir / "c.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidInput);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Ingest, DuplicateIdAndMissingFile) {
  TempDir dir;
  write_lines(dir / "c.jsonl", {R"({"id": "a", "sentences": ["x"]})", R"({"id": "a", "sentences": ["y"]})"});
  EXPECT_THROW(ingest_corpus(dir / "c.jsonl"), Error);
  try {
    ingest_corpus(dir / "missing.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
}

TEST(Gazetteer, LoadRejectsAmbiguousAliases) {
  TempDir dir;
  write_lines(dir / "g.jsonl", {R"({"canonical_id": "E1", "aliases": ["Iron"]})",
                                R"({"canonical_id": "E2", "aliases": ["iron"]})"});
  EXPECT_THROW(Gazetteer::load(dir / "g.jsonl"), Error);
  write_lines(dir / "g2.jsonl", {R"({"canonical_id": "E1", "aliases": []})"});
  EXPECT_THROW(Gazetteer::load(dir / "g2.jsonl"), Error);
}

TEST(Gazetteer, AliasesAreLowercasedTokens) {
  TempDir dir;
  write_lines(dir / "g.jsonl", {R"({"canonical_id": "E1", "aliases": ["Ferric Iron", "iron"]})"});
  Gazetteer g = Gazetteer::load(dir / "g.jsonl");
  EXPECT_EQ(g.surface("E1"), (std::vector<std::string>{"ferric", "iron"}));
  EXPECT_TRUE(g.contains("E1"));
}

TEST(RecognizeEntities, ExactAliasHits) {
  auto toks = tokenize("iron deficiency causes anemia");
  auto m = find_mentions(toks, iron_gaz());
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0], (EntityMention{"E1", "iron", 0, 1}));
  EXPECT_EQ(m[1], (EntityMention{"E2", "anemia", 3, 4}));
}

TEST(RecognizeEntities, LongestMatchWins) {
  auto toks = tokenize("ferric iron levels");
  auto m = find_mentions(toks, iron_gaz());
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0], (EntityMention{"E1", "ferric iron", 0, 2}));
}

TEST(RecognizeEntities, EmptyGazetteerFindsNothing) {
  Document d = make_document("d", std::vector<std::string>{"iron and anemia"});
  d = recognize_entities(d, Gazetteer{});
  EXPECT_EQ(d.mention_count(), 0u);
}

TEST(RecognizeEntities, SpansNeverOverlapAndMatchingIsIdempotent) {
  Gazetteer g = Gazetteer::from_entries(
      {{"A", {"a b"}}, {"B", {"b c"}}, {"C", {"c"}}, {"D", {"a b c d"}}});
  SplitMix64 rng(5);
  const std::vector<std::string> words{"a", "b", "c", "d", "x"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> toks;
    for (int i = 0; i < 12; ++i) toks.push_back(words[rng.below(words.size())]);
    auto m = find_mentions(toks, g);
    for (std::size_t i = 0; i < m.size(); ++i) {
      EXPECT_LT(m[i].start, m[i].end);
      std::vector<std::string> span(toks.begin() + static_cast<std::ptrdiff_t>(m[i].start),
                                    toks.begin() + static_cast<std::ptrdiff_t>(m[i].end));
      EXPECT_EQ(m[i].surface, join_tokens(span));
      if (i > 0) EXPECT_LE(m[i - 1].end, m[i].start);
    }
    EXPECT_EQ(find_mentions(toks, g), m);
  }
}

TEST(ClusterEntities, IdenticalEmbeddingsFormOneCluster) {
  std::map<std::string, Vector> e{{"a", vec2(1, 0)}, {"b", vec2(1, 0)}, {"c", vec2(1, 0)}};
  auto cl = cluster_entities(e, 0.9);
  ASSERT_EQ(cl.size(), 1u);
  EXPECT_EQ(cl[0].members, (std::vector<std::string>{"a", "b", "c"}));
}

TEST(ClusterEntities, TauOneKeepsDistinctVectorsApart) {
  std::map<std::string, Vector> e{{"a", vec2(1, 0)}, {"b", vec2(0.995, 0.1).normalized()}, {"c", vec2(0, 1)}};
  EXPECT_EQ(cluster_entities(e, 1.0).size(), 3u);
  EXPECT_THROW(cluster_entities(e, 1.0 + 1e-9), Error);
  EXPECT_TRUE(cluster_entities({}, 0.5).empty());
}

TEST(ClusterEntities, TwoGroupsInTheRightHalfPlanes) {
  std::map<std::string, Vector> e{{"e1", vec2(1, 0)},
                                  {"e2", vec2(0.995, 0.1).normalized()},
                                  {"e3", vec2(0, 1)},
                                  {"e4", vec2(0.1, 0.995).normalized()}};
  auto cl = cluster_entities(e, 0.9);
  ASSERT_EQ(cl.size(), 2u);
  EXPECT_EQ(cl[0].members, (std::vector<std::string>{"e1", "e2"}));
  EXPECT_EQ(cl[1].members, (std::vector<std::string>{"e3", "e4"}));
  EXPECT_EQ(cl[0].cluster_id, 0);
  EXPECT_NEAR(cl[0].centroid.norm(), 1.0, 1e-12);
  Vector mean = (e["e1"] + e["e2"]) / 2.0;
  EXPECT_LT((cl[0].centroid - mean.normalized()).norm(), 1e-12);
}

TEST(ClusterEntities, AverageLinkageNotSingleLinkage) {
  // b is close to both a and c, but a and c are orthogonal: average linkage
  // stops after the first merge.
  std::map<std::string, Vector> e{{"a", vec2(1, 0)}, {"b", vec2(1, 1).normalized()}, {"c", vec2(0, 1)}};
  auto cl = cluster_entities(e, 0.7);
  ASSERT_EQ(cl.size(), 2u);
  EXPECT_EQ(cl[0].members, (std::vector<std::string>{"a", "b"}));
}

TEST(AssignDocuments, MatchesExhaustiveArgmax) {
  SplitMix64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    std::map<std::string, Vector> ent;
    std::map<std::string, std::vector<std::string>> gaz_entries;
    for (int i = 0; i < 6; ++i) {
      Vector v(3);
      v << rng.normal(), rng.normal(), rng.normal();
      ent["E" + std::to_string(i)] = v.normalized();
      gaz_entries["E" + std::to_string(i)] = {"ent" + std::to_string(i)};
    }
    Gazetteer gaz = Gazetteer::from_entries(gaz_entries);
    auto clusters = cluster_entities(ent, 0.3);
    Corpus corpus;
    for (int d = 0; d < 20; ++d) {
      std::string text = "x";
      int n = static_cast<int>(rng.below(4));
      for (int j = 0; j < n; ++j) text += " ent" + std::to_string(rng.below(6));
      corpus.push_back(recognize_entities(make_document("d" + std::to_string(d), std::vector<std::string>{text}), gaz));
    }
    auto result = assign_documents(corpus, clusters, ent);
    std::map<std::string, int> got;
    for (const auto& dc : result.clusters) {
      for (const auto& id : dc.doc_ids) got[id] = dc.cluster_id;
    }
    for (const Document& doc : corpus) {
      auto ids = doc.entity_ids();
      if (ids.empty()) {
        EXPECT_NE(std::find(result.skipped.begin(), result.skipped.end(), doc.id), result.skipped.end());
        continue;
      }
      Vector mean = Vector::Zero(3);
      for (const auto& id : ids) mean += ent[id];
      mean /= static_cast<double>(ids.size());
      int best = -1;
      double best_sim = -2.0;
      for (const auto& c : clusters) {
        double s = mean.dot(c.centroid) / (mean.norm() * c.centroid.norm());
        if (s > best_sim + 1e-12) {
          best_sim = s;
          best = c.cluster_id;
        }
      }
      EXPECT_EQ(got.at(doc.id), best) << doc.id;
    }
  }
}

TEST(AssignDocuments, OwnClusterAndErrors) {
  Gazetteer gaz = Gazetteer::from_entries({{"A", {"a"}}, {"B", {"b"}}});
  std::map<std::string, Vector> ent{{"A", vec2(1, 0)}, {"B", vec2(0, 1)}};
  auto clusters = cluster_entities(ent, 0.5);
  Corpus corpus{recognize_entities(make_document("d1", std::vector<std::string>{"b only"}), gaz),
                recognize_entities(make_document("d2", std::vector<std::string>{"nothing here"}), gaz)};
  auto r = assign_documents(corpus, clusters, ent);
  ASSERT_EQ(r.clusters.size(), 1u);
  EXPECT_EQ(r.clusters[0].cluster_id, 1);
  EXPECT_EQ(r.skipped, (std::vector<std::string>{"d2"}));
  EXPECT_THROW(assign_documents(corpus, {}, ent), Error);
}

TEST(DocumentImportance, TwoIdenticalDocuments) {
  DocCluster c{0, {"a", "b"}, {}};
  std::map<std::string, Vector> v{{"a", vec2(0.6, 0.8)}, {"b", vec2(0.6, 0.8)}};
  EXPECT_NEAR(document_importance("a", c, v), 1.0, 1e-12);
  EXPECT_NEAR(document_importance("b", c, v), 1.0, 1e-12);
}

TEST(DocumentImportance, HandComputedFixture) {
  DocCluster c{0, {"d1", "d2", "d3"}, {}};
  std::map<std::string, Vector> v{{"d1", vec2(1, 0)}, {"d2", vec2(1, 0)}, {"d3", vec2(0, 1)}};
  EXPECT_NEAR(document_importance("d1", c, v), 0.5, 1e-12);
  EXPECT_NEAR(document_importance("d2", c, v), 0.5, 1e-12);
  EXPECT_NEAR(document_importance("d3", c, v), 0.0, 1e-12);
}

TEST(DocumentImportance, SingletonIsUndefinedButComputeGivesOne) {
  DocCluster c{0, {"d1"}, {}};
  std::map<std::string, Vector> v{{"d1", vec2(1, 0)}};
  try {
    document_importance("d1", c, v);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("importance undefined"), std::string::npos);
  }
  compute_importance(c, v);
  EXPECT_EQ(c.importance.at("d1"), 1.0);
}

TEST(PseudoDocument, SingleDocumentPassesThrough) {
  Gazetteer gaz = iron_gaz();
  Corpus corpus{recognize_entities(make_document("a", std::vector<std::string>{"iron here", "anemia there"}), gaz)};
  DocCluster c{3, {"a"}, {{"a", 1.0}}};
  PseudoDocument p = build_pseudo_document(c, corpus);
  EXPECT_EQ(p.id(), "pseudo-3");
  ASSERT_EQ(p.sentences.size(), 2u);
  EXPECT_EQ(p.sentences[0].sentence.tokens, corpus[0].sentences[0].tokens);
  EXPECT_EQ(p.sentences[1].original_index, 1u);
}

TEST(PseudoDocument, DropsEntityFreeSentences) {
  Gazetteer gaz = iron_gaz();
  Corpus corpus{recognize_entities(
      make_document("a", std::vector<std::string>{"iron one", "nothing two", "anemia three"}), gaz)};
  PseudoDocument p = build_pseudo_document(DocCluster{0, {"a"}, {{"a", 1.0}}}, corpus);
  ASSERT_EQ(p.sentences.size(), 2u);
  EXPECT_EQ(p.sentences[0].original_index, 0u);
  EXPECT_EQ(p.sentences[1].original_index, 2u);
  Document d = p.to_document();
  EXPECT_EQ(d.sentences[1].index, 1u);
}

TEST(PseudoDocument, OrdersDocumentsByImportance) {
  Gazetteer gaz = iron_gaz();
  Corpus corpus{recognize_entities(make_document("a", std::vector<std::string>{"iron a1", "iron a2"}), gaz),
                recognize_entities(make_document("b", std::vector<std::string>{"anemia b1", "anemia b2"}), gaz)};
  PseudoDocument p = build_pseudo_document(DocCluster{0, {"b", "a"}, {{"a", 0.8}, {"b", 0.3}}}, corpus);
  std::vector<std::string> order;
  for (const auto& s : p.sentences) order.push_back(s.source_doc_id);
  EXPECT_EQ(order, (std::vector<std::string>{"a", "a", "b", "b"}));
  PseudoDocument q = build_pseudo_document(DocCluster{0, {"b", "a"}, {{"a", 0.5}, {"b", 0.5}}}, corpus);
  EXPECT_EQ(q.sentences.front().source_doc_id, "a");
}

TEST(PseudoDocument, AllSentencesEntityFreeIsAnError) {
  Corpus corpus{make_document("a", std::vector<std::string>{"nothing"})};
  try {
    build_pseudo_document(DocCluster{0, {"a"}, {{"a", 1.0}}}, corpus);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("empty pseudo-document"), std::string::npos);
  }
}
