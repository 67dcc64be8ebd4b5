#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "factsum/error.hpp"
#include "factsum/knowledge.hpp"
#include "factsum/text.hpp"
#include "support.hpp"

using namespace factsum;
using factsum::testing::exhaustive_top_k;
using factsum::testing::fixture_dir;
using factsum::testing::TempDir;
using factsum::testing::write_lines;

namespace {

struct Fixture {
  Gazetteer gaz = Gazetteer::load(fixture_dir() / "gazetteer.jsonl");
  FactStore store = FactStore::load(fixture_dir() / "facts.jsonl");
  HashEmbedder emb{64, 20220621};
  FactIndex index = FactIndex::build(store, emb);

  GuidanceBundle retrieve(const std::string& text, int k = 3) const {
    Document doc = recognize_entities(make_document("q", split(text, "|")), gaz);
    return retrieve_guidance(doc, store, index, gaz, emb, k);
  }
};

std::vector<std::string> ids_of(const GuidanceBundle& b) {
  std::vector<std::string> out;
  for (const auto& f : b.facts) out.push_back(f.fact_id);
  return out;
}

}  // namespace

TEST(FactStore, LoadsAndIndexesTokens) {
  Fixture fx;
  EXPECT_EQ(fx.store.size(), 10u);
  ASSERT_NE(fx.store.find("F004"), nullptr);
  EXPECT_EQ(fx.store.find("F004")->tokens,
            (std::vector<std::string>{"arteriosclerotic", "dementia", "with", "depression"}));
  EXPECT_EQ(fx.store.find("nope"), nullptr);
  EXPECT_EQ(fx.store.containing("dialysis").size(), 1u);
  EXPECT_TRUE(fx.store.containing("zebra").empty());
}

TEST(FactStore, RejectsDuplicatesAndEmptyText) {
  EXPECT_THROW(FactStore::from_texts({{"a", "x"}, {"a", "y"}}), Error);
  EXPECT_THROW(FactStore::from_texts({{"a", "..."}}), Error);
  EXPECT_THROW(FactStore::from_texts({{"", "x"}}), Error);
  TempDir dir;
  write_lines(dir / "f.jsonl", {R"({"fact_id": "a"})"});
  EXPECT_THROW(FactStore::load(dir / "f.jsonl"), Error);
}

TEST(EntityPairs, OrderedPairsOfTheChain) {
  auto pairs = entity_pairs(EntityChain{{"a", "b", "c"}});
  ASSERT_EQ(pairs.size(), 3u);
  EXPECT_EQ(pairs[0], (EntityPair{"a", "b"}));
  EXPECT_EQ(pairs[1], (EntityPair{"a", "c"}));
  EXPECT_EQ(pairs[2], (EntityPair{"b", "c"}));
  EXPECT_TRUE(entity_pairs(EntityChain{{"a"}}).empty());
}

TEST(EntityPairs, CountIsMChooseTwo) {
  for (int m = 0; m < 8; ++m) {
    EntityChain c;
    for (int i = 0; i < m; ++i) c.entities.push_back("e" + std::to_string(i));
    EXPECT_EQ(entity_pairs(c).size(), static_cast<std::size_t>(m * (m - 1) / 2));
  }
  EXPECT_EQ(entity_pairs(EntityChain{{"a", "b", "c", "d", "e"}}).size(), 10u);
}

TEST(EntityChain, FirstMentionOrderWithoutDuplicates) {
  Fixture fx;
  Document doc = recognize_entities(
      make_document("d", std::vector<std::string>{"Anemia and iron.", "Iron again, then ferritin."}), fx.gaz);
  EXPECT_EQ(entity_chain(doc).entities, (std::vector<std::string>{"C0002871", "C0302583", "C0015891"}));
}

TEST(CandidateFacts, RequireBothEntities) {
  Fixture fx;
  auto c = candidate_facts(fx.store, EntityPair{"C0302583", "C0002871"}, fx.gaz);
  std::vector<std::string> ids;
  for (const Fact* f : c) ids.push_back(f->fact_id);
  EXPECT_EQ(ids, (std::vector<std::string>{"F001", "F002", "F008"}));
}

TEST(CandidateFacts, IronAnemiaPairInFullStore) {
  Fixture fx;
  auto dd = candidate_facts(fx.store, EntityPair{"C0497327", "C0011570"}, fx.gaz);
  std::vector<std::string> ids;
  for (const Fact* f : dd) ids.push_back(f->fact_id);
  EXPECT_NE(std::find(ids.begin(), ids.end(), "F004"), ids.end());
  EXPECT_TRUE(candidate_facts(fx.store, EntityPair{"C0015891", "C0011849"}, fx.gaz).empty());
}

TEST(Retrieval, SmallStoreHasExactlyTwoIronAnemiaFacts) {
  Fixture fx;
  std::vector<Fact> table;
  for (const Fact& f : fx.store.facts()) {
    if (f.fact_id <= "F006") table.push_back(f);
  }
  FactStore store = FactStore::from_facts(table);
  FactIndex index = FactIndex::build(store, fx.emb);
  Document doc = recognize_entities(
      make_document("q", std::vector<std::string>{"Iron deficiency anemia was common.", "Iron was low."}), fx.gaz);
  auto b = retrieve_guidance(doc, store, index, fx.gaz, fx.emb, 3);
  auto ids = ids_of(b);
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(ids, (std::vector<std::string>{"F001", "F002"}));
}

TEST(Retrieval, IronAndAnemiaDocumentGetsTheAnemiaFacts) {
  Fixture fx;
  auto b = fx.retrieve("Iron deficiency anemia in pregnancy.|Dietary iron intake was low.");
  EXPECT_EQ(b.chain.entities, (std::vector<std::string>{"C0002871", "C0302583"}));
  auto ids = ids_of(b);
  EXPECT_NE(std::find(ids.begin(), ids.end(), "F001"), ids.end());
  EXPECT_NE(std::find(ids.begin(), ids.end(), "F002"), ids.end());
  for (const auto& id : ids) {
    EXPECT_NE(id, "F005");
    EXPECT_NE(id, "F006");
  }
}

TEST(Retrieval, DementiaAndDepressionDocumentGetsTheDementiaFacts) {
  Fixture fx;
  auto ids = ids_of(fx.retrieve("Presenile dementia was diagnosed.|Depression followed."));
  EXPECT_NE(std::find(ids.begin(), ids.end(), "F003"), ids.end());
  EXPECT_NE(std::find(ids.begin(), ids.end(), "F004"), ids.end());
}

TEST(Retrieval, ResultsAreBoundedSortedAndCandidatesOnly) {
  Fixture fx;
  for (int k : {1, 2, 3, 5}) {
    auto b = fx.retrieve("Iron, anemia and ferritin in dementia with depression.", k);
    EXPECT_LE(b.facts.size(), static_cast<std::size_t>(k));
    std::set<std::string> allowed;
    for (const auto& pair : entity_pairs(b.chain)) {
      for (const Fact* f : candidate_facts(fx.store, pair, fx.gaz)) allowed.insert(f->fact_id);
    }
    for (std::size_t i = 0; i < b.facts.size(); ++i) {
      EXPECT_TRUE(allowed.contains(b.facts[i].fact_id));
      if (i > 0) EXPECT_GE(b.facts[i - 1].score, b.facts[i].score);
    }
  }
}

TEST(Retrieval, NoPairsMeansNoFacts) {
  Fixture fx;
  EXPECT_TRUE(fx.retrieve("Only iron here.").facts.empty());
  EXPECT_TRUE(fx.retrieve("No entity at all.").facts.empty());
}

TEST(FactIndex, RowsAreUnitNormAndDeterministic) {
  std::vector<std::pair<std::string, std::string>> texts;
  for (int i = 0; i < 1000; ++i) {
    texts.emplace_back("f" + std::to_string(i), "fact number " + std::to_string(i) + " about x" + std::to_string(i % 37));
  }
  FactStore store = FactStore::from_texts(texts);
  HashEmbedder emb(64, 3);
  FactIndex a = FactIndex::build(store, emb), b = FactIndex::build(store, emb);
  EXPECT_EQ(a.size(), 1000u);
  for (Eigen::Index r = 0; r < a.vectors().rows(); ++r) EXPECT_NEAR(a.vectors().row(r).norm(), 1.0, 1e-9);
  EXPECT_EQ(a.vectors(), b.vectors());
  FactIndex one = FactIndex::build(FactStore::from_texts({{"x", "single fact"}}), emb);
  EXPECT_EQ(one.size(), 1u);
  EXPECT_EQ(one.row_of("x"), 0);
}

TEST(TopK, OrthonormalSelfMatch) {
  FactIndex::Matrix m = FactIndex::Matrix::Identity(3, 3);
  auto index = FactIndex::from_vectors({"u1", "u2", "u3"}, m);
  std::vector<std::string> cand{"u1", "u2", "u3"};
  auto r = top_k(index, cand, Vector::Unit(3, 1), 1);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].fact_id, "u2");
  EXPECT_DOUBLE_EQ(r[0].score, 1.0);
}

TEST(TopK, KLargerThanCandidates) {
  FactIndex::Matrix m = FactIndex::Matrix::Identity(5, 5);
  auto index = FactIndex::from_vectors({"a", "b", "c", "d", "e"}, m);
  std::vector<std::string> cand{"a", "b", "c", "d"};
  EXPECT_EQ(top_k(index, cand, Vector::Ones(5), 10).size(), 4u);
}

TEST(TopK, TiesResolveByFactId) {
  FactIndex::Matrix m(3, 2);
  m << 1, 0, 1, 0, 0, 1;
  auto index = FactIndex::from_vectors({"b", "a", "c"}, m);
  Vector q(2);
  q << 1, 0;
  std::vector<std::string> cand{"a", "b", "c"};
  auto r = top_k(index, cand, q, 2);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].fact_id, "a");
  EXPECT_EQ(r[1].fact_id, "b");
  EXPECT_DOUBLE_EQ(r[0].score, 1.0);
}

TEST(TopK, ErrorsAndShortLists) {
  FactIndex::Matrix m(1, 2);
  m << 1, 0;
  auto index = FactIndex::from_vectors({"a"}, m);
  std::vector<std::string> cand{"a"};
  EXPECT_EQ(top_k(index, cand, Vector::Ones(2), 10).size(), 1u);
  EXPECT_THROW(top_k(index, cand, Vector::Ones(2), 0), Error);
  EXPECT_THROW(top_k(index, cand, Vector::Ones(3), 1), Error);
  std::vector<std::string> unknown{"zz"};
  EXPECT_THROW(top_k(index, unknown, Vector::Ones(2), 1), Error);
  EXPECT_THROW(FactIndex::build(FactStore{}, HashEmbedder{}), Error);
}

TEST(TopK, MatchesExhaustiveOracle) {
  SplitMix64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    int n = 1 + static_cast<int>(rng.below(30));
    int dim = 1 + static_cast<int>(rng.below(8));
    std::vector<std::string> ids;
    std::vector<Vector> vecs;
    FactIndex::Matrix m(n, dim);
    for (int i = 0; i < n; ++i) {
      ids.push_back("f" + std::to_string(1000 + i));
      Vector v(dim);
      // Coarse values so exact ties are common.
      for (int d = 0; d < dim; ++d) v(d) = static_cast<double>(static_cast<int>(rng.below(3)) - 1);
      vecs.push_back(v);
      m.row(i) = v.transpose();
    }
    auto index = FactIndex::from_vectors(ids, m);
    std::vector<std::string> cand;
    for (const auto& id : ids) {
      if (rng.below(3) != 0) cand.push_back(id);
    }
    Vector q(dim);
    for (int d = 0; d < dim; ++d) q(d) = static_cast<double>(static_cast<int>(rng.below(3)) - 1);
    int k = 1 + static_cast<int>(rng.below(12));
    auto got = top_k(index, cand, q, k);
    auto want = exhaustive_top_k(ids, vecs, cand, q, k);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].fact_id, want[i].fact_id);
      EXPECT_DOUBLE_EQ(got[i].score, want[i].score);
    }
  }
}

TEST(Retrieval, ComposesTheSubOperations) {
  // 50 synthetic facts over 6 entities, then a 4-entity document.
  std::map<std::string, std::vector<std::string>> entries;
  for (int i = 0; i < 6; ++i) entries["E" + std::to_string(i)] = {"ent" + std::to_string(i)};
  Gazetteer gaz = Gazetteer::from_entries(entries);
  SplitMix64 rng(4);
  std::vector<std::pair<std::string, std::string>> texts;
  for (int i = 0; i < 50; ++i) {
    texts.emplace_back("f" + std::to_string(100 + i), "ent" + std::to_string(rng.below(6)) + " and ent" +
                                                        std::to_string(rng.below(6)) + " word" +
                                                        std::to_string(rng.below(9)));
  }
  FactStore store = FactStore::from_texts(texts);
  HashEmbedder emb(32, 8);
  FactIndex index = FactIndex::build(store, emb);
  Document doc = recognize_entities(
      make_document("d", std::vector<std::string>{"ent3 then ent1", "ent4 with ent0 and ent3"}), gaz);
  GuidanceBundle b = retrieve_guidance(doc, store, index, gaz, emb, 4);

  EntityChain chain = entity_chain(doc);
  ASSERT_EQ(chain.entities, (std::vector<std::string>{"E3", "E1", "E4", "E0"}));
  std::set<std::string> cand;
  for (const auto& pair : entity_pairs(chain)) {
    for (const Fact* f : candidate_facts(store, pair, gaz)) cand.insert(f->fact_id);
  }
  std::vector<std::string> cand_list(cand.begin(), cand.end());
  std::vector<std::string> ids;
  std::vector<Vector> vecs;
  for (const Fact& f : store.facts()) {
    ids.push_back(f.fact_id);
    vecs.push_back(emb.embed_sequence(f.tokens));
  }
  auto want = exhaustive_top_k(ids, vecs, cand_list, emb.embed_sequence(doc.tokens()), 4);
  EXPECT_EQ(b.chain, chain);
  ASSERT_EQ(b.facts.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(b.facts[i].fact_id, want[i].fact_id);
    EXPECT_NEAR(b.facts[i].score, want[i].score, 1e-12);
  }
}

TEST(Guidance, FileRoundTrip) {
  Fixture fx;
  std::vector<GuidanceBundle> bundles{fx.retrieve("Iron deficiency anemia.|Serum ferritin was low.")};
  bundles[0].doc_id = "x";
  TempDir dir;
  write_guidance(dir / "g.jsonl", bundles);
  auto back = read_guidance(dir / "g.jsonl", fx.store);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].doc_id, "x");
  EXPECT_EQ(back[0].chain, bundles[0].chain);
  ASSERT_EQ(back[0].facts.size(), bundles[0].facts.size());
  for (std::size_t i = 0; i < back[0].facts.size(); ++i) {
    EXPECT_EQ(back[0].facts[i].fact_id, bundles[0].facts[i].fact_id);
    EXPECT_EQ(back[0].facts[i].score, bundles[0].facts[i].score);
    EXPECT_EQ(back[0].facts[i].tokens, bundles[0].facts[i].tokens);
  }
}
