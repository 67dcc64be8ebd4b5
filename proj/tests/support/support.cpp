#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <unistd.h>

#include "factsum/embedder.hpp"
#include "factsum/text.hpp"

namespace factsum::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("factsum-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

fs::path fixture_dir() { return fs::path(FACTSUM_FIXTURE_DIR); }

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  for (const std::string& l : lines) f << l << "\n";
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream f(entry.path(), std::ios::binary);
    std::ostringstream buf;
    buf << f.rdbuf();
    out[entry.path().lexically_relative(root).generic_string()] = buf.str();
  }
  return out;
}

ModelConfig tiny_config(int vocab) {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.chunk_len = 8;
  c.max_src = 32;
  c.max_tgt = 16;
  c.vocab_size = vocab;
  return c;
}

TrainExample random_example(SplitMix64& rng, const ModelConfig& cfg, int src_len, int tgt_len,
                            int guidance_len, int pad_tail) {
  auto word = [&]() {
    return Vocabulary::kNumSpecial +
           static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size - Vocabulary::kNumSpecial)));
  };
  TrainExample ex;
  ex.doc_id = "rand";
  ex.source.push_back(Vocabulary::kCls);
  for (int i = 0; i < src_len; ++i) ex.source.push_back(word());
  ex.source.push_back(Vocabulary::kSep);
  for (int i = 0; i < pad_tail; ++i) ex.source.push_back(Vocabulary::kPad);
  if (guidance_len > 0) {
    ex.guidance.push_back(Vocabulary::kCls);
    for (int i = 0; i < guidance_len; ++i) ex.guidance.push_back(word());
    ex.guidance.push_back(Vocabulary::kSep);
    ex.guidance.push_back(Vocabulary::kCls);
    ex.guidance.push_back(word());
    ex.guidance.push_back(Vocabulary::kEnt);
    ex.guidance.push_back(word());
    ex.guidance.push_back(Vocabulary::kSep);
  }
  ex.target.push_back(Vocabulary::kBos);
  for (int i = 0; i < tgt_len; ++i) ex.target.push_back(word());
  ex.target.push_back(Vocabulary::kEos);
  return ex;
}

std::vector<GroupError> gradient_check(const ModelConfig& cfg, ModelParameters& params,
                                       const std::vector<TrainExample>& batch, GuidanceMode mode,
                                       double h, double floor) {
  BatchLoss analytic = batch_loss(cfg, params, batch, mode, true);
  std::vector<GroupError> out;
  std::vector<ad::Parameter*> list = params.list();
  for (std::size_t i = 0; i < list.size(); ++i) {
    ad::Parameter& p = *list[i];
    GroupError ge;
    ge.name = p.name;
    for (Eigen::Index e = 0; e < p.value.size(); ++e) {
      double& x = p.value.data()[e];
      const double saved = x;
      x = saved + h;
      double up = batch_loss(cfg, params, batch, mode, false).loss;
      x = saved - h;
      double down = batch_loss(cfg, params, batch, mode, false).loss;
      x = saved;
      double numeric = (up - down) / (2.0 * h);
      double a = analytic.grads[i].data()[e];
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ge.max_rel_error = std::max(ge.max_rel_error, rel);
      ge.max_abs_analytic = std::max(ge.max_abs_analytic, std::abs(a));
    }
    out.push_back(ge);
  }
  return out;
}

CopyTask copy_task(int n, int length, int n_words, std::uint64_t seed, const ModelConfig& cfg) {
  SplitMix64 rng(seed);
  std::vector<std::string> words;
  for (int i = 0; i < n_words; ++i) words.push_back("w" + std::to_string(i));
  std::map<std::string, int> counts;
  std::vector<std::vector<std::string>> seqs;
  for (int i = 0; i < n; ++i) {
    std::vector<std::string> s;
    for (int j = 0; j < length; ++j) s.push_back(words[rng.below(words.size())]);
    for (const auto& w : s) ++counts[w];
    seqs.push_back(std::move(s));
  }
  CopyTask task;
  task.vocab = Vocabulary::build(counts, 1);
  for (int i = 0; i < n; ++i) {
    TrainExample ex;
    ex.doc_id = "copy-" + std::to_string(i);
    ex.source = frame_source(seqs[i], task.vocab, cfg.max_src);
    ex.target = frame_target(seqs[i], task.vocab, cfg.max_tgt);
    task.examples.push_back(std::move(ex));
  }
  return task;
}

EfficacyCorpus efficacy_corpus(std::uint64_t seed) {
  SplitMix64 rng(seed);
  const int n_entities = 10;
  const int n_codes = 6;
  const int n_fillers = 12;
  EfficacyCorpus out;

  std::map<std::string, std::vector<std::string>> gaz;
  for (int e = 0; e < n_entities; ++e) gaz["E" + std::to_string(e)] = {"ent" + std::to_string(e)};
  out.gazetteer = Gazetteer::from_entries(gaz);

  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < n_entities; ++a) {
    for (int b = a + 1; b < n_entities; ++b) pairs.emplace_back(a, b);
  }
  rng.shuffle(pairs);

  std::vector<std::pair<std::string, std::string>> facts;
  std::vector<Document> docs;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto [a, b] = pairs[i];
    const std::string ea = "ent" + std::to_string(a);
    const std::string eb = "ent" + std::to_string(b);
    const std::string code = "code" + std::to_string(rng.below(n_codes));
    facts.emplace_back("F" + std::to_string(i), ea + " with " + eb + " implies " + code);
    std::vector<std::string> sentences;
    std::string s1 = "patient with " + ea;
    std::string s2 = "history of " + eb;
    for (int f = 0; f < 2; ++f) s1 += " filler" + std::to_string(rng.below(n_fillers));
    for (int f = 0; f < 2; ++f) s2 += " filler" + std::to_string(rng.below(n_fillers));
    sentences.push_back(s1);
    sentences.push_back(s2);
    std::vector<std::string> summary{ea + " " + eb + " " + code};
    Document d = make_document("doc-" + std::to_string(i), sentences, summary);
    docs.push_back(recognize_entities(std::move(d), out.gazetteer));
  }
  out.facts = FactStore::from_texts(facts);
  const std::size_t n_val = docs.size() / 4;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    (i < n_val ? out.val_docs : out.train_docs).push_back(docs[i]);
  }
  return out;
}

PreparedExamples efficacy_examples(const EfficacyCorpus& corpus, GuidanceMode mode,
                                   const ModelConfig& cfg, int k) {
  HashEmbedder emb;
  FactIndex index = FactIndex::build(corpus.facts, emb);
  auto segments = [&](const Document& d) {
    GuidanceBundle b = retrieve_guidance(d, corpus.facts, index, corpus.gazetteer, emb, k);
    return segments_from(b, corpus.gazetteer, mode);
  };
  std::map<std::string, int> counts;
  for (const Document& d : corpus.train_docs) {
    GuidanceSegments seg = segments(d);
    count_tokens(d, mode == GuidanceMode::kVanilla ? nullptr : &seg, counts);
  }
  // Code tokens and every entity name are in the vocabulary for both modes so
  // losses are over the same label space.
  for (const Fact& f : corpus.facts.facts()) {
    for (const std::string& t : f.tokens) counts[t] += 1;
  }
  PreparedExamples out;
  out.vocab = Vocabulary::build(counts, 1);
  ModelConfig c = cfg;
  c.vocab_size = out.vocab.size();
  auto build = [&](const Corpus& docs) {
    std::vector<TrainExample> v;
    for (const Document& d : docs) {
      GuidanceSegments seg = segments(d);
      v.push_back(make_example(d, mode == GuidanceMode::kVanilla ? nullptr : &seg, out.vocab, c));
    }
    return v;
  };
  out.train = build(corpus.train_docs);
  out.val = build(corpus.val_docs);
  return out;
}

RandomCluster random_cluster(SplitMix64& rng) {
  RandomCluster rc;
  const int n_docs = 1 + static_cast<int>(rng.below(6));
  std::map<std::string, std::vector<std::string>> gaz{{"A", {"alpha"}}, {"B", {"beta"}}, {"C", {"gamma delta"}}};
  Gazetteer gazetteer = Gazetteer::from_entries(gaz);
  const std::vector<std::string> words{"the", "study", "of", "cells", "was", "small", "and", "noisy"};
  const std::vector<std::string> entity_words{"alpha", "beta", "gamma delta"};
  for (int d = 0; d < n_docs; ++d) {
    std::string id = "d" + std::to_string(rng.below(1000));
    while (std::any_of(rc.corpus.begin(), rc.corpus.end(), [&](const Document& x) { return x.id == id; })) {
      id += "x";
    }
    const int n_sent = 1 + static_cast<int>(rng.below(5));
    std::vector<std::string> sentences;
    bool any_entity = false;
    for (int s = 0; s < n_sent; ++s) {
      std::string text;
      const int len = 2 + static_cast<int>(rng.below(5));
      for (int w = 0; w < len; ++w) text += (w ? " " : "") + words[rng.below(words.size())];
      bool with_entity = rng.uniform() < 0.5 || (s == n_sent - 1 && !any_entity);
      if (with_entity) {
        text += " " + entity_words[rng.below(entity_words.size())];
        any_entity = true;
      }
      sentences.push_back(text);
    }
    rc.corpus.push_back(recognize_entities(make_document(id, sentences), gazetteer));
    rc.cluster.doc_ids.push_back(id);
    Vector v(4);
    // Few distinct directions so equal importances occur.
    const int dir = static_cast<int>(rng.below(3));
    v.setZero();
    v(dir) = 1.0;
    if (rng.uniform() < 0.5) v(3) = 1.0;
    rc.doc_vectors[id] = normalized(v);
  }
  rc.cluster.cluster_id = static_cast<int>(rng.below(100));
  compute_importance(rc.cluster, rc.doc_vectors);
  return rc;
}

double importance_oracle(const std::string& target, const std::vector<std::string>& members,
                         const std::map<std::string, Vector>& vectors) {
  if (members.size() == 1) return 1.0;
  const Vector& di = vectors.at(target);
  double sum = 0.0;
  for (const std::string& m : members) {
    if (m == target) continue;
    const Vector& dj = vectors.at(m);
    double dot = 0.0, ni = 0.0, nj = 0.0;
    for (Eigen::Index k = 0; k < di.size(); ++k) {
      dot += di(k) * dj(k);
      ni += di(k) * di(k);
      nj += dj(k) * dj(k);
    }
    sum += dot / (std::sqrt(ni) * std::sqrt(nj));
  }
  return sum / static_cast<double>(members.size() - 1);
}

FixedLogitScorer::FixedLogitScorer(std::vector<Eigen::VectorXd> step_log_probs, int eos)
    : steps_(std::move(step_log_probs)), eos_(eos) {}

FixedLogitScorer FixedLogitScorer::random(SplitMix64& rng, int vocab, int steps, int eos) {
  std::vector<Eigen::VectorXd> out;
  for (int t = 0; t < steps; ++t) {
    Eigen::VectorXd z(vocab);
    for (int v = 0; v < vocab; ++v) z(v) = 2.0 * rng.normal();
    const double mx = z.maxCoeff();
    const double lse = mx + std::log((z.array() - mx).exp().sum());
    out.push_back((z.array() - lse).matrix());
  }
  return FixedLogitScorer(std::move(out), eos);
}

Eigen::VectorXd FixedLogitScorer::log_probs(std::span<const int> prefix) {
  return steps_.at(prefix.size() - 1);
}

HashedScorer::HashedScorer(int vocab, int eos, std::uint64_t seed, double temperature)
    : vocab_(vocab), eos_(eos), seed_(seed), temperature_(temperature) {}

Eigen::VectorXd HashedScorer::log_probs(std::span<const int> prefix) {
  std::uint64_t h = seed_;
  for (int t : prefix) h = fnv1a64(std::to_string(t) + ",", h);
  SplitMix64 rng(h);
  Eigen::VectorXd z(vocab_);
  for (int v = 0; v < vocab_; ++v) z(v) = rng.normal() / temperature_;
  const double mx = z.maxCoeff();
  const double lse = mx + std::log((z.array() - mx).exp().sum());
  return (z.array() - lse).matrix();
}

Hypothesis exhaustive_decode(StepScorer& scorer, int max_len, int min_len, double alpha) {
  Hypothesis best;
  double best_score = -std::numeric_limits<double>::infinity();
  bool have = false;
  std::vector<int> tokens;
  std::function<void(double)> rec = [&](double lp) {
    std::vector<int> prefix{scorer.bos()};
    prefix.insert(prefix.end(), tokens.begin(), tokens.end());
    Eigen::VectorXd next = scorer.log_probs(prefix);
    for (int v = 0; v < scorer.vocab_size(); ++v) {
      const bool is_eos = v == scorer.eos();
      if (is_eos && static_cast<int>(tokens.size()) < min_len) continue;
      tokens.push_back(v);
      const double total = lp + next(v);
      const bool complete = is_eos || static_cast<int>(tokens.size()) == max_len;
      if (complete) {
        double lpen = std::pow((5.0 + static_cast<double>(tokens.size())) / 6.0, alpha);
        double score = total / lpen;
        if (!have || score > best_score) {
          best = Hypothesis{tokens, total, true};
          best_score = score;
          have = true;
        }
      } else {
        rec(total);
      }
      tokens.pop_back();
    }
  };
  rec(0.0);
  return best;
}

bool has_repeated_trigram(const std::vector<int>& tokens) {
  std::set<std::vector<int>> seen;
  for (std::size_t i = 0; i + 2 < tokens.size(); ++i) {
    if (!seen.insert({tokens[i], tokens[i + 1], tokens[i + 2]}).second) return true;
  }
  return false;
}

std::vector<ScoredFact> exhaustive_top_k(const std::vector<std::string>& ids,
                                         const std::vector<Vector>& vectors,
                                         const std::vector<std::string>& candidates,
                                         const Vector& query, int k) {
  std::set<std::string> wanted(candidates.begin(), candidates.end());
  std::vector<ScoredFact> all;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!wanted.count(ids[i])) continue;
    double s = 0.0;
    for (Eigen::Index d = 0; d < query.size(); ++d) s += vectors[i](d) * query(d);
    all.push_back({ids[i], s});
  }
  std::sort(all.begin(), all.end(), [](const ScoredFact& a, const ScoredFact& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.fact_id < b.fact_id;
  });
  if (all.size() > static_cast<std::size_t>(k)) all.resize(static_cast<std::size_t>(k));
  return all;
}

nlohmann::json fixture_config_json(const fs::path& workdir) {
  const fs::path dir = fixture_dir();
  nlohmann::json j = nlohmann::json::parse(std::ifstream(dir / "config.json"));
  j["paths"]["corpus"] = (dir / "corpus.jsonl").string();
  j["paths"]["gazetteer"] = (dir / "gazetteer.jsonl").string();
  j["paths"]["facts"] = (dir / "facts.jsonl").string();
  j["paths"]["workdir"] = workdir.string();
  return j;
}

}  // namespace factsum::testing
