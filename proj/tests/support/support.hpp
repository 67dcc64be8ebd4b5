#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "factsum/corpus.hpp"
#include "factsum/decoding.hpp"
#include "factsum/knowledge.hpp"
#include "factsum/model.hpp"
#include "factsum/random.hpp"
#include "factsum/training.hpp"

namespace factsum::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::filesystem::path fixture_dir();

// Writes `lines` joined by newlines.
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

// Recursively maps relative file path -> contents.
std::map<std::string, std::string> snapshot(const std::filesystem::path& root);

// Tiny transformer: d_model 8, 1+1 layers, vocab 20 by default.
ModelConfig tiny_config(int vocab = 20);

// Random framed example over ids >= kNumSpecial; `pad_tail` [PAD] ids are
// appended to the source to exercise masking.
TrainExample random_example(SplitMix64& rng, const ModelConfig& cfg, int src_len, int tgt_len,
                            int guidance_len, int pad_tail = 0);

// ---------------------------------------------------------------------------
// Finite-difference oracle.

struct GroupError {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
};

// Central differences of batch_loss w.r.t. every parameter element,
// compared to the analytic gradients. Relative error per element is
// |a - n| / max(|a|, |n|, floor).
std::vector<GroupError> gradient_check(const ModelConfig& cfg, ModelParameters& params,
                                       const std::vector<TrainExample>& batch, GuidanceMode mode,
                                       double h = 1e-5, double floor = 1e-6);

// ---------------------------------------------------------------------------
// Synthetic data.

struct CopyTask {
  Vocabulary vocab;
  std::vector<TrainExample> examples;
};

// `n` pairs whose target repeats the source tokens.
CopyTask copy_task(int n, int length, int n_words, std::uint64_t seed, const ModelConfig& cfg);

// Corpus in which each summary names a code token that only appears in the
// fact attached to the document's entity pair.
struct EfficacyCorpus {
  Corpus train_docs, val_docs;
  Gazetteer gazetteer;
  FactStore facts;
};
EfficacyCorpus efficacy_corpus(std::uint64_t seed);

struct PreparedExamples {
  Vocabulary vocab;
  std::vector<TrainExample> train, val;
};
PreparedExamples efficacy_examples(const EfficacyCorpus& corpus, GuidanceMode mode,
                                   const ModelConfig& cfg, int k);

// Random cluster of documents for pseudo-document properties.
struct RandomCluster {
  Corpus corpus;
  DocCluster cluster;
  std::map<std::string, Vector> doc_vectors;
};
RandomCluster random_cluster(SplitMix64& rng);

// Importance by direct summation over the definition.
double importance_oracle(const std::string& target, const std::vector<std::string>& members,
                         const std::map<std::string, Vector>& vectors);

// ---------------------------------------------------------------------------
// Decoding oracles.

// Fixed log-probabilities per step, independent of the prefix.
class FixedLogitScorer : public StepScorer {
 public:
  FixedLogitScorer(std::vector<Eigen::VectorXd> step_log_probs, int eos);
  static FixedLogitScorer random(SplitMix64& rng, int vocab, int steps, int eos);

  int vocab_size() const override { return static_cast<int>(steps_.front().size()); }
  int bos() const override { return -1; }
  int eos() const override { return eos_; }
  Eigen::VectorXd log_probs(std::span<const int> prefix) override;
  const Eigen::VectorXd& step(std::size_t t) const { return steps_.at(t); }

 private:
  std::vector<Eigen::VectorXd> steps_;
  int eos_;
};

// Log-probabilities that depend on the whole prefix through a hash.
class HashedScorer : public StepScorer {
 public:
  HashedScorer(int vocab, int eos, std::uint64_t seed, double temperature = 1.0);
  int vocab_size() const override { return vocab_; }
  int bos() const override { return -1; }
  int eos() const override { return eos_; }
  Eigen::VectorXd log_probs(std::span<const int> prefix) override;

 private:
  int vocab_, eos_;
  std::uint64_t seed_;
  double temperature_;
};

// Best hypothesis over every token sequence of length <= max_len in which
// EOS only appears last and not before `min_len` other tokens. Score is
// logprob / length_penalty.
Hypothesis exhaustive_decode(StepScorer& scorer, int max_len, int min_len, double alpha);

// True if any trigram occurs twice.
bool has_repeated_trigram(const std::vector<int>& tokens);

// ---------------------------------------------------------------------------
// Retrieval oracle: scores every candidate with an explicit loop and sorts
// all of them by (score desc, id asc).
std::vector<ScoredFact> exhaustive_top_k(const std::vector<std::string>& ids,
                                         const std::vector<Vector>& vectors,
                                         const std::vector<std::string>& candidates,
                                         const Vector& query, int k);

// Run config for the fixture corpus rooted at `workdir`.
nlohmann::json fixture_config_json(const std::filesystem::path& workdir);

}  // namespace factsum::testing
