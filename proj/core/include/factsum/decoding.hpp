#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "factsum/checkpoint.hpp"
#include "factsum/model.hpp"

namespace factsum {

struct DecodeConfig {
  int beam_size = 5;
  double alpha = 0.8;
  int max_len = 210;  // generated tokens, [EOS] included
  bool trigram_block = true;
  int min_len = 1;    // content tokens required before [EOS] is allowed

  void validate() const;  // throws kConfig
};

// ((5 + length) / 6)^alpha.
double length_penalty(int length, double alpha);

// True iff appending `candidate` to `tokens` repeats a trigram already in
// `tokens`.
bool blocks_trigram(std::span<const int> tokens, int candidate);

// Next-token log-probabilities given a prefix that starts with the BOS id.
// Disallowed tokens may carry -inf.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual int vocab_size() const = 0;
  virtual int bos() const = 0;
  virtual int eos() const = 0;
  virtual Eigen::VectorXd log_probs(std::span<const int> prefix) = 0;
};

struct Hypothesis {
  std::vector<int> tokens;  // generated ids, no BOS
  double logprob = 0.0;
  bool finished = false;
};

// Penalized score logprob / length_penalty(|tokens|, alpha).
double hypothesis_score(const Hypothesis& h, double alpha);

// Argmax decoding under the same masking rules as beam_search; ties go to
// the lower id.
Hypothesis greedy_decode(StepScorer& scorer, const DecodeConfig& cfg);

// Beam search returning the best finished hypothesis (or best unfinished
// one at max_len).
Hypothesis beam_search(StepScorer& scorer, const DecodeConfig& cfg);

// Generated ids without [EOS].
std::vector<int> strip_eos(const Hypothesis& h, int eos);

// Adapter over a trained model with one incremental cache per prefix.
// Special ids other than [EOS] are never proposed.
class TransformerScorer : public StepScorer {
 public:
  TransformerScorer(const Checkpoint& ckpt, std::span<const int> source_ids,
                    const std::vector<int>* guidance_ids);

  int vocab_size() const override { return ckpt_.vocab.size(); }
  int bos() const override { return Vocabulary::kBos; }
  int eos() const override { return Vocabulary::kEos; }
  Eigen::VectorXd log_probs(std::span<const int> prefix) override;

 private:
  const Checkpoint& ckpt_;
  EncodedStates source_;
  std::optional<EncodedStates> guidance_;
  IncrementalDecoder decoder_;
  std::map<std::vector<int>, IncrementalDecoder::Cache> caches_;
};

// Summary tokens for `source_tokens`. A guided checkpoint fed no guidance
// receives the empty guidance frame.
std::vector<std::string> summarize(const Checkpoint& ckpt,
                                   std::span<const std::string> source_tokens,
                                   const GuidanceSegments* guidance, const DecodeConfig& cfg);

struct Prediction {
  std::string doc_id;
  std::vector<std::string> tokens;
};

// One object per line: {"doc_id", "summary", "tokens"}.
void write_predictions(const std::filesystem::path& path, std::span<const Prediction> preds);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

}  // namespace factsum
