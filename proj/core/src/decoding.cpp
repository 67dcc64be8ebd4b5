#include "factsum/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "factsum/error.hpp"
#include "factsum/jsonl.hpp"
#include "factsum/text.hpp"

namespace factsum {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Candidate {
  double logprob;
  std::size_t parent;
  int token;
};

// Allowed next-token log-probs for a hypothesis.
Eigen::VectorXd masked_scores(StepScorer& scorer, const Hypothesis& h, const DecodeConfig& cfg) {
  std::vector<int> prefix;
  prefix.reserve(h.tokens.size() + 1);
  prefix.push_back(scorer.bos());
  prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
  Eigen::VectorXd lp = scorer.log_probs(prefix);
  if (lp.size() != scorer.vocab_size()) {
    throw Error(ErrorKind::kPrecondition, "scorer returned the wrong number of log-probs");
  }
  if (static_cast<int>(h.tokens.size()) < cfg.min_len) lp(scorer.eos()) = kNegInf;
  if (cfg.trigram_block && h.tokens.size() >= 2) {
    for (Eigen::Index c = 0; c < lp.size(); ++c) {
      if (lp(c) != kNegInf && blocks_trigram(h.tokens, static_cast<int>(c))) lp(c) = kNegInf;
    }
  }
  return lp;
}

void extend(Hypothesis& h, int token, double lp, int eos, int max_len) {
  h.tokens.push_back(token);
  h.logprob += lp;
  h.finished = token == eos || static_cast<int>(h.tokens.size()) >= max_len;
}

}  // namespace

void DecodeConfig::validate() const {
  if (beam_size < 1) throw Error(ErrorKind::kConfig, "decode.beam_size must be >= 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::kConfig, "decode.alpha must be in [0, 1]");
  if (max_len < 1) throw Error(ErrorKind::kConfig, "decode.max_len must be >= 1");
  if (min_len < 0 || min_len >= max_len) {
    throw Error(ErrorKind::kConfig, "decode.min_len must be in [0, max_len)");
  }
}

double length_penalty(int length, double alpha) {
  if (length < 1) throw Error(ErrorKind::kPrecondition, "length_penalty: length must be >= 1");
  return std::pow((5.0 + length) / 6.0, alpha);
}

bool blocks_trigram(std::span<const int> tokens, int candidate) {
  const std::size_t n = tokens.size();
  if (n < 2) return false;
  const int a = tokens[n - 2];
  const int b = tokens[n - 1];
  for (std::size_t i = 0; i + 2 < n; ++i) {
    if (tokens[i] == a && tokens[i + 1] == b && tokens[i + 2] == candidate) return true;
  }
  return false;
}

double hypothesis_score(const Hypothesis& h, double alpha) {
  return h.logprob / length_penalty(static_cast<int>(std::max<std::size_t>(h.tokens.size(), 1)), alpha);
}

Hypothesis greedy_decode(StepScorer& scorer, const DecodeConfig& cfg) {
  cfg.validate();
  Hypothesis h;
  while (!h.finished) {
    Eigen::VectorXd lp = masked_scores(scorer, h, cfg);
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < lp.size(); ++c) {
      if (lp(c) > lp(best)) best = c;
    }
    if (lp(best) == kNegInf) {
      h.finished = true;  // nothing left to emit
      break;
    }
    extend(h, static_cast<int>(best), lp(best), scorer.eos(), cfg.max_len);
  }
  return h;
}

Hypothesis beam_search(StepScorer& scorer, const DecodeConfig& cfg) {
  cfg.validate();
  const double bound_lp = length_penalty(cfg.max_len, cfg.alpha);
  std::vector<Hypothesis> live(1);
  std::vector<Hypothesis> finished;
  auto better = [&](const Hypothesis& a, const Hypothesis& b) {
    return hypothesis_score(a, cfg.alpha) > hypothesis_score(b, cfg.alpha);
  };

  while (!live.empty()) {
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < live.size(); ++i) {
      Eigen::VectorXd lp = masked_scores(scorer, live[i], cfg);
      bool any = false;
      for (Eigen::Index c = 0; c < lp.size(); ++c) {
        if (lp(c) == kNegInf) continue;
        cands.push_back({live[i].logprob + lp(c), i, static_cast<int>(c)});
        any = true;
      }
      if (!any) {
        Hypothesis dead = live[i];
        dead.finished = true;
        finished.push_back(std::move(dead));
      }
    }
    std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(cfg.beam_size));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.logprob != b.logprob) return a.logprob > b.logprob;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t j = 0; j < keep; ++j) {
      Hypothesis h = live[cands[j].parent];
      extend(h, cands[j].token, cands[j].logprob - h.logprob, scorer.eos(), cfg.max_len);
      if (h.finished) {
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);

    // No live hypothesis can beat the best finished one: log-probs only
    // fall and the penalty is largest at max_len.
    if (!finished.empty() && !live.empty()) {
      double best_done = kNegInf;
      for (const Hypothesis& h : finished) best_done = std::max(best_done, hypothesis_score(h, cfg.alpha));
      double best_live = kNegInf;
      for (const Hypothesis& h : live) best_live = std::max(best_live, h.logprob / bound_lp);
      if (best_done >= best_live) break;
    }
  }
  if (finished.empty()) return Hypothesis{{}, 0.0, true};
  // Earliest finished wins exact ties.
  const Hypothesis* best = &finished.front();
  for (const Hypothesis& h : finished) {
    if (better(h, *best)) best = &h;
  }
  return *best;
}

std::vector<int> strip_eos(const Hypothesis& h, int eos) {
  std::vector<int> out = h.tokens;
  if (!out.empty() && out.back() == eos) out.pop_back();
  return out;
}

TransformerScorer::TransformerScorer(const Checkpoint& ckpt, std::span<const int> source_ids,
                                     const std::vector<int>* guidance_ids)
    : ckpt_(ckpt),
      source_(encode_source(source_ids, ckpt.config, ckpt.params)),
      guidance_(guidance_ids ? std::optional<EncodedStates>(
                                   encode_guidance(*guidance_ids, ckpt.config, ckpt.params))
                             : std::nullopt),
      decoder_(ckpt.config, ckpt.params, source_, guidance_ ? &*guidance_ : nullptr) {}

Eigen::VectorXd TransformerScorer::log_probs(std::span<const int> prefix) {
  if (prefix.empty() || prefix.front() != Vocabulary::kBos) {
    throw Error(ErrorKind::kPrecondition, "decoder prefix must start with [BOS]");
  }
  std::vector<int> key(prefix.begin(), prefix.end());
  std::vector<int> parent(key.begin(), key.end() - 1);
  IncrementalDecoder::Cache cache;
  auto it = caches_.find(parent);
  std::size_t fed = 0;
  if (it != caches_.end()) {
    cache = it->second;
    fed = parent.size();
  } else {
    cache = decoder_.start();
  }
  Eigen::RowVectorXd logits;
  for (std::size_t i = fed; i < key.size(); ++i) logits = decoder_.step(cache, key[i]);
  caches_.emplace(std::move(key), std::move(cache));

  // Specials other than EOS are never emitted; normalize over the rest.
  Eigen::VectorXd lp = logits.transpose();
  for (int id = 0; id < Vocabulary::kNumSpecial; ++id) {
    if (id != Vocabulary::kEos) lp(id) = kNegInf;
  }
  const double mx = lp.maxCoeff();
  const double lse = mx + std::log((lp.array() - mx).exp().sum());
  lp.array() -= lse;
  return lp;
}

std::vector<std::string> summarize(const Checkpoint& ckpt,
                                   std::span<const std::string> source_tokens,
                                   const GuidanceSegments* guidance, const DecodeConfig& cfg) {
  DecodeConfig dc = cfg;
  dc.max_len = std::min(dc.max_len, ckpt.config.max_tgt);
  dc.min_len = std::min(dc.min_len, dc.max_len - 1);
  std::vector<int> src = frame_source(source_tokens, ckpt.vocab, ckpt.config.max_src);
  std::vector<int> guid;
  const std::vector<int>* guid_ptr = nullptr;
  if (ckpt.mode != GuidanceMode::kVanilla) {
    GuidanceSegments empty;
    guid = frame_guidance(guidance ? *guidance : empty, ckpt.vocab);
    guid_ptr = &guid;
  }
  TransformerScorer scorer(ckpt, src, guid_ptr);
  Hypothesis h = beam_search(scorer, dc);
  std::vector<int> ids = strip_eos(h, Vocabulary::kEos);
  return ckpt.vocab.decode(ids);
}

void write_predictions(const std::filesystem::path& path, std::span<const Prediction> preds) {
  std::vector<Json> records;
  records.reserve(preds.size());
  for (const Prediction& p : preds) {
    records.push_back({{"doc_id", p.doc_id}, {"summary", join_tokens(p.tokens)}, {"tokens", p.tokens}});
  }
  write_jsonl(path, records);
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::vector<Prediction> out;
  for_each_jsonl(path, [&](std::size_t line, const Json& obj) {
    Prediction p;
    p.doc_id = require_string(obj, "doc_id", line);
    if (obj.contains("tokens")) {
      p.tokens = require_string_array(obj, "tokens", line);
    } else {
      p.tokens = tokenize(require_string(obj, "summary", line));
    }
    out.push_back(std::move(p));
  });
  return out;
}

}  // namespace factsum
