#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "factsum/checkpoint.hpp"
#include "factsum/corpus.hpp"
#include "factsum/knowledge.hpp"
#include "factsum/model.hpp"
#include "factsum/random.hpp"

namespace factsum {

struct TrainConfig {
  int epochs = 5;
  double lr = 5e-5;
  int batch_size = 8;
  int patience = 1;
  std::uint64_t seed = 7;
  GuidanceMode mode = GuidanceMode::kEntitiesFacts;
  int k = 3;
  long max_steps = 0;  // 0: no step cap

  void validate() const;  // throws kConfig
};

struct TrainExample {
  std::string doc_id;
  std::vector<int> source;    // framed [CLS] ... [SEP]
  std::vector<int> guidance;  // framed guidance; empty in vanilla mode
  std::vector<int> target;    // framed [BOS] ... [EOS]
};

// Adam accumulators aligned with ModelParameters::list().
struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<ad::Matrix> m;
  std::vector<ad::Matrix> v;

  static OptimizerState for_params(std::span<const ad::Parameter* const> params);
};

using Gradients = std::vector<ad::Matrix>;

// Mean over non-pad targets of -log softmax(logits row)[target].
double cross_entropy(const ad::Matrix& logits, std::span<const int> targets, int pad_id);

// Bias-corrected Adam, no weight decay. Throws kNumeric on a non-finite
// gradient and kPrecondition on a shape mismatch.
void adam_step(std::span<ad::Parameter* const> params, const Gradients& grads,
               OptimizerState& state, double lr);

// Teacher-forced loss graph for one example. The guidance encoder is only
// built when `mode` is not vanilla.
ad::Var example_loss(ad::Tape& t, const ModelConfig& cfg, const ModelParameters& p,
                     const TrainExample& ex, GuidanceMode mode);

struct BatchLoss {
  double loss = 0.0;  // token-weighted mean over the batch
  long tokens = 0;
  Gradients grads;    // aligned with params.list(); empty if not requested
};

// Loss of a batch as the token-weighted mean of per-example losses, with
// gradients when `with_grads` is set.
BatchLoss batch_loss(const ModelConfig& cfg, const ModelParameters& p,
                     std::span<const TrainExample> batch, GuidanceMode mode, bool with_grads);

// Groups examples of similar source length into batches, then shuffles the
// batch order.
std::vector<std::vector<std::size_t>> make_batches(std::span<const TrainExample> examples,
                                                   int batch_size, SplitMix64& rng);

class Trainer {
 public:
  Trainer(ModelConfig cfg, TrainConfig train_cfg, ModelParameters params);

  // One optimizer update; returns the batch loss before the update.
  double train_step(std::span<const TrainExample> batch);
  double evaluate_loss(std::span<const TrainExample> data) const;
  // Fraction of non-pad target positions where the teacher-forced argmax
  // equals the reference token.
  double token_accuracy(std::span<const TrainExample> data) const;

  const ModelConfig& config() const { return cfg_; }
  const ModelParameters& params() const { return params_; }
  long steps() const { return state_.step; }

 private:
  ModelConfig cfg_;
  TrainConfig train_cfg_;
  ModelParameters params_;
  OptimizerState state_;
};

class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);

  // Records one epoch's validation loss; true when it improves on the best.
  bool update(double val_loss);
  bool should_stop() const { return bad_epochs_ >= patience_; }
  int best_epoch() const { return best_epoch_; }  // 1-based, 0 before any update
  double best_loss() const { return best_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int bad_epochs_ = 0;
  double best_;
};

struct LossPoint {
  int epoch = 0;
  long step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<LossPoint> curve;
  int best_epoch = 0;
  int epochs_run = 0;
};

// Epoch loop with validation after every epoch. `on_improve` receives each
// new best checkpoint (used to persist it).
TrainResult train(std::span<const TrainExample> train_set, std::span<const TrainExample> val_set,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const Vocabulary& vocab,
                  const std::function<void(const Checkpoint&)>& on_improve = {});

void write_loss_csv(const std::filesystem::path& path, std::span<const LossPoint> curve);

// Guidance segments for `mode`: facts only in entities+facts mode, entity
// surfaces (first alias) in both guided modes.
GuidanceSegments segments_from(const GuidanceBundle& bundle, const Gazetteer& gazetteer,
                               GuidanceMode mode);

// Builds the framed example; target from the document summary.
TrainExample make_example(const Document& doc, const GuidanceSegments* guidance,
                          const Vocabulary& vocab, const ModelConfig& cfg);

// Token counts over sources, summaries and guidance segments.
void count_tokens(const Document& doc, const GuidanceSegments* guidance,
                  std::map<std::string, int>& counts);

}  // namespace factsum
