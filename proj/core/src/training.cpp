#include "factsum/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <utility>

#include "factsum/error.hpp"

namespace factsum {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorKind::kConfig, "train.lr must be > 0");
  if (epochs < 1) throw Error(ErrorKind::kConfig, "train.epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::kConfig, "train.batch_size must be >= 1");
  if (patience < 1) throw Error(ErrorKind::kConfig, "train.patience must be >= 1");
  if (k < 1) throw Error(ErrorKind::kConfig, "k must be >= 1");
  if (max_steps < 0) throw Error(ErrorKind::kConfig, "train.max_steps must be >= 0");
}

OptimizerState OptimizerState::for_params(std::span<const ad::Parameter* const> params) {
  OptimizerState s;
  for (const ad::Parameter* p : params) {
    s.m.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
    s.v.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
  }
  return s;
}

double cross_entropy(const ad::Matrix& logits, std::span<const int> targets, int pad_id) {
  if (logits.rows() != static_cast<Eigen::Index>(targets.size())) {
    throw Error(ErrorKind::kPrecondition, "cross_entropy: logits and targets differ in length");
  }
  double total = 0.0;
  int count = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    int y = targets[static_cast<std::size_t>(r)];
    if (y == pad_id) continue;
    if (y < 0 || y >= logits.cols()) throw Error(ErrorKind::kPrecondition, "cross_entropy: target out of range");
    double mx = logits.row(r).maxCoeff();
    double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    total += lse - logits(r, y);
    ++count;
  }
  if (count == 0) throw Error(ErrorKind::kPrecondition, "cross_entropy: every position is padding");
  return total / count;
}

void adam_step(std::span<ad::Parameter* const> params, const Gradients& grads,
               OptimizerState& state, double lr) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw Error(ErrorKind::kPrecondition, "adam_step: parameter/gradient count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ad::Matrix& g = grads[i];
    if (g.rows() != params[i]->value.rows() || g.cols() != params[i]->value.cols()) {
      throw Error(ErrorKind::kPrecondition, "adam_step: gradient shape mismatch for " + params[i]->name);
    }
    if (!g.allFinite()) {
      throw Error(ErrorKind::kNumeric, "adam_step: non-finite gradient for " + params[i]->name);
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Matrix& m = state.m[i];
    ad::Matrix& v = state.v[i];
    m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
    v = state.beta2 * v + (1.0 - state.beta2) * grads[i].cwiseAbs2();
    params[i]->value.array() -=
        lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  }
}

ad::Var example_loss(ad::Tape& t, const ModelConfig& cfg, const ModelParameters& p,
                     const TrainExample& ex, GuidanceMode mode) {
  if (ex.target.size() < 2) throw Error(ErrorKind::kPrecondition, "example " + ex.doc_id + ": target too short");
  if (static_cast<int>(ex.target.size()) > cfg.max_tgt) {
    throw Error(ErrorKind::kPrecondition, "example " + ex.doc_id + ": target longer than max_tgt");
  }
  DecoderMemory memory;
  memory.source = encode_source_graph(t, cfg, p, ex.source);
  memory.source_valid = valid_positions(ex.source);
  if (mode != GuidanceMode::kVanilla) {
    if (ex.guidance.empty()) {
      throw Error(ErrorKind::kPrecondition, "example " + ex.doc_id + ": guided mode needs guidance ids");
    }
    memory.guidance = encode_guidance_graph(t, cfg, p, ex.guidance);
    memory.guidance_valid = valid_positions(ex.guidance);
  }
  std::span<const int> prefix(ex.target.data(), ex.target.size() - 1);
  std::span<const int> next(ex.target.data() + 1, ex.target.size() - 1);
  ad::Var logits = decode_graph(t, cfg, p, prefix, memory);
  return ad::cross_entropy(t, logits, next, Vocabulary::kPad);
}

namespace {

long target_tokens(const TrainExample& ex) {
  return static_cast<long>(std::count_if(ex.target.begin() + 1, ex.target.end(),
                                         [](int id) { return id != Vocabulary::kPad; }));
}

}  // namespace

BatchLoss batch_loss(const ModelConfig& cfg, const ModelParameters& p,
                     std::span<const TrainExample> batch, GuidanceMode mode, bool with_grads) {
  if (batch.empty()) throw Error(ErrorKind::kPrecondition, "batch_loss: empty batch");
  BatchLoss out;
  for (const TrainExample& ex : batch) out.tokens += target_tokens(ex);
  const auto plist = p.list();
  if (with_grads) {
    for (const ad::Parameter* q : plist) out.grads.push_back(ad::Matrix::Zero(q->value.rows(), q->value.cols()));
  }
  for (const TrainExample& ex : batch) {
    const double weight = static_cast<double>(target_tokens(ex)) / static_cast<double>(out.tokens);
    ad::Tape t(with_grads);
    ad::Var loss = example_loss(t, cfg, p, ex, mode);
    double value = t.value(loss)(0, 0);
    if (!std::isfinite(value)) {
      throw Error(ErrorKind::kNumeric, "loss is not finite for example " + ex.doc_id);
    }
    out.loss += weight * value;
    if (with_grads) {
      t.backward(loss, weight);
      for (std::size_t i = 0; i < plist.size(); ++i) {
        if (t.has_gradient(*plist[i])) out.grads[i] += t.gradient(*plist[i]);
      }
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const TrainExample> examples,
                                                   int batch_size, SplitMix64& rng) {
  if (batch_size < 1) throw Error(ErrorKind::kPrecondition, "batch_size must be >= 1");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return examples[a].source.size() < examples[b].source.size();
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  rng.shuffle(batches);
  return batches;
}

Trainer::Trainer(ModelConfig cfg, TrainConfig train_cfg, ModelParameters params)
    : cfg_(std::move(cfg)), train_cfg_(train_cfg), params_(std::move(params)) {
  cfg_.validate();
  train_cfg_.validate();
  const auto plist = std::as_const(params_).list();
  state_ = OptimizerState::for_params(plist);
}

double Trainer::train_step(std::span<const TrainExample> batch) {
  BatchLoss bl = batch_loss(cfg_, params_, batch, train_cfg_.mode, true);
  adam_step(params_.list(), bl.grads, state_, train_cfg_.lr);
  if (!params_.all_finite()) {
    throw Error(ErrorKind::kNumeric, "parameters diverged at step " + std::to_string(state_.step));
  }
  return bl.loss;
}

double Trainer::evaluate_loss(std::span<const TrainExample> data) const {
  return batch_loss(cfg_, params_, data, train_cfg_.mode, false).loss;
}

double Trainer::token_accuracy(std::span<const TrainExample> data) const {
  long correct = 0;
  long total = 0;
  for (const TrainExample& ex : data) {
    EncodedStates src = encode_source(ex.source, cfg_, params_);
    std::optional<EncodedStates> guid;
    if (train_cfg_.mode != GuidanceMode::kVanilla) guid = encode_guidance(ex.guidance, cfg_, params_);
    std::span<const int> prefix(ex.target.data(), ex.target.size() - 1);
    ad::Matrix logits = decode_step(prefix, src, guid ? &*guid : nullptr, cfg_, params_);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      int y = ex.target[static_cast<std::size_t>(r) + 1];
      if (y == Vocabulary::kPad) continue;
      Eigen::Index best = 0;
      logits.row(r).maxCoeff(&best);
      correct += (best == y) ? 1 : 0;
      ++total;
    }
  }
  if (total == 0) throw Error(ErrorKind::kPrecondition, "token_accuracy: no target tokens");
  return static_cast<double>(correct) / static_cast<double>(total);
}

EarlyStopping::EarlyStopping(int patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw Error(ErrorKind::kConfig, "patience must be >= 1");
}

bool EarlyStopping::update(double val_loss) {
  ++epoch_;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    bad_epochs_ = 0;
    return true;
  }
  ++bad_epochs_;
  return false;
}

TrainResult train(std::span<const TrainExample> train_set, std::span<const TrainExample> val_set,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const Vocabulary& vocab,
                  const std::function<void(const Checkpoint&)>& on_improve) {
  if (train_set.empty() || val_set.empty()) {
    throw Error(ErrorKind::kPrecondition, "training needs non-empty train and validation splits");
  }
  train_cfg.validate();
  ModelConfig cfg = model_cfg;
  cfg.vocab_size = vocab.size();
  cfg.validate();

  Trainer trainer(cfg, train_cfg, ModelParameters::initialize(cfg, train_cfg.seed));
  SplitMix64 rng(train_cfg.seed ^ 0x5eedba7c4e5ULL);
  EarlyStopping stopper(train_cfg.patience);
  TrainResult result;

  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    double sum = 0.0;
    int n = 0;
    bool capped = false;
    for (const auto& idx : make_batches(train_set, train_cfg.batch_size, rng)) {
      std::vector<TrainExample> batch;
      batch.reserve(idx.size());
      for (std::size_t i : idx) batch.push_back(train_set[i]);
      double loss = trainer.train_step(batch);
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::kNumeric, "training loss diverged at step " + std::to_string(trainer.steps()));
      }
      sum += loss;
      ++n;
      if (train_cfg.max_steps > 0 && trainer.steps() >= train_cfg.max_steps) {
        capped = true;
        break;
      }
    }
    LossPoint point{epoch, trainer.steps(), n > 0 ? sum / n : 0.0, trainer.evaluate_loss(val_set)};
    if (!std::isfinite(point.val_loss)) {
      throw Error(ErrorKind::kNumeric, "validation loss diverged after epoch " + std::to_string(epoch));
    }
    result.curve.push_back(point);
    result.epochs_run = epoch;
    if (stopper.update(point.val_loss)) {
      result.best = Checkpoint{cfg, train_cfg.mode, vocab, trainer.params(), {}};
      result.best.info = {{"epoch", epoch}, {"step", trainer.steps()}, {"val_loss", point.val_loss}};
      result.best_epoch = epoch;
      if (on_improve) on_improve(result.best);
    }
    if (capped || stopper.should_stop()) break;
  }
  return result;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossPoint> curve) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  f << "epoch,step,train_loss,val_loss\n";
  char line[128];
  for (const LossPoint& p : curve) {
    std::snprintf(line, sizeof(line), "%d,%ld,%.17g,%.17g\n", p.epoch, p.step, p.train_loss, p.val_loss);
    f << line;
  }
}

GuidanceSegments segments_from(const GuidanceBundle& bundle, const Gazetteer& gazetteer,
                               GuidanceMode mode) {
  GuidanceSegments seg;
  if (mode == GuidanceMode::kVanilla) return seg;
  for (const std::string& id : bundle.chain.entities) {
    if (gazetteer.contains(id)) {
      seg.entities.push_back(gazetteer.surface(id));
    } else {
      seg.entities.push_back({id});
    }
  }
  if (mode == GuidanceMode::kEntitiesFacts) {
    for (const GuidanceFact& f : bundle.facts) seg.facts.push_back(f.tokens);
  }
  return seg;
}

TrainExample make_example(const Document& doc, const GuidanceSegments* guidance,
                          const Vocabulary& vocab, const ModelConfig& cfg) {
  if (!doc.summary) throw Error(ErrorKind::kInvalidInput, "document " + doc.id + " has no summary");
  TrainExample ex;
  ex.doc_id = doc.id;
  ex.source = frame_source(doc.tokens(), vocab, cfg.max_src);
  if (guidance) ex.guidance = frame_guidance(*guidance, vocab);
  ex.target = frame_target(doc.summary_tokens(), vocab, cfg.max_tgt);
  return ex;
}

void count_tokens(const Document& doc, const GuidanceSegments* guidance,
                  std::map<std::string, int>& counts) {
  for (const std::string& t : doc.tokens()) ++counts[t];
  for (const std::string& t : doc.summary_tokens()) ++counts[t];
  if (!guidance) return;
  for (const auto& f : guidance->facts) {
    for (const std::string& t : f) ++counts[t];
  }
  for (const auto& e : guidance->entities) {
    for (const std::string& t : e) ++counts[t];
  }
}

}  // namespace factsum
