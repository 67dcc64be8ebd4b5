#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "factsum/corpus.hpp"
#include "factsum/decoding.hpp"
#include "factsum/embedder.hpp"
#include "factsum/model.hpp"
#include "factsum/training.hpp"

namespace factsum {

// One JSON file drives every command. Relative paths resolve against the
// directory holding the config file.
struct RunConfig {
  struct Paths {
    std::string corpus, gazetteer, facts, workdir;  // as written
  };

  Paths given;
  std::filesystem::path corpus, gazetteer, facts, workdir;  // resolved

  int embed_dim = HashEmbedder::kDefaultDim;
  std::uint64_t embed_seed = HashEmbedder::kDefaultSeed;
  double tau = 0.5;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
  int min_count = 2;
  int k = 3;
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;
  std::vector<int> ngram{1, 2, 3};
  std::vector<int> k_list{1, 3, 5, 10};

  HashEmbedder embedder() const { return HashEmbedder(embed_dim, embed_seed); }
  // Fully resolved echo; paths appear as written.
  nlohmann::json to_json() const;
  void validate() const;
};

// Rejects unknown keys and invalid values with kConfig; missing input files
// with kIo.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

struct Overrides {
  std::optional<std::uint64_t> seed;  // embedder and training seeds
  std::optional<int> k;
  std::optional<GuidanceMode> mode;
};
void apply_overrides(RunConfig& cfg, const Overrides& overrides);

struct Splits {
  std::vector<std::string> train, val, test;
};

// Documents with a summary, ordered by FNV-1a hash of their id (ties by id);
// val and test each take their fraction, at least one document apiece.
Splits split_documents(const Corpus& corpus, double val_fraction, double test_fraction);

struct StageResult {
  std::string command;
  std::vector<std::filesystem::path> outputs;
  nlohmann::json summary = nlohmann::json::object();
};

StageResult cmd_prepare(const RunConfig& cfg);
StageResult cmd_retrieve(const RunConfig& cfg);
StageResult cmd_train(const RunConfig& cfg);
StageResult cmd_summarize(const RunConfig& cfg, bool with_entities);
StageResult cmd_evaluate(const RunConfig& cfg, bool with_entities);
StageResult cmd_ablate(const RunConfig& cfg);

// Ascending, duplicates removed; throws kConfig on k < 1 or an empty list.
std::vector<int> normalize_k_list(const std::vector<int>& ks);

// "up", "down" or "flat" comparing the first and last values.
std::string trend_direction(const std::vector<double>& values);

}  // namespace factsum
