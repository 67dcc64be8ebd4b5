#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "factsum/model.hpp"

namespace factsum {

// Everything needed to run a trained summarizer.
struct Checkpoint {
  ModelConfig config;
  GuidanceMode mode = GuidanceMode::kVanilla;
  Vocabulary vocab;
  ModelParameters params;
  nlohmann::json info = nlohmann::json::object();  // free-form training metadata
};

// Binary container, version 1:
//   "FACTSUM\0" | u32 version | u64 header_len | header JSON |
//   little-endian f64 tensor data in header order.
// The header carries config, mode, vocabulary, info and the tensor table
// ({"name", "rows", "cols"} per tensor).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

// Validates magic, version, vocabulary size and every tensor name/shape
// against the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace factsum
