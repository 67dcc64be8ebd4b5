#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace factsum {

using Vector = Eigen::VectorXd;

// Training-free token embeddings: each token hashes (with the seed) into a
// SplitMix64 stream that fills a standard-normal vector, which is then
// L2-normalized. Stateless after construction.
class HashEmbedder {
 public:
  static constexpr int kDefaultDim = 64;
  static constexpr std::uint64_t kDefaultSeed = 20220621;

  explicit HashEmbedder(int dim = kDefaultDim, std::uint64_t seed = kDefaultSeed);

  int dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

  Vector embed_token(std::string_view token) const;

  // Normalized mean of the token vectors. Throws on an empty sequence.
  Vector embed_sequence(std::span<const std::string> tokens) const;

 private:
  int dim_;
  std::uint64_t seed_;
};

// Returns v / |v|, or the zero vector unchanged.
Vector normalized(const Vector& v);

// Cosine similarity; 0 when either side is the zero vector.
double cosine(const Vector& a, const Vector& b);

}  // namespace factsum
