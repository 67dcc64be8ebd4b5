#include "factsum/embedder.hpp"

#include <cmath>

#include "factsum/error.hpp"
#include "factsum/random.hpp"
#include "factsum/text.hpp"

namespace factsum {

HashEmbedder::HashEmbedder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 1) throw Error(ErrorKind::kConfig, "embedder dim must be >= 1");
}

Vector HashEmbedder::embed_token(std::string_view token) const {
  SplitMix64 mixer(seed_);
  std::uint64_t stream_seed = fnv1a64(token) ^ mixer.next();
  SplitMix64 rng(stream_seed);
  Vector v(dim_);
  for (int i = 0; i < dim_; ++i) v[i] = rng.normal();
  return normalized(v);
}

Vector HashEmbedder::embed_sequence(std::span<const std::string> tokens) const {
  if (tokens.empty()) {
    throw Error(ErrorKind::kPrecondition, "embed_sequence: empty token list");
  }
  Vector sum = Vector::Zero(dim_);
  for (const std::string& t : tokens) sum += embed_token(t);
  return normalized(sum / static_cast<double>(tokens.size()));
}

Vector normalized(const Vector& v) {
  double n = v.norm();
  if (n == 0.0) return v;
  return v / n;
}

double cosine(const Vector& a, const Vector& b) {
  double na = a.norm();
  double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace factsum
