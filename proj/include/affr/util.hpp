// Deterministic RNG, SHA-256 digests, and small shared helpers.
//
// All stochastic behavior in the project flows through Rng so that a fixed
// seed reproduces bit-identical runs on any platform. Draws are derived from
// raw mt19937_64 output directly; std::uniform_real_distribution and friends
// are avoided because their output is implementation-defined.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace affr {

class Rng {
 public:
  explicit Rng(uint64_t seed) : g_(seed) {}

  uint64_t raw() { return g_(); }

  // Uniform in [0,1) with 53 bits of entropy.
  double uniform() { return double(g_() >> 11) * (1.0 / 9007199254740992.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) return 0;
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = g_();
    } while (v >= limit);
    return v % n;
  }

  // Standard normal via Box-Muller (no cached spare; two draws per call).
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent stream; mixing constant is arbitrary but fixed.
  Rng fork(uint64_t salt) { return Rng(g_() ^ (salt * 0x9e3779b97f4a7c15ull)); }

 private:
  std::mt19937_64 g_;
};

// SHA-256 over a byte buffer, hex-encoded (lowercase).
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
// Hashes a file's contents; throws std::runtime_error if unreadable.
std::string sha256_file(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

std::vector<std::string> split_ws(const std::string& s);
std::string join(const std::vector<std::string>& parts, const std::string& sep);

// Fixed-format float for logs: shortest round-trip representation.
std::string fmt_real(double v);

}  // namespace affr
