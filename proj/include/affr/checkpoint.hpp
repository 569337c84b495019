// Self-describing binary container for trained state.
//
// Layout: a fixed magic, a format version, the producing run's config hash,
// then named arrays (name, dtype code, shape, row-major doubles) sorted by
// name. Save then load restores every byte. Loading verifies the magic,
// version, and declared sizes; a file that ends early is rejected with the
// byte offset where reading stopped. Loading against a different config
// hash is refused unless forced.
//
// Model parameters store as "param.<name>" with Adam moments under
// "adam.m.<name>" and "adam.v.<name>". Memory-bank state rides in the same
// container under its own "bank.*" names.
#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "affr/memory_bank.hpp"
#include "affr/nn.hpp"

namespace affr {

struct CheckpointError : std::runtime_error {
  int64_t offset;  // byte offset of the failure, -1 when not positional
  CheckpointError(const std::string& what, int64_t off = -1)
      : std::runtime_error(what), offset(off) {}
};

struct NamedArray {
  std::vector<int> shape;
  std::vector<double> data;  // row-major, numel(shape) entries
};

struct Checkpoint {
  uint32_t version = 1;
  std::string config_hash;
  std::map<std::string, NamedArray> arrays;

  // Rejects duplicate names and data/shape length mismatches.
  void add(const std::string& name, std::vector<int> shape, std::vector<double> data);

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

// Captures parameter values and Adam moments.
Checkpoint checkpoint_from_params(const nn::ParamStore& ps, const std::string& config_hash);

// Writes checkpoint values back into an already-built store. Every store
// entry must be present with a matching shape; absent moment arrays leave
// the store's moments untouched.
void params_from_checkpoint(const Checkpoint& ck, nn::ParamStore& ps);

void add_bank_to_checkpoint(Checkpoint& ck, const MemoryBank& bank);
bool checkpoint_has_bank(const Checkpoint& ck);
MemoryBank bank_from_checkpoint(const Checkpoint& ck);

// Load plus config-hash verification; force bypasses the hash check only.
Checkpoint load_checkpoint_for(const std::string& path, const std::string& expected_hash,
                               bool force);

}  // namespace affr
