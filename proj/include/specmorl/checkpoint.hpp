#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "specmorl/neural.hpp"

namespace specmorl {

struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data;
};

// Versioned binary container: text entries (config, provenance), integer
// counters (steps) and shaped double tensors stored bit-exactly.
//
// Layout (little-endian): magic "SPMRLCK1", u32 version, then three sections
// each prefixed by a u64 count:
//   text:     [u64 len][key][u64 len][value]
//   counters: [u64 len][key][i64 value]
//   tensors:  [u64 len][name][u64 rank][i64 dims...][f64 data...]
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> text;
  std::map<std::string, std::int64_t> counters;
  std::vector<NamedTensor> tensors;

  const NamedTensor& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
  std::int64_t counter(const std::string& name) const;
  const std::string& text_entry(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::string& path);

void put_network(Checkpoint& ckpt, const std::string& prefix, const QNetwork& net);
// Overwrites every parameter of `net`; CheckpointError on missing or
// mis-shaped tensors.
void get_network(const Checkpoint& ckpt, const std::string& prefix, QNetwork& net);

void put_adam(Checkpoint& ckpt, const std::string& prefix, const Adam& adam);
void get_adam(const Checkpoint& ckpt, const std::string& prefix, Adam& adam);

}  // namespace specmorl
