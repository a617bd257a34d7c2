#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace v2p::ad {

// Named parameter arrays plus AdamW moment state. Entries are created on
// first use; initialization depends only on (seed, name), never on creation
// order. std::map keeps iteration deterministic.
class ParamStore {
 public:
  struct Entry {
    int rows = 0, cols = 0;
    std::vector<double> value;
    std::vector<double> m, v;  // AdamW moments, zero-initialized
  };

  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  // Get-or-create. Weights draw Kaiming-style uniform from
  // [-sqrt(6/fan_in), sqrt(6/fan_in)] with fan_in = rows; bias entries are
  // zeros. Shape mismatch against an existing entry is an error.
  Entry& ensure(const std::string& name, int rows, int cols, bool bias_init);

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;

  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  std::size_t total_parameters() const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_ = 0;
  std::map<std::string, Entry> entries_;
};

}  // namespace v2p::ad
