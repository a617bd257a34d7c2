#include "v2p/ad/params.hpp"

#include <cmath>
#include <stdexcept>

#include "v2p/rng.hpp"

namespace v2p::ad {
namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

ParamStore::Entry& ParamStore::ensure(const std::string& name, int rows,
                                      int cols, bool bias_init) {
  if (rows <= 0 || cols <= 0) {
    throw std::runtime_error("param '" + name + "': non-positive shape");
  }
  auto it = entries_.find(name);
  if (it != entries_.end()) {
    if (it->second.rows != rows || it->second.cols != cols) {
      throw std::runtime_error(
          "param '" + name + "': shape " + std::to_string(rows) + "x" +
          std::to_string(cols) + " conflicts with existing " +
          std::to_string(it->second.rows) + "x" +
          std::to_string(it->second.cols));
    }
    return it->second;
  }
  Entry e;
  e.rows = rows;
  e.cols = cols;
  std::size_t n = std::size_t(rows) * std::size_t(cols);
  if (bias_init) {
    e.value.assign(n, 0.0);
  } else {
    // Initialization depends on (store seed, name) only, so parameter
    // creation order cannot change the network.
    Rng rng(seed_ ^ fnv1a(name));
    double limit = std::sqrt(6.0 / double(rows));
    e.value.resize(n);
    for (double& v : e.value) v = rng.uniform(-limit, limit);
  }
  e.m.assign(n, 0.0);
  e.v.assign(n, 0.0);
  return entries_.emplace(name, std::move(e)).first->second;
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw std::runtime_error("param '" + name + "' does not exist");
  }
  return it->second;
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw std::runtime_error("param '" + name + "' does not exist");
  }
  return it->second;
}

std::size_t ParamStore::total_parameters() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.size();
  return n;
}

}  // namespace v2p::ad
