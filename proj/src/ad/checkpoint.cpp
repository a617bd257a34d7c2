#include "v2p/ad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace v2p::ad {
namespace {

constexpr char kMagic[8] = {'V', '2', 'P', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("checkpoint: " + msg);
}

void put_u32(std::vector<std::uint8_t>* out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::uint8_t>* out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out->push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<std::uint8_t>* out, double d) {
  put_u64(out, std::bit_cast<std::uint64_t>(d));
}

class Reader {
 public:
  Reader(std::vector<std::uint8_t> bytes, std::string origin)
      : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  void need(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      fail(origin_ + ": truncated while reading " + what + " at byte " +
           std::to_string(pos_));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes_[pos_++]) << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  const std::uint8_t* raw(std::size_t n, const char* what) {
    need(n, what);
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  const std::string& origin() const { return origin_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const ParamStore& store,
                     const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u32(&out, kVersion);
  put_u64(&out, store.entries().size());
  for (const auto& [name, e] : store.entries()) {
    put_u32(&out, std::uint32_t(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(&out, std::uint32_t(e.rows));
    put_u32(&out, std::uint32_t(e.cols));
    for (double v : e.value) put_f64(&out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
  if (!f) fail("short write to " + path.string());
}

ParamStore load_checkpoint(const std::filesystem::path& path,
                           std::uint64_t seed) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("cannot open " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(f),
                                  std::istreambuf_iterator<char>()};
  Reader r(std::move(bytes), path.string());
  const std::uint8_t* magic = r.raw(8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0) {
    fail(path.string() + ": not a checkpoint file (bad magic)");
  }
  std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    fail(path.string() + ": unsupported version " + std::to_string(version));
  }
  std::uint64_t count = r.u64("entry count");
  ParamStore store(seed);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::uint32_t name_len = r.u32("name length");
    std::string name = r.str(name_len, "name");
    if (name.empty()) fail(path.string() + ": empty parameter name");
    std::uint32_t rows = r.u32("rows");
    std::uint32_t cols = r.u32("cols");
    if (rows == 0 || cols == 0 || std::uint64_t(rows) * cols > (1ull << 32)) {
      fail(path.string() + ": implausible shape for '" + name + "'");
    }
    if (store.has(name)) fail(path.string() + ": duplicate entry '" + name + "'");
    ParamStore::Entry& e = store.ensure(name, int(rows), int(cols), true);
    for (double& v : e.value) v = r.f64("values");
  }
  if (!r.at_end()) fail(path.string() + ": trailing bytes after last entry");
  return store;
}

}  // namespace v2p::ad
