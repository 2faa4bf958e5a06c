#include "specmorl/checkpoint.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>

namespace specmorl {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'M', 'R', 'L', 'C', 'K', '1'};

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) fail("truncated");
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ULL << 32)) fail("implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) fail("truncated");
    return s;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError("checkpoint " + path_ + ": " + what);
  }
  std::ifstream& stream() { return in_; }

 private:
  std::ifstream& in_;
  std::string path_;
};

}  // namespace

const NamedTensor& Checkpoint::tensor(const std::string& name) const {
  for (const NamedTensor& t : tensors)
    if (t.name == name) return t;
  throw CheckpointError("checkpoint has no tensor named " + name);
}

bool Checkpoint::has_tensor(const std::string& name) const {
  for (const NamedTensor& t : tensors)
    if (t.name == name) return true;
  return false;
}

std::int64_t Checkpoint::counter(const std::string& name) const {
  const auto it = counters.find(name);
  if (it == counters.end()) throw CheckpointError("checkpoint has no counter named " + name);
  return it->second;
}

const std::string& Checkpoint::text_entry(const std::string& name) const {
  const auto it = text.find(name);
  if (it == text.end()) throw CheckpointError("checkpoint has no text entry named " + name);
  return it->second;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp + " for writing");
    Writer w(out);
    out.write(kMagic, sizeof kMagic);
    w.pod<std::uint32_t>(Checkpoint::kVersion);
    w.pod<std::uint64_t>(ckpt.text.size());
    for (const auto& [k, v] : ckpt.text) {
      w.str(k);
      w.str(v);
    }
    w.pod<std::uint64_t>(ckpt.counters.size());
    for (const auto& [k, v] : ckpt.counters) {
      w.str(k);
      w.pod<std::int64_t>(v);
    }
    w.pod<std::uint64_t>(ckpt.tensors.size());
    for (const NamedTensor& t : ckpt.tensors) {
      std::int64_t expected = 1;
      for (auto d : t.shape) expected *= d;
      if (expected != static_cast<std::int64_t>(t.data.size()))
        throw CheckpointError("tensor " + t.name + " data does not match its shape");
      w.str(t.name);
      w.pod<std::uint64_t>(t.shape.size());
      for (auto d : t.shape) w.pod<std::int64_t>(d);
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!out) throw CheckpointError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  Reader r(in, path);
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("not a checkpoint file");
  const auto version = r.pod<std::uint32_t>();
  if (version != Checkpoint::kVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  const auto n_text = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_text; ++i) {
    std::string k = r.str();
    ckpt.text[k] = r.str();
  }
  const auto n_counters = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_counters; ++i) {
    std::string k = r.str();
    ckpt.counters[k] = r.pod<std::int64_t>();
  }
  const auto n_tensors = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    NamedTensor t;
    t.name = r.str();
    const auto rank = r.pod<std::uint64_t>();
    if (rank > 8) r.fail("implausible tensor rank");
    std::int64_t count = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      t.shape.push_back(r.pod<std::int64_t>());
      if (t.shape.back() < 0) r.fail("negative dimension");
      count *= t.shape.back();
    }
    if (count > (1LL << 31)) r.fail("implausible tensor size");
    t.data.resize(static_cast<std::size_t>(count));
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) r.fail("truncated tensor " + t.name);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

std::string file_sha256(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path + " for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::string hex;
  char two[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(two, sizeof two, "%02x", digest[i]);
    hex += two;
  }
  return hex;
}

void put_network(Checkpoint& ckpt, const std::string& prefix, const QNetwork& net) {
  const auto params = net.parameters();
  for (const TensorInfo& t : net.tensors()) {
    NamedTensor nt;
    nt.name = prefix + t.name;
    nt.shape.assign(t.shape.begin(), t.shape.end());
    nt.data.assign(params.begin() + static_cast<std::ptrdiff_t>(t.offset),
                   params.begin() + static_cast<std::ptrdiff_t>(t.offset + t.size));
    ckpt.tensors.push_back(std::move(nt));
  }
}

void get_network(const Checkpoint& ckpt, const std::string& prefix, QNetwork& net) {
  auto params = net.parameters();
  for (const TensorInfo& t : net.tensors()) {
    const NamedTensor& nt = ckpt.tensor(prefix + t.name);
    if (!std::equal(nt.shape.begin(), nt.shape.end(), t.shape.begin(), t.shape.end()))
      throw CheckpointError("tensor " + nt.name + " has a different shape than the network");
    std::copy(nt.data.begin(), nt.data.end(), params.begin() + static_cast<std::ptrdiff_t>(t.offset));
  }
}

void put_adam(Checkpoint& ckpt, const std::string& prefix, const Adam& adam) {
  const auto m = adam.first_moment();
  const auto v = adam.second_moment();
  ckpt.tensors.push_back({prefix + "m", {static_cast<std::int64_t>(m.size())}, {m.begin(), m.end()}});
  ckpt.tensors.push_back({prefix + "v", {static_cast<std::int64_t>(v.size())}, {v.begin(), v.end()}});
  ckpt.counters[prefix + "steps"] = adam.steps();
}

void get_adam(const Checkpoint& ckpt, const std::string& prefix, Adam& adam) {
  const NamedTensor& m = ckpt.tensor(prefix + "m");
  const NamedTensor& v = ckpt.tensor(prefix + "v");
  if (m.data.size() != adam.first_moment().size() || v.data.size() != adam.second_moment().size())
    throw CheckpointError("optimizer moments do not match the network size");
  adam.restore(ckpt.counter(prefix + "steps"), m.data, v.data);
}

}  // namespace specmorl
