#include "mops/param_store.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mops::diff {

Tensor& ParamStore::create(const std::string& name, Tensor init) {
  if (entries_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
  Entry e;
  e.m = Tensor(init.shape());
  e.v = Tensor(init.shape());
  e.value = std::move(init);
  return entries_.emplace(name, std::move(e)).first->second.value;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
  return it->second.value;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("ParamStore: unknown parameter " + name);
  return it->second.value;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

int64_t ParamStore::total_params() const {
  int64_t n = 0;
  for (const auto& [k, e] : entries_) n += e.value.numel();
  return n;
}

void ParamStore::adam_step(const std::map<std::string, const Tensor*>& grads,
                           const AdamConfig& cfg) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
  for (const auto& [name, grad] : grads) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("adam_step: unknown parameter " + name);
    Entry& e = it->second;
    if (!e.value.same_shape(*grad)) throw std::invalid_argument("adam_step: grad shape mismatch");
    for (int64_t i = 0; i < e.value.numel(); ++i) {
      const double g = (*grad)[i];
      e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
      e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = e.m[i] / bc1;
      const double vhat = e.v[i] / bc2;
      e.value[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

namespace {

constexpr char kMagic[8] = {'M', 'O', 'P', 'S', 'C', 'K', 'P', '1'};

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void ParamStore::save(const std::string& path, const std::string& tag) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("ParamStore::save: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(out, 1);  // version
  write_pod<uint32_t>(out, static_cast<uint32_t>(tag.size()));
  out.write(tag.data(), tag.size());
  write_pod<uint64_t>(out, entries_.size());
  for (const auto& [name, e] : entries_) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), name.size());
    write_pod<uint32_t>(out, static_cast<uint32_t>(e.value.ndim()));
    for (int i = 0; i < e.value.ndim(); ++i) write_pod<int64_t>(out, e.value.dim(i));
    out.write(reinterpret_cast<const char*>(e.value.data()), e.value.numel() * sizeof(double));
  }
  if (!out) throw std::runtime_error("ParamStore::save: write failed for " + path);
}

ParamStore ParamStore::load(const std::string& path, std::string* tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("ParamStore::load: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("ParamStore::load: bad magic in " + path);
  }
  const uint32_t version = read_pod<uint32_t>(in);
  if (version != 1) throw std::runtime_error("ParamStore::load: unsupported version");
  const uint32_t tag_len = read_pod<uint32_t>(in);
  std::string tag_str(tag_len, '\0');
  in.read(tag_str.data(), tag_len);
  if (tag) *tag = tag_str;
  const uint64_t count = read_pod<uint64_t>(in);
  ParamStore store;
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t ndim = read_pod<uint32_t>(in);
    std::vector<int> shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(read_pod<int64_t>(in));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), t.numel() * sizeof(double));
    if (!in) throw std::runtime_error("ParamStore::load: truncated file " + path);
    store.create(name, std::move(t));
  }
  return store;
}

uint64_t ParamStore::content_hash() const {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, e] : entries_) {
    mix(name.data(), name.size());
    mix(e.value.data(), e.value.numel() * sizeof(double));
  }
  return h;
}

void polyak_update(ParamStore& target, const ParamStore& source, double rho) {
  for (const auto& name : target.names()) {
    Tensor& t = target.get(name);
    const Tensor& s = source.get(name);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rho * t[i] + (1.0 - rho) * s[i];
  }
}

void copy_params(ParamStore& target, const ParamStore& source) {
  for (const auto& name : target.names()) {
    Tensor& t = target.get(name);
    const Tensor& s = source.get(name);
    if (!t.same_shape(s)) throw std::invalid_argument("copy_params: shape mismatch at " + name);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = s[i];
  }
}

}  // namespace mops::diff
