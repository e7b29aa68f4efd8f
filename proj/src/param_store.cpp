#include "cine/param_store.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "cine/hash.hpp"

namespace cine::nn {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'N', 'E', 'P', 'R', 'M', '\0'};

template <typename T>
void put(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end, std::string path) : bytes_(bytes), end_(end), path_(std::move(path)) {}
  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw std::runtime_error(path_ + ": truncated parameter file");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = sizeof(kMagic);
  std::string path_;
};

}  // namespace

ParameterStore snapshot(const Module& module) {
  ParameterStore store;
  for (const auto& [name, p] : module.parameters()) store.tensors.emplace_back(name, p.value());
  return store;
}

void restore(Module& module, const ParameterStore& store) {
  if (store.version != kParameterFormatVersion)
    throw std::runtime_error("parameter store version " + std::to_string(store.version) + " is not supported");
  auto params = module.parameters();
  for (std::size_t i = 0; i < std::max(params.size(), store.tensors.size()); ++i) {
    if (i >= params.size()) throw std::runtime_error("parameter mismatch: unexpected tensor '" + store.tensors[i].first + "'");
    if (i >= store.tensors.size()) throw std::runtime_error("parameter mismatch: missing tensor '" + params[i].first + "'");
    const auto& [name, value] = store.tensors[i];
    if (name != params[i].first)
      throw std::runtime_error("parameter mismatch at '" + params[i].first + "': store holds '" + name + "'");
    if (value.shape() != params[i].second.shape())
      throw std::runtime_error("parameter mismatch at '" + name + "': shape " + shape_string(value.shape()) + " vs model " +
                               shape_string(params[i].second.shape()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].second.mutable_value() = store.tensors[i].second;
}

void save_params(const std::filesystem::path& path, const ParameterStore& store) {
  std::string buf(kMagic, sizeof(kMagic));
  put<std::uint32_t>(buf, store.version);
  put<std::uint64_t>(buf, store.tensors.size());
  for (const auto& [name, t] : store.tensors) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.ndim()));
    for (int d : t.shape()) put<std::int32_t>(buf, d);
    buf.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(Real));
  }
  put<std::uint64_t>(buf, fnv1a(buf));
  std::ofstream os(path, std::ios::binary);
  if (!os || !os.write(buf.data(), static_cast<std::streamsize>(buf.size()))) throw std::runtime_error("cannot write " + path.string());
}

ParameterStore load_params(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + 4 + 8 + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error(path.string() + ": not a parameter file");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  Reader r(bytes, body, path.string());
  ParameterStore store;
  store.version = r.get<std::uint32_t>();
  if (store.version != kParameterFormatVersion)
    throw std::runtime_error(path.string() + ": parameter format version " + std::to_string(store.version) + ", expected " +
                             std::to_string(kParameterFormatVersion));
  if (stored != fnv1a(std::string_view(bytes.data(), body))) throw std::runtime_error(path.string() + ": checksum mismatch (corrupt file)");
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    std::string name = r.str(len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw std::runtime_error(path.string() + ": bad rank for '" + name + "'");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.get<std::int32_t>());
    Tensor t(shape);
    r.raw(t.data(), static_cast<std::size_t>(t.size()) * sizeof(Real));
    store.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw std::runtime_error(path.string() + ": trailing bytes");
  return store;
}

}  // namespace cine::nn
