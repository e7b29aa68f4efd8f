#include "cine/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>

#include <zlib.h>

namespace cine {

namespace {

constexpr int kHeaderSize = 348;

struct GzCloser {
  void operator()(gzFile f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

template <typename T>
T load(const unsigned char* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if (swap) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

template <typename T>
void store(unsigned char* p, T v) {
  std::memcpy(p, &v, sizeof(T));
}

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  GzHandle f(gzopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<unsigned char> bytes;
  unsigned char buf[1 << 16];
  for (;;) {
    const int n = gzread(f.get(), buf, sizeof(buf));
    if (n < 0) throw std::runtime_error("corrupt compressed stream in " + path.string());
    if (n == 0) break;
    bytes.insert(bytes.end(), buf, buf + n);
  }
  return bytes;
}

}  // namespace

NiftiVolume read_nifti(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  if (bytes.size() < kHeaderSize) throw std::runtime_error(path.string() + ": truncated NIfTI header");
  const unsigned char* h = bytes.data();
  bool swap = false;
  if (load<std::int32_t>(h, false) != kHeaderSize) {
    if (load<std::int32_t>(h, true) != kHeaderSize) throw std::runtime_error(path.string() + ": not a NIfTI-1 file");
    swap = true;
  }
  NiftiVolume vol;
  const int ndim = load<std::int16_t>(h + 40, swap);
  if (ndim < 1 || ndim > 7) throw std::runtime_error(path.string() + ": invalid dimension count");
  for (int i = 0; i < 4; ++i) {
    vol.dims[static_cast<std::size_t>(i)] = i < ndim ? std::max<int>(1, load<std::int16_t>(h + 42 + 2 * i, swap)) : 1;
    vol.spacing[static_cast<std::size_t>(i)] = i < ndim ? std::abs(load<float>(h + 80 + 4 * i, swap)) : 1.0;
  }
  for (int i = 4; i < ndim; ++i)
    if (load<std::int16_t>(h + 42 + 2 * i, swap) > 1) throw std::runtime_error(path.string() + ": more than 4 dimensions");
  const int datatype = load<std::int16_t>(h + 70, swap);
  const auto offset = static_cast<std::size_t>(std::max(352.0f, load<float>(h + 108, swap)));
  float slope = load<float>(h + 112, swap);
  const float inter = load<float>(h + 116, swap);
  if (slope == 0.0f || !std::isfinite(slope)) slope = 1.0f;

  std::size_t count = 1;
  for (int d : vol.dims) count *= static_cast<std::size_t>(d);
  std::size_t width = 0;
  switch (datatype) {
    case 2: case 256: width = 1; break;
    case 4: case 512: width = 2; break;
    case 8: case 16: case 768: width = 4; break;
    case 64: width = 8; break;
    default: throw std::runtime_error(path.string() + ": unsupported datatype " + std::to_string(datatype));
  }
  if (bytes.size() < offset + count * width) throw std::runtime_error(path.string() + ": truncated voxel data");

  vol.data.resize(count);
  const unsigned char* p = bytes.data() + offset;
  for (std::size_t i = 0; i < count; ++i, p += width) {
    double v = 0.0;
    switch (datatype) {
      case 2: v = *p; break;
      case 256: v = static_cast<std::int8_t>(*p); break;
      case 4: v = load<std::int16_t>(p, swap); break;
      case 512: v = load<std::uint16_t>(p, swap); break;
      case 8: v = load<std::int32_t>(p, swap); break;
      case 768: v = load<std::uint32_t>(p, swap); break;
      case 16: v = load<float>(p, swap); break;
      case 64: v = load<double>(p, swap); break;
    }
    vol.data[i] = v * slope + inter;
  }
  return vol;
}

void write_nifti(const std::filesystem::path& path, const NiftiVolume& volume) {
  std::vector<unsigned char> header(352, 0);
  unsigned char* h = header.data();
  store<std::int32_t>(h, kHeaderSize);
  int ndim = 4;
  while (ndim > 1 && volume.dims[static_cast<std::size_t>(ndim - 1)] == 1) --ndim;
  store<std::int16_t>(h + 40, static_cast<std::int16_t>(ndim));
  for (int i = 0; i < 7; ++i)
    store<std::int16_t>(h + 42 + 2 * i, static_cast<std::int16_t>(i < 4 ? volume.dims[static_cast<std::size_t>(i)] : 1));
  store<std::int16_t>(h + 70, 16);
  store<std::int16_t>(h + 72, 32);
  store<float>(h + 76, 1.0f);
  for (int i = 0; i < 4; ++i) store<float>(h + 80 + 4 * i, static_cast<float>(volume.spacing[static_cast<std::size_t>(i)]));
  store<float>(h + 108, 352.0f);
  store<float>(h + 112, 1.0f);
  std::memcpy(h + 344, "n+1\0", 4);

  const bool compress = path.extension() == ".gz";
  GzHandle f(gzopen(path.c_str(), compress ? "wb6" : "wbT"));
  if (!f) throw std::runtime_error("cannot write " + path.string());
  if (gzwrite(f.get(), header.data(), static_cast<unsigned>(header.size())) != static_cast<int>(header.size()))
    throw std::runtime_error("write failed: " + path.string());
  std::vector<float> buf(volume.data.begin(), volume.data.end());
  const auto nbytes = static_cast<unsigned>(buf.size() * sizeof(float));
  if (gzwrite(f.get(), buf.data(), nbytes) != static_cast<int>(nbytes)) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace cine
