#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cine/layers.hpp"

namespace cine::nn {

inline constexpr std::uint32_t kParameterFormatVersion = 1;

/// Named parameter tensors in registration order.
struct ParameterStore {
  std::uint32_t version = kParameterFormatVersion;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

ParameterStore snapshot(const Module& module);

/// Copies tensors into the module's parameters. Throws naming the first
/// tensor whose name or shape disagrees.
void restore(Module& module, const ParameterStore& store);

/// Layout: "CINEPRM\0", u32 version, u64 count, then per tensor u32 name
/// length, name, u32 rank, i32 dims, f64 values; trailer u64 FNV-1a of all
/// preceding bytes. Little-endian.
void save_params(const std::filesystem::path& path, const ParameterStore& store);
ParameterStore load_params(const std::filesystem::path& path);

}  // namespace cine::nn
