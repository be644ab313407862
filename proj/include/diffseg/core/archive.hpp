// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "diffseg/core/nn.hpp"
#include "diffseg/core/tensor.hpp"

namespace diffseg {

using Metadata = std::map<std::string, std::string>;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// In-memory form of an "NTA1" file: metadata strings plus named 32-bit
// tensors. Layout (little-endian, no padding):
//   "NTA1" | u32 meta count | {u32 len, key, u32 len, value}*
//   | u32 tensor count | {u32 len, name, u8 ndim, u32 dims[ndim], f32 data}*
struct TensorArchive {
  Metadata meta;
  std::vector<NamedTensor> tensors;

  const Tensor* find(std::string_view name) const;
  const std::string& meta_at(const std::string& key) const;  // ConfigError if absent
};

std::string encode_archive(const TensorArchive& archive);
TensorArchive decode_archive(std::string_view bytes);

void save_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive load_archive(const std::filesystem::path& path);

// Convenience wrappers over ParameterSet.
void save_weights(const ParameterSet& params, const Metadata& meta,
                  const std::filesystem::path& path);
TensorArchive load_weights(const std::filesystem::path& path);
TensorArchive to_archive(const ParameterSet& params, const Metadata& meta);

// Atomic write through a temporary sibling file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace diffseg
