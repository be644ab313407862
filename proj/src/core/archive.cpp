// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/core/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "diffseg/core/errors.hpp"

namespace diffseg {

namespace {

constexpr std::string_view kMagic = "NTA1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

void put_str(std::string& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(FormatError::Kind::truncated,
                        std::string("archive truncated while reading ") + what);
    }
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    }
    return v;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(take(1, what)[0]); }
  std::string str(const char* what) {
    const auto n = u32(what);
    return std::string(take(n, what));
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* TensorArchive::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) {
      return &t.tensor;
    }
  }
  return nullptr;
}

const std::string& TensorArchive::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) {
    throw ConfigError("archive metadata lacks key '" + key + "'");
  }
  return it->second;
}

std::string encode_archive(const TensorArchive& archive) {
  std::set<std::string_view> seen;
  for (const auto& t : archive.tensors) {
    if (!seen.insert(t.name).second) {
      throw FormatError(FormatError::Kind::duplicate_name, "duplicate tensor name: " + t.name);
    }
    if (t.tensor.ndim() > 255) {
      throw FormatError(FormatError::Kind::invalid_field, "too many dims in " + t.name);
    }
  }
  std::string out;
  out.append(kMagic);
  put_u32(out, static_cast<std::uint32_t>(archive.meta.size()));
  for (const auto& [k, v] : archive.meta) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& t : archive.tensors) {
    put_str(out, t.name);
    out.push_back(static_cast<char>(t.tensor.ndim()));
    for (auto d : t.tensor.shape()) {
      put_u32(out, static_cast<std::uint32_t>(d));
    }
    const Tensor f = t.tensor.dtype() == DType::f32 ? t.tensor : t.tensor.to(DType::f32);
    for (float v : f.data<float>()) {
      put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
  }
  return out;
}

TensorArchive decode_archive(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
    throw FormatError(FormatError::Kind::bad_magic, "not an NTA1 archive (bad magic)");
  }
  Reader r(bytes.substr(kMagic.size()));
  TensorArchive a;
  const auto meta_count = r.u32("metadata count");
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::string k = r.str("metadata key");
    std::string v = r.str("metadata value");
    if (!a.meta.emplace(std::move(k), std::move(v)).second) {
      throw FormatError(FormatError::Kind::duplicate_name, "duplicate metadata key");
    }
  }
  const auto tensor_count = r.u32("tensor count");
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    std::string name = r.str("tensor name");
    if (!seen.insert(name).second) {
      throw FormatError(FormatError::Kind::duplicate_name, "duplicate tensor name: " + name);
    }
    const auto ndim = r.u8("tensor rank");
    Shape shape;
    for (int d = 0; d < ndim; ++d) {
      shape.push_back(r.u32("tensor dims"));
    }
    const auto n = static_cast<std::size_t>(numel(shape));
    auto raw = r.take(n * 4, "tensor data");
    std::vector<float> values(n);
    for (std::size_t j = 0; j < n; ++j) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) {
        u |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[j * 4 + b])) << (8 * b);
      }
      values[j] = std::bit_cast<float>(u);
    }
    a.tensors.push_back({std::move(name), Tensor::from_vector(shape, std::move(values))});
  }
  if (!r.done()) {
    throw FormatError(FormatError::Kind::invalid_field, "trailing bytes after archive");
  }
  return a;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw FormatError(FormatError::Kind::io, "cannot write " + tmp.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw FormatError(FormatError::Kind::io, "write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  write_file_atomic(path, encode_archive(archive));
}

TensorArchive load_archive(const std::filesystem::path& path) {
  return decode_archive(read_file(path));
}

TensorArchive to_archive(const ParameterSet& params, const Metadata& meta) {
  TensorArchive a;
  a.meta = meta;
  for (const auto& p : params.items()) {
    a.tensors.push_back({p.name, p.tensor});
  }
  return a;
}

void save_weights(const ParameterSet& params, const Metadata& meta,
                  const std::filesystem::path& path) {
  save_archive(to_archive(params, meta), path);
}

TensorArchive load_weights(const std::filesystem::path& path) { return load_archive(path); }

}  // namespace diffseg
