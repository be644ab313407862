// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "diffseg/data/phantom.hpp"
#include "diffseg/training/finetune.hpp"
#include "diffseg/training/pretrain.hpp"

namespace diffseg::cli {

enum class ValueKind { integer, unsigned_integer, real, boolean, text, int_list, real_list, choice };

struct KeySpec {
  std::string key;  // "section.name"
  ValueKind kind;
  std::string fallback;
  std::vector<std::string> choices;  // for ValueKind::choice
};

// Every key the CLI accepts, sorted by name.
const std::vector<KeySpec>& config_schema();

// Sectioned key-value document. Values are stored in normalized form, so the
// canonical text of two equivalent documents is identical.
class ExperimentConfig {
 public:
  ExperimentConfig();  // every key at its default

  // INI text. Comments start with ';' or '#'. Unknown sections or keys and
  // malformed values raise ConfigError naming the token.
  static ExperimentConfig parse(std::string_view text, const std::string& origin = "<config>");
  static ExperimentConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  // "section.key=value"
  void apply_override(const std::string& assignment);

  const std::string& raw(const std::string& key) const;
  bool is_default(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::uint64_t unsigned_integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<int> int_list(const std::string& key) const;
  std::vector<double> real_list(const std::string& key) const;

  // "[section]" blocks with "key = value" lines, both sorted.
  std::string canonical_text() const;
  std::string hash() const;

  training::PretrainConfig pretrain() const;
  training::FinetuneConfig finetune() const;
  unet::UNetConfig model() const;
  data::PhantomSpec phantom() const;

 private:
  std::map<std::string, std::string> values_;
};

// Shortest text that parses back to the same double.
std::string format_shortest(double v);

}  // namespace diffseg::cli
