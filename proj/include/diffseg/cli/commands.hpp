// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "diffseg/cli/imaging.hpp"
#include "diffseg/core/archive.hpp"
#include "diffseg/core/rng.hpp"

namespace diffseg::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  exit_ok = 0,
  exit_failure = 1,
  exit_config = 2,
  exit_data = 3,
  exit_numeric = 4,
};

struct FileRecord {
  std::string path;  // relative to the run's output directory for outputs
  std::string sha256;
  bool varies = false;  // contents include wall-clock readings
};

struct RunManifest {
  std::vector<std::string> command;
  std::string config_hash;
  std::vector<FileRecord> inputs;
  std::vector<FileRecord> outputs;
  std::map<std::string, std::uint64_t> seeds;
  std::string started;  // UTC, ISO 8601
  std::string finished;
  std::map<std::string, std::string> versions;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};

inline constexpr const char* kManifestName = "run_manifest.json";

// Lists every regular file under `dir` (except the manifest itself) with its
// checksum, sorted by relative path.
std::vector<FileRecord> scan_outputs(const std::filesystem::path& dir);

// Runs one subcommand; args excludes the program name. Never throws.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// "A:B:STRIDE", inclusive of B when reached.
std::vector<int> parse_steps(const std::string& text);

// Draws `count` images from a pre-training checkpoint, writes one graymap per
// image and window plus one contact sheet per window, and returns the
// samples in normalized units ([count, 1, H, W]).
Tensor sample_grid(const TensorArchive& checkpoint, int count, RngStream& rng,
                   const std::vector<Window>& windows, int columns,
                   const std::filesystem::path& out_dir);

}  // namespace diffseg::cli
