// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace diffseg::training {

struct LogRecord {
  std::int64_t iter = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

// Append-only training log. Records go to "iter\tloss\tlr\twall_ms" lines;
// notes (config hash, seeds, group membership, evaluations) go to "# key\tvalue"
// lines. When a path is attached every line is flushed as it is appended.
class RunLog {
 public:
  RunLog() = default;
  explicit RunLog(const std::filesystem::path& path);

  void note(const std::string& key, const std::string& value);
  void record(const LogRecord& r);

  const std::vector<LogRecord>& records() const { return records_; }
  const std::vector<std::pair<std::string, std::string>>& notes() const { return notes_; }
  std::vector<double> losses() const;
  // Mean loss of the last n records (all when fewer).
  double tail_mean(std::size_t n) const;

 private:
  void write_line(const std::string& line);

  std::vector<LogRecord> records_;
  std::vector<std::pair<std::string, std::string>> notes_;
  std::ofstream file_;
};

std::string format_record(const LogRecord& r);

}  // namespace diffseg::training
