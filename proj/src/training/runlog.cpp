// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/training/runlog.hpp"

#include <algorithm>
#include <cstdio>

#include "diffseg/core/errors.hpp"

namespace diffseg::training {

RunLog::RunLog(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  file_.open(path, std::ios::out | std::ios::trunc);
  if (!file_) {
    throw DataError("cannot open run log " + path.string());
  }
}

void RunLog::write_line(const std::string& line) {
  if (file_.is_open()) {
    file_ << line << '\n';
    file_.flush();
  }
}

void RunLog::note(const std::string& key, const std::string& value) {
  notes_.emplace_back(key, value);
  write_line("# " + key + "\t" + value);
}

void RunLog::record(const LogRecord& r) {
  if (!records_.empty() && r.iter <= records_.back().iter) {
    throw ConfigError("run log iterations must increase");
  }
  records_.push_back(r);
  write_line(format_record(r));
}

std::vector<double> RunLog::losses() const {
  std::vector<double> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.loss);
  return out;
}

double RunLog::tail_mean(std::size_t n) const {
  if (records_.empty()) return 0.0;
  const auto k = std::min(n, records_.size());
  double s = 0.0;
  for (auto it = records_.end() - static_cast<std::ptrdiff_t>(k); it != records_.end(); ++it) {
    s += it->loss;
  }
  return s / static_cast<double>(k);
}

std::string format_record(const LogRecord& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%lld\t%.9g\t%.9g\t%.1f", static_cast<long long>(r.iter), r.loss,
                r.lr, r.wall_ms);
  return buf;
}

}  // namespace diffseg::training
