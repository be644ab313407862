// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>

namespace diffseg::training {

using ConfigMap = std::map<std::string, std::string>;

// Sorted "key = value" lines; the hash of a run is sha256 of this text.
std::string canonical_text(const ConfigMap& config);
std::string config_hash(const ConfigMap& config);

std::string format_real(double v);

}  // namespace diffseg::training
