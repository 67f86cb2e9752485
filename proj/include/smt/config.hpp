// Copyright 2026  smt-lab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "smt/types.hpp"

namespace smt {

/// Flat `key = value` settings. Blank lines and lines starting with `#` are
/// ignored. Later assignments override earlier ones. Getters throw
/// Error("InvalidConfig") on malformed values; `unused()` lists keys never read
/// so callers can reject typos.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::optional<std::string> get_string(const std::string& key) const;
  std::optional<long long> get_int(const std::string& key) const;
  std::optional<std::uint64_t> get_uint(const std::string& key) const;
  std::optional<double> get_double(const std::string& key) const;
  std::optional<bool> get_bool(const std::string& key) const;
  /// Comma-separated integers.
  std::optional<std::vector<int>> get_int_list(const std::string& key) const;

  template <typename T>
  void read(const std::string& key, T& out) const;

  std::vector<std::string> unused() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> used_;
};

template <typename T>
void KeyValueConfig::read(const std::string& key, T& out) const {
  if constexpr (std::is_same_v<T, bool>) {
    if (auto v = get_bool(key)) out = *v;
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = get_string(key)) out = *v;
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    if (auto v = get_int_list(key)) out = *v;
  } else if constexpr (std::is_floating_point_v<T>) {
    if (auto v = get_double(key)) out = static_cast<T>(*v);
  } else if constexpr (std::is_unsigned_v<T>) {
    if (auto v = get_uint(key)) out = static_cast<T>(*v);
  } else {
    if (auto v = get_int(key)) out = static_cast<T>(*v);
  }
}

}  // namespace smt
