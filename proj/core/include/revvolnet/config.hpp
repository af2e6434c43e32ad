// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Plain-text key=value files. Blank lines and lines starting with '#' are
// ignored; whitespace around keys and values is trimmed.

#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <string>
#include <vector>

namespace revvolnet {

class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& source = "<input>");
  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::int64_t> get_int_list(const std::string& key) const;

  /// Throws naming the first key not in `known`.
  void reject_unknown(const std::vector<std::string>& known) const;

 private:
  std::string source_;
  std::map<std::string, std::string> values_;
};

std::int64_t parse_int(const std::string& text, const std::string& what);
double parse_double(const std::string& text, const std::string& what);
std::vector<std::int64_t> parse_int_list(const std::string& text, const std::string& what);
std::string join_ints(const std::vector<std::int64_t>& values);

}  // namespace revvolnet
