// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "revvolnet/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace revvolnet {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::int64_t parse_int(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  std::int64_t value = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw std::invalid_argument(what + ": expected an integer, got '" + text + "'");
  }
  return value;
}

double parse_double(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used == t.size()) return v;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument(what + ": expected a number, got '" + text + "'");
}

std::vector<std::int64_t> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<std::int64_t> out;
  if (trim(text).empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(item, what));
  return out;
}

std::string join_ints(const std::vector<std::int64_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

KeyValues KeyValues::parse(std::istream& in, const std::string& source) {
  KeyValues kv;
  kv.source_ = source;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(source + ":" + std::to_string(number) +
                                  ": expected key=value, got '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) {
      throw std::invalid_argument(source + ":" + std::to_string(number) + ": empty key");
    }
    if (!kv.values_.emplace(key, trim(t.substr(eq + 1))).second) {
      throw std::invalid_argument(source + ":" + std::to_string(number) + ": duplicate key '" +
                                  key + "'");
    }
  }
  return kv;
}

KeyValues KeyValues::parse(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

KeyValues KeyValues::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return parse(in, path);
}

const std::string& KeyValues::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument(source_ + ": missing key '" + key + "'");
  return it->second;
}

std::int64_t KeyValues::get_int(const std::string& key) const { return parse_int(get(key), key); }

double KeyValues::get_double(const std::string& key) const {
  return parse_double(get(key), key);
}

bool KeyValues::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::int64_t> KeyValues::get_int_list(const std::string& key) const {
  return parse_int_list(get(key), key);
}

void KeyValues::reject_unknown(const std::vector<std::string>& known) const {
  for (const auto& [key, value] : values_) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument(source_ + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace revvolnet
