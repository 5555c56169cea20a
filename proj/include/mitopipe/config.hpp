// Copyright 2026 The mitopipe Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/// @file config.hpp
/// @brief Stain profile JSON and the key-value config file format.
///
/// Config files are a TOML subset: `[section]` headers, `key = value` lines,
/// `#` comments. Values are double-quoted strings, numbers, true/false, or a
/// single-line array of strings. Keys are addressed as "section.key"; keys
/// before the first header have no prefix.

#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mitopipe/core.hpp"
#include "mitopipe/stain.hpp"

namespace mitopipe::config {

// ---------------------------------------------------------------------------
// Stain profile
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const stain::SnmfConfig& c) {
  return {{"lambda", c.lambda},       {"outer_iters", c.outer_iters}, {"tol", c.tol},
          {"max_pixels", c.max_pixels}, {"beta", c.beta},             {"seed", c.seed},
          {"code_lambda", c.code_lambda}};
}

inline nlohmann::json to_json(const stain::StainProfile& p) {
  nlohmann::json m = nlohmann::json::array();
  for (const auto& col : p.matrix.columns) m.push_back({col[0], col[1], col[2]});
  return {{"matrix", m}, {"p99", {p.p99[0], p.p99[1]}}, {"config", to_json(p.config)}};
}

inline stain::StainProfile profile_from_json(const nlohmann::json& j, const std::string& source = "profile") {
  stain::StainProfile p;
  try {
    const auto& m = j.at("matrix");
    if (!m.is_array() || m.size() != 2) throw Error(ErrorKind::invalid_input, "matrix must hold 2 columns");
    for (std::size_t s = 0; s < 2; ++s) {
      if (!m[s].is_array() || m[s].size() != 3) throw Error(ErrorKind::invalid_input, "matrix column needs 3 values");
      for (std::size_t c = 0; c < 3; ++c) p.matrix.columns[s][c] = m[s][c].get<double>();
      double n = 0.0;
      for (double v : p.matrix.columns[s]) {
        if (!(v >= 0.0)) throw Error(ErrorKind::invalid_input, "stain matrix entries must be >= 0");
        n += v * v;
      }
      if (std::abs(std::sqrt(n) - 1.0) > 1e-6) throw Error(ErrorKind::invalid_input, "stain columns must be unit norm");
    }
    const auto& q = j.at("p99");
    if (!q.is_array() || q.size() != 2) throw Error(ErrorKind::invalid_input, "p99 must hold 2 values");
    for (std::size_t s = 0; s < 2; ++s) {
      p.p99[s] = q[s].get<double>();
      if (!(p.p99[s] > 0.0)) throw Error(ErrorKind::invalid_input, "p99 entries must be > 0");
    }
    if (j.contains("config")) {
      const auto& c = j.at("config");
      p.config.lambda = c.value("lambda", p.config.lambda);
      p.config.outer_iters = c.value("outer_iters", p.config.outer_iters);
      p.config.tol = c.value("tol", p.config.tol);
      p.config.max_pixels = c.value("max_pixels", p.config.max_pixels);
      p.config.beta = c.value("beta", p.config.beta);
      p.config.seed = c.value("seed", p.config.seed);
      p.config.code_lambda = c.value("code_lambda", p.config.code_lambda);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_input, source + ": " + e.what());
  } catch (const Error& e) {
    throw Error(e.kind(), source + ": " + e.what());
  }
  return p;
}

inline void save_profile(const std::string& path, const stain::StainProfile& p) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot create " + path);
  out << to_json(p).dump(2) << '\n';
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
}

inline stain::StainProfile load_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_input, path + ": " + e.what());
  }
  return profile_from_json(j, path);
}

// ---------------------------------------------------------------------------
// Key-value files
// ---------------------------------------------------------------------------

using Value = std::variant<std::string, double, bool, std::vector<std::string>>;

struct Entry {
  Value value;
  int line = 0;
};

/// Parsed file; lookups record which keys were consumed so leftovers can be
/// reported as unknown.
class KeyValueFile {
 public:
  static KeyValueFile parse(std::istream& in, const std::string& source) {
    KeyValueFile f;
    f.source_ = source;
    std::string section, raw;
    for (int n = 1; std::getline(in, raw); ++n) {
      const std::string line = trim(strip_comment(raw));
      if (line.empty()) continue;
      const std::string where = source + ":" + std::to_string(n);
      if (line.front() == '[') {
        if (line.back() != ']' || line.size() < 3) throw Error(ErrorKind::invalid_config, where + ": bad section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error(ErrorKind::invalid_config, where + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw Error(ErrorKind::invalid_config, where + ": empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (f.entries_.count(full)) throw Error(ErrorKind::invalid_config, where + ": duplicate key '" + full + "'");
      f.entries_[full] = Entry{parse_value(trim(line.substr(eq + 1)), where), n};
    }
    return f;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open config " + path);
    return parse(in, path);
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    return get<std::string>(key, fallback, "a string");
  }
  double get_number(const std::string& key, double fallback) { return get<double>(key, fallback, "a number"); }
  bool get_bool(const std::string& key, bool fallback) { return get<bool>(key, fallback, "true or false"); }
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) {
    return get<std::vector<std::string>>(key, fallback, "an array of strings");
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) {
    const double v = get_number(key, static_cast<double>(fallback));
    if (v != std::floor(v)) throw Error(ErrorKind::invalid_config, where(key) + ": '" + key + "' must be an integer");
    return static_cast<std::int64_t>(v);
  }

  /// Throws on the first key that no lookup consumed.
  void reject_unknown() const {
    for (const auto& [key, entry] : entries_) {
      if (!used_.count(key)) {
        throw Error(ErrorKind::invalid_config,
                    source_ + ":" + std::to_string(entry.line) + ": unknown key '" + key + "'");
      }
    }
  }

 private:
  template <typename T>
  T get(const std::string& key, const T& fallback, const char* what) {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    used_[key] = true;
    if (const T* v = std::get_if<T>(&it->second.value)) return *v;
    throw Error(ErrorKind::invalid_config, where(key) + ": '" + key + "' must be " + what);
  }

  std::string where(const std::string& key) const {
    const auto it = entries_.find(key);
    return source_ + (it == entries_.end() ? "" : ":" + std::to_string(it->second.line));
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }

  // A '#' inside a quoted string is not a comment.
  static std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) quoted = !quoted;
      if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
  }

  static std::string parse_string(const std::string& s, const std::string& where) {
    if (s.size() < 2 || s.front() != '"' || s.back() != '"') {
      throw Error(ErrorKind::invalid_config, where + ": expected a quoted string, got " + s);
    }
    std::string out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
      if (s[i] == '\\' && i + 2 < s.size()) {
        const char c = s[++i];
        out += c == 'n' ? '\n' : c == 't' ? '\t' : c;
      } else {
        out += s[i];
      }
    }
    return out;
  }

  static Value parse_value(const std::string& s, const std::string& where) {
    if (s.empty()) throw Error(ErrorKind::invalid_config, where + ": missing value");
    if (s == "true") return true;
    if (s == "false") return false;
    if (s.front() == '"') return parse_string(s, where);
    if (s.front() == '[') {
      if (s.back() != ']') throw Error(ErrorKind::invalid_config, where + ": unterminated array");
      std::vector<std::string> items;
      const std::string body = trim(s.substr(1, s.size() - 2));
      std::size_t i = 0;
      while (i < body.size()) {
        if (body[i] == ' ' || body[i] == '\t' || body[i] == ',') {
          ++i;
          continue;
        }
        if (body[i] != '"') throw Error(ErrorKind::invalid_config, where + ": arrays hold quoted strings only");
        std::size_t j = i + 1;
        while (j < body.size() && (body[j] != '"' || body[j - 1] == '\\')) ++j;
        if (j >= body.size()) throw Error(ErrorKind::invalid_config, where + ": unterminated string in array");
        items.push_back(parse_string(body.substr(i, j - i + 1), where));
        i = j + 1;
      }
      return items;
    }
    std::string num;
    for (char c : s)
      if (c != '_') num += c;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
    if (ec != std::errc() || ptr != num.data() + num.size()) {
      throw Error(ErrorKind::invalid_config, where + ": cannot parse value '" + s + "'");
    }
    return v;
  }

  std::string source_;
  std::map<std::string, Entry> entries_;
  std::map<std::string, bool> used_;
};

}  // namespace mitopipe::config
