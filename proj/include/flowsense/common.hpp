/* Copyright 2026 The Flowsense Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef FLOWSENSE_COMMON_HPP_
#define FLOWSENSE_COMMON_HPP_

#include <cstdint>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace flowsense {

inline constexpr const char* kVersion = "0.1.0";

/// Bad or inconsistent input data. Mapped to exit code 2 by the CLI.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Misuse of the command line / config surface. Mapped to exit code 1.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-fatal diagnostics are routed through a sink so tests can capture them.
using WarningSink = std::function<void(const std::string&)>;

inline void warn_to_stderr(const std::string& msg) {
  std::cerr << "warning: " << msg << "\n";
}

inline WarningSink default_warning_sink() { return warn_to_stderr; }

/// Collects warnings into a vector; handy in tests.
struct WarningCollector {
  std::vector<std::string> messages;
  WarningSink sink() {
    return [this](const std::string& m) { messages.push_back(m); };
  }
  bool contains(std::string_view needle) const {
    for (const auto& m : messages)
      if (m.find(needle) != std::string::npos) return true;
    return false;
  }
};

/// Round-trip-exact double formatting, used for every numeric artifact so
/// reruns are byte-identical.
inline std::string dtos(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string to_lower(std::string s) {
  for (char& c : s)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return s;
}

/// FNV-1a, used for manifest/cache keys.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const uint8_t*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a(std::string_view s) { return fnv1a(s.data(), s.size()); }

inline std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace flowsense

#endif  // FLOWSENSE_COMMON_HPP_
