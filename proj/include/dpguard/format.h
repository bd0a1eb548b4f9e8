// Copyright 2026 The dpguard Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPGUARD_FORMAT_H_
#define DPGUARD_FORMAT_H_

#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "absl/strings/str_format.h"

namespace dpguard {

// Decimal form used everywhere a double is written. 17 significant digits
// round-trip every finite double.
inline std::string FormatDouble(double v) {
  return absl::StrFormat("%.17g", v);
}

// Splits on every occurrence of `sep`; empty fields are kept.
inline std::vector<std::string_view> SplitFields(std::string_view text,
                                                 char sep) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(text.substr(start));
      return out;
    }
    out.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

// Whole-string decimal parse; rejects empty input, trailing characters and
// out-of-range values.
inline std::optional<double> ParseDouble(std::string_view text) {
  const std::string buffer(text);
  if (buffer.empty()) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(buffer.c_str(), &end);
  if (end != buffer.c_str() + buffer.size() || errno == ERANGE) {
    return std::nullopt;
  }
  return v;
}

template <typename Int>
std::optional<Int> ParseInteger(std::string_view text) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    return std::nullopt;
  }
  return v;
}

}  // namespace dpguard

#endif  // DPGUARD_FORMAT_H_
