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

#ifndef DPGUARD_RECORD_IO_H_
#define DPGUARD_RECORD_IO_H_

// Line formats for batch defense.
//
// JSONL input:  {"record_id": "...", "scores": [..]}   (record_id optional)
// JSONL output: {"record_id": "...", "scores": [..], "epsilon_used": e,
//                "budget_remaining": n | "unlimited"}
// CSV input:    header "record_id,s1,...,sk", then one row per record
// CSV output:   header "record_id,s1,...,sk,epsilon_used,budget_remaining"
//
// Every double is written with 17 significant digits.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "dpguard/format.h"
#include "nlohmann/json.hpp"

namespace dpguard {

struct DefendRequest {
  std::optional<std::string> record_id;
  std::vector<double> scores;
  // Raw model input, forwarded to an upstream classifier when one is wired.
  std::optional<nlohmann::json> input;

  friend bool operator==(const DefendRequest&, const DefendRequest&) = default;
};

struct DefendResponse {
  std::optional<std::string> record_id;
  std::vector<double> scores;
  double epsilon_used = 0.0;
  // nullopt means no budget is enforced.
  std::optional<uint64_t> budget_remaining;
};

namespace internal {

inline std::string JoinDoubles(const std::vector<double>& values,
                               std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < values.size(); ++i) {
    if (i) out += sep;
    out += FormatDouble(values[i]);
  }
  return out;
}

inline std::string BudgetText(const std::optional<uint64_t>& remaining) {
  return remaining ? std::to_string(*remaining) : std::string("unlimited");
}

}  // namespace internal

// Parses the JSON object form shared by JSONL lines and HTTP bodies.
// `scores` may be omitted only when `input` is present.
inline absl::StatusOr<DefendRequest> RequestFromJson(const nlohmann::json& j) {
  if (!j.is_object()) {
    return absl::InvalidArgumentError("record must be a JSON object");
  }
  DefendRequest req;
  if (auto it = j.find("record_id"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) {
      return absl::InvalidArgumentError("record_id must be a string");
    }
    req.record_id = it->get<std::string>();
  }
  if (auto it = j.find("input"); it != j.end()) req.input = *it;
  auto it = j.find("scores");
  if (it == j.end()) {
    if (req.input) return req;
    return absl::InvalidArgumentError("record has no scores");
  }
  if (!it->is_array()) {
    return absl::InvalidArgumentError("scores must be an array");
  }
  for (const auto& v : *it) {
    if (!v.is_number()) {
      return absl::InvalidArgumentError("scores must be numbers");
    }
    req.scores.push_back(v.get<double>());
  }
  return req;
}

inline absl::StatusOr<DefendRequest> ParseJsonlRequest(std::string_view line) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr,
                                           /*allow_exceptions=*/false);
  if (j.is_discarded()) {
    return absl::InvalidArgumentError("record is not valid JSON");
  }
  return RequestFromJson(j);
}

inline std::string FormatJsonlRequest(const DefendRequest& req) {
  std::string out = "{";
  if (req.record_id) {
    out += "\"record_id\":" + nlohmann::json(*req.record_id).dump() + ",";
  }
  out += "\"scores\":[" + internal::JoinDoubles(req.scores, ",") + "]}";
  return out;
}

inline std::string FormatJsonlResponse(const DefendResponse& resp) {
  std::string out = "{";
  if (resp.record_id) {
    out += "\"record_id\":" + nlohmann::json(*resp.record_id).dump() + ",";
  }
  out += "\"scores\":[" + internal::JoinDoubles(resp.scores, ",") + "],";
  out += "\"epsilon_used\":" + FormatDouble(resp.epsilon_used) + ",";
  const std::string budget = internal::BudgetText(resp.budget_remaining);
  out += "\"budget_remaining\":" +
         (resp.budget_remaining ? budget : "\"" + budget + "\"") + "}";
  return out;
}

// `message` must never contain score values.
inline std::string FormatJsonlError(const std::optional<std::string>& record_id,
                                    std::string_view code, size_t line,
                                    std::string_view message) {
  nlohmann::json j;
  if (record_id) j["record_id"] = *record_id;
  j["error"] = code;
  j["line"] = line;
  j["message"] = message;
  return j.dump();
}

// Number of score columns declared by a CSV header "record_id,s1,...,sk".
inline absl::StatusOr<size_t> ParseCsvHeader(std::string_view line) {
  std::vector<std::string_view> fields = SplitFields(line, ',');
  if (fields.size() < 3 || fields.front() != "record_id") {
    return absl::InvalidArgumentError(
        "CSV header must be record_id,s1,...,sk with k >= 2");
  }
  return fields.size() - 1;
}

inline std::string FormatCsvRequestHeader(size_t k) {
  std::string out = "record_id";
  for (size_t i = 1; i <= k; ++i) out += ",s" + std::to_string(i);
  return out;
}

inline std::string FormatCsvResponseHeader(size_t k) {
  return FormatCsvRequestHeader(k) + ",epsilon_used,budget_remaining";
}

// Record ids cannot contain commas; an empty id means "none".
inline absl::StatusOr<DefendRequest> ParseCsvRequest(std::string_view line,
                                                     size_t k) {
  std::vector<std::string_view> fields = SplitFields(line, ',');
  if (fields.size() != k + 1) {
    return absl::InvalidArgumentError("CSV row has the wrong number of fields");
  }
  DefendRequest req;
  if (!fields[0].empty()) req.record_id = std::string(fields[0]);
  for (size_t i = 1; i < fields.size(); ++i) {
    std::optional<double> v = ParseDouble(fields[i]);
    if (!v) return absl::InvalidArgumentError("CSV score is not a number");
    req.scores.push_back(*v);
  }
  return req;
}

inline std::string FormatCsvRequest(const DefendRequest& req) {
  return req.record_id.value_or("") + "," +
         internal::JoinDoubles(req.scores, ",");
}

inline std::string FormatCsvResponse(const DefendResponse& resp) {
  return resp.record_id.value_or("") + "," +
         internal::JoinDoubles(resp.scores, ",") + "," +
         FormatDouble(resp.epsilon_used) + "," +
         internal::BudgetText(resp.budget_remaining);
}

inline std::string FormatCsvError(const std::optional<std::string>& record_id,
                                  std::string_view code) {
  return record_id.value_or("") + ",error," + std::string(code);
}

}  // namespace dpguard

#endif  // DPGUARD_RECORD_IO_H_
