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

#ifndef DPGUARD_ACCOUNTANT_H_
#define DPGUARD_ACCOUNTANT_H_

// Repeated-query accounting.
//
// Each answer for a record costs k * eps. With the KL bound
// D <= x (e^x - 1) applied per answer and to the overall target eps', a record
// may be answered at most
//
//   b = floor( eps' (e^eps' - 1) / (k eps (e^{k eps} - 1)) )
//
// times. BudgetLedger counts answers per record fingerprint and refuses once
// the count reaches b. Grants are persisted before they are returned.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <openssl/sha.h>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_format.h"
#include "dpguard/format.h"
#include "dpguard/status_macros.h"
#include "nlohmann/json.hpp"

namespace dpguard {

struct BudgetParams {
  // Budget of one selection; one answer costs num_classes times this.
  double per_access_epsilon = 0.1;
  int num_classes = 10;
  // Overall target for any single record.
  double overall_epsilon = 1.0;

  absl::Status Validate() const {
    if (!(per_access_epsilon > 0.0) || !std::isfinite(per_access_epsilon)) {
      return absl::InvalidArgumentError("per_access_epsilon must be positive");
    }
    if (num_classes < 1) {
      return absl::InvalidArgumentError("num_classes must be positive");
    }
    if (!(overall_epsilon > 0.0) || !std::isfinite(overall_epsilon)) {
      return absl::InvalidArgumentError("overall_epsilon must be positive");
    }
    return absl::OkStatus();
  }

  // True when the bound is below 1 and every query will be denied.
  bool DeniesEverything() const {
    return overall_epsilon < num_classes * per_access_epsilon;
  }
};

namespace internal {

// ln(x (e^x - 1)) for x > 0, finite for any finite x.
inline double LogDivergenceCap(double x) {
  const double log_expm1 =
      x > 30.0 ? x + std::log1p(-std::exp(-x)) : std::log(std::expm1(x));
  return std::log(x) + log_expm1;
}

}  // namespace internal

// Relative slack absorbing rounding when eps' equals k * eps up to the last
// ulp, so that case yields exactly 1.
inline constexpr double kBoundSlack = 1e-12;

inline uint64_t QueryBound(const BudgetParams& params) {
  const double total = params.overall_epsilon;
  const double per_answer = params.num_classes * params.per_access_epsilon;
  double ratio;
  if (total <= 700.0 && per_answer <= 700.0) {
    ratio = (total * std::expm1(total)) / (per_answer * std::expm1(per_answer));
  } else {
    const double log_ratio = internal::LogDivergenceCap(total) -
                             internal::LogDivergenceCap(per_answer);
    if (log_ratio >= std::log(static_cast<double>(UINT64_MAX))) {
      return UINT64_MAX;
    }
    ratio = std::exp(log_ratio);
  }
  const double floored = std::floor(ratio * (1.0 + kBoundSlack));
  if (floored >= static_cast<double>(UINT64_MAX)) return UINT64_MAX;
  return floored < 0.0 ? 0 : static_cast<uint64_t>(floored);
}

// SHA-256 of a canonicalized record.
struct Digest {
  std::array<uint8_t, SHA256_DIGEST_LENGTH> bytes{};

  std::string Hex() const {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (uint8_t b : bytes) {
      out.push_back(kHex[b >> 4]);
      out.push_back(kHex[b & 0xf]);
    }
    return out;
  }

  static absl::StatusOr<Digest> FromHex(std::string_view hex) {
    Digest d;
    if (hex.size() != d.bytes.size() * 2) {
      return absl::InvalidArgumentError("digest must be 64 hex characters");
    }
    auto nibble = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      return -1;
    };
    for (size_t i = 0; i < d.bytes.size(); ++i) {
      const int hi = nibble(hex[2 * i]);
      const int lo = nibble(hex[2 * i + 1]);
      if (hi < 0 || lo < 0) {
        return absl::InvalidArgumentError("digest must be hexadecimal");
      }
      d.bytes[i] = static_cast<uint8_t>(hi << 4 | lo);
    }
    return d;
  }

  friend bool operator==(const Digest&, const Digest&) = default;
};

struct DigestHash {
  size_t operator()(const Digest& d) const {
    size_t h;
    static_assert(sizeof(h) <= sizeof(d.bytes));
    std::memcpy(&h, d.bytes.data(), sizeof(h));
    return h;
  }
};

inline absl::StatusOr<Digest> Fingerprint(std::span<const uint8_t> record) {
  if (record.empty()) return absl::InvalidArgumentError("empty record");
  Digest d;
  SHA256(record.data(), record.size(), d.bytes.data());
  return d;
}

inline absl::StatusOr<Digest> Fingerprint(std::string_view record) {
  return Fingerprint(std::span<const uint8_t>(
      reinterpret_cast<const uint8_t*>(record.data()), record.size()));
}

namespace internal {

inline void AppendCanonical(const nlohmann::json& j, std::string& out) {
  switch (j.type()) {
    case nlohmann::json::value_t::object: {
      // nlohmann::json stores object keys sorted.
      out.push_back('{');
      bool first = true;
      for (const auto& [key, value] : j.items()) {
        if (!first) out.push_back(',');
        first = false;
        out += nlohmann::json(key).dump();
        out.push_back(':');
        AppendCanonical(value, out);
      }
      out.push_back('}');
      break;
    }
    case nlohmann::json::value_t::array: {
      out.push_back('[');
      for (size_t i = 0; i < j.size(); ++i) {
        if (i) out.push_back(',');
        AppendCanonical(j[i], out);
      }
      out.push_back(']');
      break;
    }
    case nlohmann::json::value_t::number_integer:
    case nlohmann::json::value_t::number_unsigned:
    case nlohmann::json::value_t::number_float:
      out += FormatDouble(j.get<double>());
      break;
    default:
      out += j.dump();
  }
}

}  // namespace internal

// Canonical text of a JSON record: sorted keys, no whitespace, every number
// written as a double with 17 significant digits. Records that differ only in
// number spelling (1 vs 1.0 vs 1e0) canonicalize identically.
inline std::string CanonicalJson(const nlohmann::json& record) {
  std::string out;
  internal::AppendCanonical(record, out);
  return out;
}

struct QueryOutcome {
  bool allowed = false;
  // Answers left for the record after this call.
  uint64_t remaining = 0;
};

// Per-record answer counts against QueryBound(params).
//
// Thread-safe: RegisterQuery is linearizable. When backed by a file, every
// grant is appended as "<hex digest> <count>" and flushed before the call
// returns; opening the file replays the log (last entry per digest wins). The
// log is compacted into one line per digest once it grows past twice the
// number of live entries.
class BudgetLedger {
 public:
  static absl::StatusOr<std::unique_ptr<BudgetLedger>> Create(
      const BudgetParams& params) {
    DPGUARD_RETURN_IF_ERROR(params.Validate());
    return std::unique_ptr<BudgetLedger>(new BudgetLedger(params));
  }

  // Opens (or creates) a persistent ledger. An existing file must have been
  // written with the same parameters.
  static absl::StatusOr<std::unique_ptr<BudgetLedger>> Open(
      const BudgetParams& params, const std::filesystem::path& path) {
    DPGUARD_ASSIGN_OR_RETURN(std::unique_ptr<BudgetLedger> ledger,
                             Create(params));
    ledger->path_ = path;
    if (std::filesystem::exists(path)) {
      std::ifstream in(path);
      if (!in) {
        return absl::PermissionDeniedError("cannot read ledger file");
      }
      DPGUARD_RETURN_IF_ERROR(ledger->Replay(in));
    }
    DPGUARD_RETURN_IF_ERROR(ledger->CompactLocked());
    return ledger;
  }

  // Loads a snapshot (or log) produced by WriteSnapshot into a memory-only
  // ledger.
  static absl::StatusOr<std::unique_ptr<BudgetLedger>> Load(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) {
      return absl::InvalidArgumentError("ledger snapshot is empty");
    }
    DPGUARD_ASSIGN_OR_RETURN(BudgetParams params, ParseHeader(header));
    DPGUARD_ASSIGN_OR_RETURN(std::unique_ptr<BudgetLedger> ledger,
                             Create(params));
    DPGUARD_RETURN_IF_ERROR(ledger->ReplayEntries(in));
    return ledger;
  }

  BudgetLedger(const BudgetLedger&) = delete;
  BudgetLedger& operator=(const BudgetLedger&) = delete;

  const BudgetParams& params() const { return params_; }
  uint64_t bound() const { return bound_; }

  QueryOutcome RegisterQuery(const Digest& digest) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = counts_.find(digest);
    const uint64_t current = it == counts_.end() ? 0 : it->second;
    if (current >= bound_) return QueryOutcome{false, 0};
    const uint64_t next = current + 1;
    if (log_.is_open()) {
      log_ << digest.Hex() << ' ' << next << '\n';
      log_.flush();
      if (!log_) return QueryOutcome{false, bound_ - current};
      ++log_lines_;
    }
    counts_[digest] = next;
    if (log_.is_open() && log_lines_ > 2 * counts_.size() + kCompactSlack) {
      // A failed compaction leaves the append log intact; keep serving.
      (void)CompactLocked();
    }
    return QueryOutcome{true, bound_ - next};
  }

  uint64_t Count(const Digest& digest) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = counts_.find(digest);
    return it == counts_.end() ? 0 : it->second;
  }

  uint64_t Remaining(const Digest& digest) const {
    const uint64_t used = Count(digest);
    return used >= bound_ ? 0 : bound_ - used;
  }

  size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return counts_.size();
  }

  // Header line followed by one "<hex digest> <count>" line per record,
  // sorted by digest so equal ledgers serialize identically.
  void WriteSnapshot(std::ostream& out) const {
    std::lock_guard<std::mutex> lock(mu_);
    WriteSnapshotLocked(out);
  }

  std::string Snapshot() const {
    std::ostringstream out;
    WriteSnapshot(out);
    return out.str();
  }

  absl::Status Compact() {
    std::lock_guard<std::mutex> lock(mu_);
    return CompactLocked();
  }

 private:
  static constexpr size_t kCompactSlack = 1024;

  explicit BudgetLedger(const BudgetParams& params)
      : params_(params), bound_(QueryBound(params)) {}

  std::string Header() const {
    return absl::StrFormat(
        "dpguard-ledger v1 per_access_epsilon=%s num_classes=%d "
        "overall_epsilon=%s bound=%d",
        FormatDouble(params_.per_access_epsilon), params_.num_classes,
        FormatDouble(params_.overall_epsilon), bound_);
  }

  static absl::StatusOr<BudgetParams> ParseHeader(const std::string& line) {
    char per_access[64] = {0};
    char overall[64] = {0};
    int k = 0;
    unsigned long long bound = 0;
    if (std::sscanf(line.c_str(),
                    "dpguard-ledger v1 per_access_epsilon=%63s num_classes=%d "
                    "overall_epsilon=%63s bound=%llu",
                    per_access, &k, overall, &bound) != 4) {
      return absl::InvalidArgumentError("malformed ledger header");
    }
    BudgetParams params;
    params.per_access_epsilon = std::strtod(per_access, nullptr);
    params.num_classes = k;
    params.overall_epsilon = std::strtod(overall, nullptr);
    DPGUARD_RETURN_IF_ERROR(params.Validate());
    if (QueryBound(params) != bound) {
      return absl::InvalidArgumentError(
          "ledger header bound does not match its parameters");
    }
    return params;
  }

  absl::Status Replay(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) return absl::OkStatus();  // empty file
    DPGUARD_ASSIGN_OR_RETURN(BudgetParams stored, ParseHeader(header));
    if (stored.per_access_epsilon != params_.per_access_epsilon ||
        stored.num_classes != params_.num_classes ||
        stored.overall_epsilon != params_.overall_epsilon) {
      return absl::FailedPreconditionError(
          "ledger file was written with different budget parameters");
    }
    return ReplayEntries(in);
  }

  absl::Status ReplayEntries(std::istream& in) {
    std::string line;
    size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::optional<std::pair<Digest, uint64_t>> entry = ParseEntry(line);
      if (!entry.has_value()) {
        // A torn final append; everything before it is intact.
        if (in.peek() == std::char_traits<char>::eof()) break;
        return absl::DataLossError(
            absl::StrFormat("malformed ledger line %d", line_no));
      }
      // Counts only grow; a stale line never lowers a replayed count.
      uint64_t& slot = counts_[entry->first];
      slot = std::max(slot, std::min(entry->second, bound_));
    }
    return absl::OkStatus();
  }

  static std::optional<std::pair<Digest, uint64_t>> ParseEntry(
      std::string_view line) {
    const size_t space = line.find(' ');
    if (space == std::string_view::npos) return std::nullopt;
    absl::StatusOr<Digest> digest = Digest::FromHex(line.substr(0, space));
    if (!digest.ok()) return std::nullopt;
    std::optional<uint64_t> count =
        ParseInteger<uint64_t>(line.substr(space + 1));
    if (!count.has_value()) return std::nullopt;
    return std::make_pair(*digest, *count);
  }

  void WriteSnapshotLocked(std::ostream& out) const {
    std::vector<std::pair<std::string, uint64_t>> rows;
    rows.reserve(counts_.size());
    for (const auto& [digest, count] : counts_) {
      rows.emplace_back(digest.Hex(), count);
    }
    std::sort(rows.begin(), rows.end());
    out << Header() << '\n';
    for (const auto& [hex, count] : rows) out << hex << ' ' << count << '\n';
  }

  // Rewrites the file as a snapshot (temp file + rename) and reopens it for
  // appending. No-op for memory-only ledgers.
  absl::Status CompactLocked() {
    if (path_.empty()) return absl::OkStatus();
    if (log_.is_open()) log_.close();
    std::filesystem::path tmp = path_;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) return absl::PermissionDeniedError("cannot write ledger file");
      WriteSnapshotLocked(out);
      out.flush();
      if (!out) return absl::DataLossError("failed writing ledger snapshot");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path_, ec);
    if (ec) return absl::PermissionDeniedError("cannot replace ledger file");
    log_.open(path_, std::ios::app);
    if (!log_) return absl::PermissionDeniedError("cannot append to ledger");
    log_lines_ = counts_.size();
    return absl::OkStatus();
  }

  const BudgetParams params_;
  const uint64_t bound_;
  mutable std::mutex mu_;
  std::unordered_map<Digest, uint64_t, DigestHash> counts_;
  std::filesystem::path path_;
  std::ofstream log_;
  size_t log_lines_ = 0;
};

}  // namespace dpguard

#endif  // DPGUARD_ACCOUNTANT_H_
