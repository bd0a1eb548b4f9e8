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

#ifndef DPGUARD_APP_H_
#define DPGUARD_APP_H_

// Application layer shared by the CLI and the proxy: layered configuration,
// the per-request defense service with budget enforcement, batch stream
// processing and calibration reports.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_format.h"
#include "dpguard/accountant.h"
#include "dpguard/calibration.h"
#include "dpguard/confidence_vector.h"
#include "dpguard/format.h"
#include "dpguard/mechanism.h"
#include "dpguard/record_io.h"
#include "dpguard/status_macros.h"
#include "nlohmann/json.hpp"

namespace dpguard {

enum class IoFormat { kJsonl, kCsv };

struct AppConfig {
  MechanismConfig mechanism;
  // False when no seed was configured anywhere; serve mode then seeds from
  // the OS.
  bool seed_explicit = false;
  std::optional<DefensePolicy> policy;
  std::optional<BudgetParams> budget;
  IoFormat format = IoFormat::kJsonl;
  std::string ledger_path;
  std::string input_path;
  std::string output_path;
  std::string listen = "127.0.0.1:8080";
  // host:port/path of an upstream classifier, empty when not wired.
  std::string upstream;
};

// Recognized setting names. Each is a CLI flag (--name), a config-file key
// (name) and an environment variable (DPGUARD_NAME with '-' -> '_').
inline const std::vector<std::string>& ConfigKeys() {
  static const std::vector<std::string> keys = {
      "epsilon", "m",           "seed",        "floor-fraction",
      "tau",     "eps-confident", "eps-unconfident",
      "budget-total-epsilon",   "num-classes", "ledger",
      "format",  "input",       "output",      "listen",
      "upstream",
  };
  return keys;
}

inline std::string EnvVarName(std::string_view key) {
  std::string out = "DPGUARD_";
  for (char c : key) {
    out.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(
                                       static_cast<unsigned char>(c))));
  }
  return out;
}

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline EnvLookup ProcessEnv() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (v == nullptr) return std::nullopt;
    return std::string(v);
  };
}

// Sources in increasing precedence: built-in defaults, config file, process
// environment, command-line flags.
struct ConfigLayers {
  nlohmann::json file = nlohmann::json::object();
  EnvLookup env;
  std::map<std::string, std::string> flags;
};

namespace internal {

inline absl::StatusOr<double> ParsePositive(const std::string& key,
                                            const std::string& text) {
  const std::optional<double> v = ParseDouble(text);
  if (!v || !(*v > 0.0) || !std::isfinite(*v)) {
    return absl::InvalidArgumentError(
        absl::StrFormat("--%s must be a positive number", key));
  }
  return *v;
}

inline absl::StatusOr<int> ParsePositiveInt(const std::string& key,
                                            const std::string& text) {
  const std::optional<int> v = ParseInteger<int>(text);
  if (!v || *v < 1) {
    return absl::InvalidArgumentError(
        absl::StrFormat("--%s must be a positive integer", key));
  }
  return *v;
}

}  // namespace internal

inline absl::StatusOr<AppConfig> ResolveAppConfig(const ConfigLayers& layers) {
  if (!layers.file.is_object()) {
    return absl::InvalidArgumentError("config file must hold a JSON object");
  }
  std::map<std::string, std::string> merged;
  for (const auto& [key, value] : layers.file.items()) {
    if (std::find(ConfigKeys().begin(), ConfigKeys().end(), key) ==
        ConfigKeys().end()) {
      return absl::InvalidArgumentError(
          absl::StrFormat("unknown config key '%s'", key));
    }
    merged[key] = value.is_string() ? value.get<std::string>() : value.dump();
  }
  if (layers.env) {
    for (const std::string& key : ConfigKeys()) {
      if (auto v = layers.env(EnvVarName(key))) merged[key] = *v;
    }
  }
  for (const auto& [key, value] : layers.flags) merged[key] = value;

  auto get = [&](const std::string& key) -> std::optional<std::string> {
    auto it = merged.find(key);
    if (it == merged.end()) return std::nullopt;
    return it->second;
  };

  AppConfig cfg;
  if (auto v = get("epsilon")) {
    DPGUARD_ASSIGN_OR_RETURN(cfg.mechanism.epsilon,
                             internal::ParsePositive("epsilon", *v));
  }
  if (auto v = get("m")) {
    DPGUARD_ASSIGN_OR_RETURN(cfg.mechanism.m,
                             internal::ParsePositiveInt("m", *v));
  }
  if (auto v = get("floor-fraction")) {
    DPGUARD_ASSIGN_OR_RETURN(cfg.mechanism.utility_floor_fraction,
                             internal::ParsePositive("floor-fraction", *v));
  }
  if (auto v = get("seed")) {
    const std::optional<uint64_t> seed = ParseInteger<uint64_t>(*v);
    if (!seed) {
      return absl::InvalidArgumentError(
          "--seed must be an unsigned 64-bit integer");
    }
    cfg.mechanism.rng_seed = *seed;
    cfg.seed_explicit = true;
  }
  DPGUARD_RETURN_IF_ERROR(cfg.mechanism.Validate());

  const auto tau = get("tau");
  const auto eps_confident = get("eps-confident");
  const auto eps_unconfident = get("eps-unconfident");
  if (tau || eps_confident || eps_unconfident) {
    if (!(tau && eps_confident && eps_unconfident)) {
      return absl::InvalidArgumentError(
          "--tau, --eps-confident and --eps-unconfident go together");
    }
    DefensePolicy policy;
    const std::optional<double> tau_value = ParseDouble(*tau);
    if (!tau_value) {
      return absl::InvalidArgumentError("--tau must be a number in (0, 1)");
    }
    policy.tau = *tau_value;
    DPGUARD_ASSIGN_OR_RETURN(
        policy.eps_confident,
        internal::ParsePositive("eps-confident", *eps_confident));
    DPGUARD_ASSIGN_OR_RETURN(
        policy.eps_unconfident,
        internal::ParsePositive("eps-unconfident", *eps_unconfident));
    DPGUARD_RETURN_IF_ERROR(policy.Validate());
    cfg.policy = policy;
  }

  if (auto total = get("budget-total-epsilon")) {
    BudgetParams budget;
    DPGUARD_ASSIGN_OR_RETURN(
        budget.overall_epsilon,
        internal::ParsePositive("budget-total-epsilon", *total));
    auto k = get("num-classes");
    if (!k) {
      return absl::InvalidArgumentError(
          "--budget-total-epsilon requires --num-classes");
    }
    DPGUARD_ASSIGN_OR_RETURN(budget.num_classes,
                             internal::ParsePositiveInt("num-classes", *k));
    // Phase one runs at the policy branch budget when a policy is set; the
    // larger branch is charged for every answer.
    budget.per_access_epsilon =
        cfg.policy ? std::max(cfg.policy->eps_confident,
                              cfg.policy->eps_unconfident)
                   : cfg.mechanism.epsilon;
    DPGUARD_RETURN_IF_ERROR(budget.Validate());
    cfg.budget = budget;
  }

  if (auto v = get("format")) {
    if (*v == "jsonl") {
      cfg.format = IoFormat::kJsonl;
    } else if (*v == "csv") {
      cfg.format = IoFormat::kCsv;
    } else {
      return absl::InvalidArgumentError("--format must be jsonl or csv");
    }
  }
  cfg.ledger_path = get("ledger").value_or("");
  cfg.input_path = get("input").value_or("");
  cfg.output_path = get("output").value_or("");
  cfg.listen = get("listen").value_or(cfg.listen);
  cfg.upstream = get("upstream").value_or("");
  return cfg;
}

// Stable error codes reported to clients.
inline constexpr std::string_view kMalformedRecord = "malformed_record";
inline constexpr std::string_view kInvalidVector = "invalid_vector";
inline constexpr std::string_view kBudgetExhausted = "budget_exhausted";
inline constexpr std::string_view kInternalError = "internal";

inline std::string_view ErrorCodeFor(const absl::Status& status) {
  switch (status.code()) {
    case absl::StatusCode::kInvalidArgument:
      return kInvalidVector;
    case absl::StatusCode::kResourceExhausted:
      return kBudgetExhausted;
    default:
      return kInternalError;
  }
}

// Budget key of a request: the caller's record id when given, else the
// canonical model input (upstream mode), else the canonical score list.
inline absl::StatusOr<Digest> RequestFingerprint(const DefendRequest& req) {
  if (req.record_id) return Fingerprint(*req.record_id);
  if (req.input) return Fingerprint(CanonicalJson(*req.input));
  return Fingerprint(CanonicalJson(nlohmann::json(req.scores)));
}

// Defends individual requests: validation, budget registration, then the
// mechanism (under the policy when one is configured). Thread-safe.
class DefendService {
 public:
  // `require_budget` makes a missing budget configuration an error.
  static absl::StatusOr<std::unique_ptr<DefendService>> Create(
      AppConfig config, bool require_budget) {
    DPGUARD_RETURN_IF_ERROR(config.mechanism.Validate());
    std::unique_ptr<BudgetLedger> ledger;
    if (config.budget) {
      if (config.ledger_path.empty()) {
        DPGUARD_ASSIGN_OR_RETURN(ledger, BudgetLedger::Create(*config.budget));
      } else {
        DPGUARD_ASSIGN_OR_RETURN(
            ledger, BudgetLedger::Open(*config.budget, config.ledger_path));
      }
    } else if (require_budget) {
      return absl::InvalidArgumentError(
          "a budget is mandatory here: set --budget-total-epsilon and "
          "--num-classes");
    }
    return std::unique_ptr<DefendService>(
        new DefendService(std::move(config), std::move(ledger)));
  }

  const AppConfig& config() const { return config_; }
  BudgetLedger* ledger() { return ledger_.get(); }

  uint64_t NextNonce() { return nonce_.fetch_add(1); }

  // Errors: InvalidArgument for bad vectors, ResourceExhausted once the
  // record's budget is spent. Messages never include scores.
  absl::StatusOr<DefendResponse> Handle(const DefendRequest& req,
                                        uint64_t nonce) {
    DPGUARD_ASSIGN_OR_RETURN(ConfidenceVector y,
                             ConfidenceVector::Create(req.scores));
    DefendResponse resp;
    resp.record_id = req.record_id;
    if (ledger_) {
      if (y.size() != static_cast<size_t>(config_.budget->num_classes)) {
        return absl::InvalidArgumentError(
            "vector length does not match the configured number of classes");
      }
      DPGUARD_ASSIGN_OR_RETURN(Digest digest, RequestFingerprint(req));
      const QueryOutcome outcome = ledger_->RegisterQuery(digest);
      if (!outcome.allowed) {
        return absl::ResourceExhaustedError("query budget exhausted");
      }
      resp.budget_remaining = outcome.remaining;
    }
    if (config_.policy) {
      DPGUARD_ASSIGN_OR_RETURN(
          PolicyOutcome outcome,
          DefendWithPolicy(y, config_.mechanism, *config_.policy, nonce));
      resp.scores.assign(outcome.z.begin(), outcome.z.end());
      resp.epsilon_used = outcome.epsilon_used;
    } else {
      DPGUARD_ASSIGN_OR_RETURN(ConfidenceVector z,
                               Defend(y, config_.mechanism, nonce));
      resp.scores.assign(z.begin(), z.end());
      resp.epsilon_used = config_.mechanism.epsilon;
    }
    return resp;
  }

 private:
  DefendService(AppConfig config, std::unique_ptr<BudgetLedger> ledger)
      : config_(std::move(config)), ledger_(std::move(ledger)) {}

  AppConfig config_;
  std::unique_ptr<BudgetLedger> ledger_;
  std::atomic<uint64_t> nonce_{0};
};

// Batch defense over a stream. One output line per input record, in order;
// the k-th record (0-based, header excluded) uses nonce k, so output is a
// pure function of (input, config). Failed records produce an error record
// and a note on `side`; the stream continues. Blank lines are skipped.
// Returns the process exit code.
inline int RunDefendStream(std::istream& in, std::ostream& out,
                           std::ostream& side, DefendService& service) {
  const bool csv = service.config().format == IoFormat::kCsv;
  std::string line;
  size_t line_no = 0;
  uint64_t record_index = 0;
  std::optional<size_t> csv_width;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (csv && !csv_width) {
      absl::StatusOr<size_t> width = ParseCsvHeader(line);
      if (!width.ok()) {
        side << "line " << line_no << ": " << width.status().message() << '\n';
        return 1;
      }
      csv_width = *width;
      out << FormatCsvResponseHeader(*width) << '\n';
      continue;
    }
    const uint64_t nonce = record_index++;
    absl::StatusOr<DefendRequest> req =
        csv ? ParseCsvRequest(line, *csv_width) : ParseJsonlRequest(line);
    if (!req.ok()) {
      side << "line " << line_no << ": " << kMalformedRecord << ": "
           << req.status().message() << '\n';
      out << (csv ? FormatCsvError(std::nullopt, kMalformedRecord)
                  : FormatJsonlError(std::nullopt, kMalformedRecord, line_no,
                                     std::string(req.status().message())))
          << '\n';
      continue;
    }
    absl::StatusOr<DefendResponse> resp = service.Handle(*req, nonce);
    if (!resp.ok()) {
      const std::string_view code = ErrorCodeFor(resp.status());
      side << "line " << line_no << ": " << code << ": "
           << resp.status().message() << '\n';
      out << (csv ? FormatCsvError(req->record_id, code)
                  : FormatJsonlError(req->record_id, code, line_no,
                                     std::string(resp.status().message())))
          << '\n';
      continue;
    }
    out << (csv ? FormatCsvResponse(*resp) : FormatJsonlResponse(*resp))
        << '\n';
  }
  out.flush();
  return 0;
}

struct CalibrationReport {
  EpsilonStar eps_star;
  double recommended_eps_confident = 0.0;
  double recommended_eps_unconfident = 0.0;
  // True when y' was drawn with the mechanism rather than supplied.
  bool drew_y_prime = false;

  std::string ToKeyValue() const {
    return absl::StrFormat(
        "epsilon_star=%s\nresidual=%s\npair_seed=%s\n"
        "recommended_eps_confident=%s\nrecommended_eps_unconfident=%s\n",
        FormatDouble(eps_star.value), FormatDouble(eps_star.residual),
        FormatDouble(eps_star.pair_seed),
        FormatDouble(recommended_eps_confident),
        FormatDouble(recommended_eps_unconfident));
  }
};

// Solves eps* for (y, y'), drawing y' with the mechanism when not supplied,
// and recommends (eps*/4, 4 eps*) as the deflate/inflate budgets.
inline absl::StatusOr<CalibrationReport> RunCalibrate(
    const std::vector<double>& y_scores,
    const std::optional<std::vector<double>>& y_prime,
    const MechanismConfig& cfg) {
  DPGUARD_ASSIGN_OR_RETURN(ConfidenceVector y,
                           ConfidenceVector::Create(y_scores));
  CalibrationReport report;
  std::vector<double> modified;
  if (y_prime) {
    modified = *y_prime;
  } else {
    DPGUARD_ASSIGN_OR_RETURN(ModifiedVector drawn, Modify(y, cfg));
    modified = std::move(drawn.scores);
    report.drew_y_prime = true;
  }
  DPGUARD_ASSIGN_OR_RETURN(report.eps_star,
                           SolveEpsilonStar(y.scores(), modified));
  constexpr double kMinEpsilon = 1e-12;
  report.recommended_eps_confident =
      std::max(report.eps_star.value / 4.0, kMinEpsilon);
  report.recommended_eps_unconfident =
      std::max(report.eps_star.value * 4.0, kMinEpsilon);
  return report;
}

// Seed for serve mode: the configured one, or fresh OS entropy.
inline uint64_t ServeSeed(const AppConfig& config) {
  if (config.seed_explicit) return config.mechanism.rng_seed;
  std::random_device rd;
  return (static_cast<uint64_t>(rd()) << 32) ^ rd();
}

}  // namespace dpguard

#endif  // DPGUARD_APP_H_
