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

#ifndef DPGUARD_SERVER_H_
#define DPGUARD_SERVER_H_

// HTTP proxy exposing the defense as a private prediction interface.
//
//   POST /defend               DefendRequest JSON -> DefendResponse JSON
//   GET  /budget/<hex digest>  {"fingerprint": ..., "budget_remaining": n}
//   GET  /healthz              "ok"
//
// Every answer passes through the mechanism; there is no pass-through route.
// Status codes: 400 malformed or invalid record, 429 budget exhausted, 502
// upstream failure, 500 internal. Error bodies carry a code only, never
// scores.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "dpguard/accountant.h"
#include "dpguard/app.h"
#include "dpguard/format.h"
#include "dpguard/record_io.h"
#include "httplib.h"
#include "nlohmann/json.hpp"

namespace dpguard {

struct HostPort {
  std::string host;
  int port = 0;
  // Path component, used for upstream endpoints ("/" when absent).
  std::string path = "/";
};

// Parses "host:port" or "host:port/path".
inline absl::StatusOr<HostPort> ParseHostPort(std::string_view text) {
  HostPort out;
  if (const size_t slash = text.find('/'); slash != std::string_view::npos) {
    out.path = std::string(text.substr(slash));
    text = text.substr(0, slash);
  }
  const size_t colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    return absl::InvalidArgumentError("address must look like host:port");
  }
  out.host = std::string(text.substr(0, colon));
  const std::optional<int> port = ParseInteger<int>(text.substr(colon + 1));
  if (!port || *port < 0 || *port > 65535) {
    return absl::InvalidArgumentError("port must be in [0, 65535]");
  }
  out.port = *port;
  return out;
}

class ProxyServer {
 public:
  explicit ProxyServer(DefendService& service) : service_(service) {
    if (!service_.config().upstream.empty()) {
      upstream_ = ParseHostPort(service_.config().upstream);
    }
    server_.set_exception_handler(
        [](const httplib::Request&, httplib::Response& res,
           std::exception_ptr) { Reply(res, 500, ErrorBody(kInternalError)); });
    server_.Get("/healthz", [](const httplib::Request&,
                               httplib::Response& res) {
      res.set_content("ok", "text/plain");
    });
    server_.Get(R"(/budget/([0-9a-fA-F]+))",
                [this](const httplib::Request& req, httplib::Response& res) {
                  HandleBudget(req, res);
                });
    server_.Post("/defend",
                 [this](const httplib::Request& req, httplib::Response& res) {
                   HandleDefend(req, res);
                 });
  }

  ProxyServer(const ProxyServer&) = delete;
  ProxyServer& operator=(const ProxyServer&) = delete;

  // Binds `host` on an ephemeral port and returns it (or -1).
  int BindToAnyPort(const std::string& host) {
    return server_.bind_to_any_port(host);
  }
  bool Bind(const std::string& host, int port) {
    return server_.bind_to_port(host, port);
  }
  // Blocks until Stop().
  bool ListenAfterBind() { return server_.listen_after_bind(); }
  void Stop() { server_.stop(); }
  void WaitUntilReady() { server_.wait_until_ready(); }

  absl::Status UpstreamStatus() const {
    return upstream_ ? upstream_->status() : absl::OkStatus();
  }

 private:
  static std::string ErrorBody(std::string_view code) {
    return nlohmann::json{{"error", code}}.dump();
  }

  static void Reply(httplib::Response& res, int status,
                    const std::string& body) {
    res.status = status;
    res.set_content(body, "application/json");
  }

  void HandleBudget(const httplib::Request& req, httplib::Response& res) {
    absl::StatusOr<Digest> digest = Digest::FromHex(req.matches[1].str());
    if (!digest.ok()) {
      Reply(res, 400, ErrorBody(kMalformedRecord));
      return;
    }
    nlohmann::json body{{"fingerprint", digest->Hex()}};
    if (BudgetLedger* ledger = service_.ledger()) {
      body["budget_remaining"] = ledger->Remaining(*digest);
    } else {
      body["budget_remaining"] = "unlimited";
    }
    Reply(res, 200, body.dump());
  }

  // Asks the upstream classifier for the score vector of `input`.
  absl::StatusOr<std::vector<double>> FetchScores(const nlohmann::json& input) {
    if (!upstream_ || !upstream_->ok()) {
      return absl::FailedPreconditionError("no upstream configured");
    }
    httplib::Client client((*upstream_)->host, (*upstream_)->port);
    client.set_connection_timeout(5);
    client.set_read_timeout(30);
    auto result =
        client.Post((*upstream_)->path, input.dump(), "application/json");
    if (!result || result->status != 200) {
      return absl::UnavailableError("upstream request failed");
    }
    nlohmann::json j = nlohmann::json::parse(result->body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("scores")) {
      return absl::UnavailableError("upstream returned no scores");
    }
    absl::StatusOr<DefendRequest> parsed = RequestFromJson(
        nlohmann::json{{"scores", j["scores"]}});
    if (!parsed.ok()) return absl::UnavailableError("upstream scores invalid");
    return parsed->scores;
  }

  void HandleDefend(const httplib::Request& http_req, httplib::Response& res) {
    nlohmann::json body = nlohmann::json::parse(http_req.body, nullptr, false);
    if (body.is_discarded()) {
      Reply(res, 400, ErrorBody(kMalformedRecord));
      return;
    }
    absl::StatusOr<DefendRequest> req = RequestFromJson(body);
    if (!req.ok()) {
      Reply(res, 400, ErrorBody(kMalformedRecord));
      return;
    }
    if (req->input && upstream_) {
      absl::StatusOr<std::vector<double>> scores = FetchScores(*req->input);
      if (!scores.ok()) {
        Reply(res, 502, ErrorBody("upstream_unavailable"));
        return;
      }
      req->scores = std::move(*scores);
    } else if (req->scores.empty()) {
      Reply(res, 400, ErrorBody(kMalformedRecord));
      return;
    }

    absl::StatusOr<DefendResponse> resp =
        service_.Handle(*req, service_.NextNonce());
    if (resp.ok()) {
      Reply(res, 200, FormatJsonlResponse(*resp));
      return;
    }
    const std::string_view code = ErrorCodeFor(resp.status());
    if (code == kBudgetExhausted) {
      Reply(res, 429,
            nlohmann::json{{"error", code}, {"budget_remaining", 0}}.dump());
    } else if (code == kInvalidVector) {
      Reply(res, 400, ErrorBody(code));
    } else {
      Reply(res, 500, ErrorBody(kInternalError));
    }
  }

  DefendService& service_;
  std::optional<absl::StatusOr<HostPort>> upstream_;
  httplib::Server server_;
};

}  // namespace dpguard

#endif  // DPGUARD_SERVER_H_
