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

// dpguard command-line front end.
//
//   dpguard defend     batch-defend JSONL or CSV records
//   dpguard calibrate  solve eps* for a vector and recommend policy budgets
//   dpguard serve      run the HTTP proxy (budget enforcement mandatory)
//   dpguard evaluate   desk-scale membership-inference evaluation
//   dpguard bound      print the repeated-query bound

#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "dpguard/format.h"
#include "dpguard/accountant.h"
#include "dpguard/app.h"
#include "dpguard/attack_sim.h"
#include "dpguard/server.h"
#include "nlohmann/json.hpp"

namespace {

using dpguard::AppConfig;

// Flag storage for one subcommand; only flags actually given are forwarded
// to ResolveAppConfig so that env and config-file layers show through.
struct SharedFlags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  std::string config_path;

  void Register(CLI::App& app) {
    static const std::map<std::string, std::string> kHelp = {
        {"epsilon", "privacy budget per selection and for normalization"},
        {"m", "candidates per sub-range (default 5)"},
        {"seed", "RNG seed"},
        {"floor-fraction", "utility distance floor as a fraction of spacing"},
        {"tau", "confidence threshold of the defense policy"},
        {"eps-confident", "budget for outputs with top score > tau"},
        {"eps-unconfident", "budget for outputs with top score <= tau"},
        {"budget-total-epsilon", "overall per-record privacy target"},
        {"num-classes", "number of classes k (needed with a budget)"},
        {"ledger", "budget ledger file"},
        {"format", "record format: jsonl or csv"},
        {"input", "input file (default stdin)"},
        {"output", "output file (default stdout)"},
        {"listen", "listen address host:port"},
        {"upstream", "upstream classifier host:port/path"},
    };
    for (const std::string& key : dpguard::ConfigKeys()) {
      values[key];
      options[key] = app.add_option("--" + key, values[key], kHelp.at(key));
    }
    app.add_option("--config", config_path,
                   "JSON config file (also DPGUARD_CONFIG)");
  }

  absl::StatusOr<AppConfig> Resolve() const {
    dpguard::ConfigLayers layers;
    layers.env = dpguard::ProcessEnv();
    std::string path = config_path;
    if (path.empty()) {
      if (const char* env = std::getenv("DPGUARD_CONFIG")) path = env;
    }
    if (!path.empty()) {
      std::ifstream in(path);
      if (!in) return absl::NotFoundError("cannot open config file");
      layers.file = nlohmann::json::parse(in, nullptr, false);
      if (layers.file.is_discarded()) {
        return absl::InvalidArgumentError("config file is not valid JSON");
      }
    }
    for (const auto& [key, option] : options) {
      if (option->count() > 0) layers.flags[key] = values.at(key);
    }
    return dpguard::ResolveAppConfig(layers);
  }
};

absl::StatusOr<std::vector<double>> ParseList(const std::string& text) {
  std::vector<double> out;
  for (std::string_view field : dpguard::SplitFields(text, ',')) {
    const std::optional<double> v = dpguard::ParseDouble(field);
    if (!v) {
      return absl::InvalidArgumentError("expected comma-separated numbers");
    }
    out.push_back(*v);
  }
  return out;
}

int Fail(const absl::Status& status) {
  std::cerr << "dpguard: " << status.message() << '\n';
  return 1;
}

int RunDefend(const SharedFlags& flags) {
  absl::StatusOr<AppConfig> cfg = flags.Resolve();
  if (!cfg.ok()) return Fail(cfg.status());
  auto service = dpguard::DefendService::Create(*cfg, /*require_budget=*/false);
  if (!service.ok()) return Fail(service.status());

  std::ifstream file_in;
  std::ofstream file_out;
  std::istream* in = &std::cin;
  std::ostream* out = &std::cout;
  if (!cfg->input_path.empty()) {
    file_in.open(cfg->input_path);
    if (!file_in) return Fail(absl::NotFoundError("cannot open input file"));
    in = &file_in;
  }
  if (!cfg->output_path.empty()) {
    file_out.open(cfg->output_path, std::ios::trunc);
    if (!file_out) {
      return Fail(absl::PermissionDeniedError("cannot open output file"));
    }
    out = &file_out;
  }
  return dpguard::RunDefendStream(*in, *out, std::cerr, **service);
}

int RunCalibrate(const SharedFlags& flags, const std::string& y_text,
                 const std::string& y_prime_text) {
  absl::StatusOr<AppConfig> cfg = flags.Resolve();
  if (!cfg.ok()) return Fail(cfg.status());
  absl::StatusOr<std::vector<double>> y = ParseList(y_text);
  if (!y.ok()) return Fail(y.status());
  std::optional<std::vector<double>> y_prime;
  if (!y_prime_text.empty()) {
    absl::StatusOr<std::vector<double>> parsed = ParseList(y_prime_text);
    if (!parsed.ok()) return Fail(parsed.status());
    y_prime = *parsed;
  }
  absl::StatusOr<dpguard::CalibrationReport> report =
      dpguard::RunCalibrate(*y, y_prime, cfg->mechanism);
  if (!report.ok()) return Fail(report.status());
  std::cout << report->ToKeyValue();
  return 0;
}

dpguard::ProxyServer* g_server = nullptr;

void StopOnSignal(int) {
  if (g_server != nullptr) g_server->Stop();
}

int RunServe(const SharedFlags& flags) {
  absl::StatusOr<AppConfig> cfg = flags.Resolve();
  if (!cfg.ok()) return Fail(cfg.status());
  cfg->mechanism.rng_seed = dpguard::ServeSeed(*cfg);
  absl::StatusOr<dpguard::HostPort> addr = dpguard::ParseHostPort(cfg->listen);
  if (!addr.ok()) return Fail(addr.status());
  auto service = dpguard::DefendService::Create(*cfg, /*require_budget=*/true);
  if (!service.ok()) return Fail(service.status());

  dpguard::ProxyServer server(**service);
  if (absl::Status s = server.UpstreamStatus(); !s.ok()) return Fail(s);
  if (!server.Bind(addr->host, addr->port)) {
    return Fail(absl::UnavailableError("cannot bind listen address"));
  }
  g_server = &server;
  std::signal(SIGINT, StopOnSignal);
  std::signal(SIGTERM, StopOnSignal);
  std::cerr << "dpguard: serving on " << cfg->listen << " (query bound "
            << (*service)->ledger()->bound() << " per record)\n";
  server.ListenAfterBind();
  g_server = nullptr;
  return 0;
}

struct EvaluateFlags {
  dpguard::CohortSpec spec;
  int epochs = 2000;
  double learning_rate = 0.5;
  bool json = false;
};

int RunEvaluate(const SharedFlags& flags, const EvaluateFlags& eval) {
  absl::StatusOr<AppConfig> cfg = flags.Resolve();
  if (!cfg.ok()) return Fail(cfg.status());
  dpguard::EvalOptions options;
  options.logistic.epochs = eval.epochs;
  options.logistic.learning_rate = eval.learning_rate;
  absl::StatusOr<dpguard::EvalReport> report = dpguard::EvaluateDefense(
      eval.spec, cfg->mechanism, cfg->policy, options);
  if (!report.ok()) return Fail(report.status());
  if (eval.json) {
    std::cout << report->ToJson().dump(2) << '\n';
  } else {
    std::cout << report->ToKeyValue();
  }
  return 0;
}

int RunBound(double per_access, int k, double overall) {
  dpguard::BudgetParams params{per_access, k, overall};
  if (absl::Status s = params.Validate(); !s.ok()) return Fail(s);
  std::cout << dpguard::QueryBound(params) << '\n';
  if (params.DeniesEverything()) {
    std::cerr << "dpguard: overall epsilon is below k * epsilon; every query "
                 "will be denied\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private confidence-score defense"};
  app.require_subcommand(1);

  SharedFlags defend_flags, calibrate_flags, serve_flags, evaluate_flags;
  CLI::App* defend = app.add_subcommand("defend", "defend a record stream");
  defend_flags.Register(*defend);

  CLI::App* calibrate =
      app.add_subcommand("calibrate", "solve eps* and recommend budgets");
  calibrate_flags.Register(*calibrate);
  std::string y_text, y_prime_text;
  calibrate->add_option("--y", y_text, "original scores, comma-separated")
      ->required();
  calibrate->add_option("--y-prime", y_prime_text,
                        "modified scores; drawn with the mechanism if absent");

  CLI::App* serve = app.add_subcommand("serve", "run the HTTP proxy");
  serve_flags.Register(*serve);

  CLI::App* evaluate =
      app.add_subcommand("evaluate", "membership-inference evaluation");
  evaluate_flags.Register(*evaluate);
  EvaluateFlags eval;
  evaluate->add_option("--k", eval.spec.k, "classes per vector");
  evaluate->add_option("--members", eval.spec.n_members, "member vectors");
  evaluate->add_option("--nonmembers", eval.spec.n_nonmembers,
                       "non-member vectors");
  evaluate->add_option("--member-concentration",
                       eval.spec.member_concentration,
                       "expected top score of members");
  evaluate->add_option("--nonmember-concentration",
                       eval.spec.nonmember_concentration,
                       "expected top score of non-members");
  evaluate->add_option("--cohort-seed", eval.spec.rng_seed, "cohort RNG seed");
  evaluate->add_option("--epochs", eval.epochs, "logistic attacker epoch cap");
  evaluate->add_option("--lr", eval.learning_rate,
                       "logistic attacker learning rate");
  evaluate->add_flag("--json", eval.json, "emit JSON instead of key=value");

  CLI::App* bound = app.add_subcommand("bound", "repeated-query bound");
  double per_access = 0.1, overall = 1.0;
  int k = 10;
  bound->add_option("--epsilon", per_access, "per-selection budget")
      ->required();
  bound->add_option("--num-classes", k, "number of classes")->required();
  bound->add_option("--budget-total-epsilon", overall,
                    "overall per-record target")
      ->required();

  CLI11_PARSE(app, argc, argv);

  if (defend->parsed()) return RunDefend(defend_flags);
  if (calibrate->parsed()) {
    return RunCalibrate(calibrate_flags, y_text, y_prime_text);
  }
  if (serve->parsed()) return RunServe(serve_flags);
  if (evaluate->parsed()) return RunEvaluate(evaluate_flags, eval);
  if (bound->parsed()) return RunBound(per_access, k, overall);
  return 1;
}
