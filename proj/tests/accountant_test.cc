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


#include "dpguard/accountant.h"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <latch>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "absl/status/status.h"
#include "gtest/gtest.h"
#include "nlohmann/json.hpp"

namespace dpguard {
namespace {

namespace fs = std::filesystem;

Digest DigestOf(std::string_view s) { return *Fingerprint(s); }

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("dpguard_accountant_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
             "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

TEST(QueryBoundTest, ReferenceValue) {
  EXPECT_EQ(QueryBound(BudgetParams{0.1, 10, 10.0}), 128183u);
}

TEST(QueryBoundTest, ExactlyOneAtTheProduct) {
  for (int k : {1, 2, 3, 7, 10, 100}) {
    for (double eps : {0.01, 0.1, 0.3, 1.0, 2.5}) {
      EXPECT_EQ(QueryBound(BudgetParams{eps, k, k * eps}), 1u)
          << "k=" << k << " eps=" << eps;
    }
  }
}

TEST(QueryBoundTest, BelowTheProductDeniesEverything) {
  const BudgetParams p{0.1, 10, 0.5};
  EXPECT_EQ(QueryBound(p), 0u);
  EXPECT_TRUE(p.DeniesEverything());
  EXPECT_FALSE((BudgetParams{0.1, 10, 1.0}).DeniesEverything());
}

TEST(QueryBoundTest, LargeTotalsStayFinite) {
  EXPECT_EQ(QueryBound(BudgetParams{0.1, 10, 800.0}), UINT64_MAX);
  EXPECT_EQ(QueryBound(BudgetParams{80.0, 10, 800.0}), 1u);
  EXPECT_EQ(QueryBound(BudgetParams{80.0, 10, 799.0}), 0u);
  // Log domain agrees with the direct formula: ratio = e^5 * 705/700 roughly.
  const double want = std::exp(internal::LogDivergenceCap(705.0) -
                               internal::LogDivergenceCap(700.0));
  EXPECT_EQ(QueryBound(BudgetParams{70.0, 10, 705.0}),
            static_cast<uint64_t>(std::floor(want)));
}

TEST(QueryBoundTest, MonotoneOverGrid) {
  const std::vector<double> eps_grid = {0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0};
  const std::vector<int> k_grid = {1, 2, 5, 10, 20, 50};
  const std::vector<double> total_grid = {0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0};
  for (int k : k_grid) {
    for (double total : total_grid) {
      for (size_t e = 1; e < eps_grid.size(); ++e) {
        EXPECT_LE(QueryBound({eps_grid[e], k, total}),
                  QueryBound({eps_grid[e - 1], k, total}));
      }
    }
  }
  for (double eps : eps_grid) {
    for (double total : total_grid) {
      for (size_t i = 1; i < k_grid.size(); ++i) {
        EXPECT_LE(QueryBound({eps, k_grid[i], total}),
                  QueryBound({eps, k_grid[i - 1], total}));
      }
    }
  }
  for (double eps : eps_grid) {
    for (int k : k_grid) {
      for (size_t t = 1; t < total_grid.size(); ++t) {
        EXPECT_GE(QueryBound({eps, k, total_grid[t]}),
                  QueryBound({eps, k, total_grid[t - 1]}));
      }
    }
  }
}

TEST(BudgetParamsTest, Validation) {
  EXPECT_FALSE((BudgetParams{0.0, 10, 1.0}).Validate().ok());
  EXPECT_FALSE((BudgetParams{0.1, 0, 1.0}).Validate().ok());
  EXPECT_FALSE((BudgetParams{0.1, 10, -1.0}).Validate().ok());
  EXPECT_FALSE(BudgetLedger::Create(BudgetParams{0.1, 10, NAN}).ok());
}

TEST(FingerprintTest, DeterministicAndSensitive) {
  EXPECT_EQ(DigestOf("record-1"), DigestOf("record-1"));
  EXPECT_NE(DigestOf("record-1"), DigestOf("record-2"));
  EXPECT_EQ(DigestOf("abc").Hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(FingerprintTest, EmptyRecordIsRejected) {
  EXPECT_EQ(Fingerprint(std::string_view()).status().code(),
            absl::StatusCode::kInvalidArgument);
}

TEST(FingerprintTest, HexRoundTrip) {
  const Digest d = DigestOf("x");
  EXPECT_EQ(*Digest::FromHex(d.Hex()), d);
  EXPECT_FALSE(Digest::FromHex("abc").ok());
  EXPECT_FALSE(Digest::FromHex(std::string(64, 'g')).ok());
}

TEST(CanonicalJsonTest, EquivalentSpellingsCollide) {
  const nlohmann::json a = nlohmann::json::parse(R"({"b": 1, "a": [0.5, 2e0]})");
  const nlohmann::json b = nlohmann::json::parse(R"({"a":[5e-1,2.0],"b":1.0})");
  EXPECT_EQ(CanonicalJson(a), CanonicalJson(b));
  EXPECT_EQ(CanonicalJson(a), R"({"a":[0.5,2],"b":1})");
}

TEST(CanonicalJsonTest, DistinctValuesStayDistinct) {
  const nlohmann::json a = nlohmann::json::parse(R"({"x": 0.1})");
  const nlohmann::json b = nlohmann::json::parse(R"({"x": 0.10000000000000002})");
  EXPECT_NE(CanonicalJson(a), CanonicalJson(b));
}

TEST(CanonicalJsonTest, RoundTripIsStable) {
  const nlohmann::json rec = nlohmann::json::parse(
      R"({"id":"r7","features":[0.1,0.2,0.30000000000000004],"meta":{"z":true,"a":null}})");
  const std::string once = CanonicalJson(rec);
  EXPECT_EQ(CanonicalJson(nlohmann::json::parse(once)), once);
}

TEST(BudgetLedgerTest, BoundOneAllowsOnce) {
  auto ledger = *BudgetLedger::Create(BudgetParams{0.1, 10, 1.0});
  ASSERT_EQ(ledger->bound(), 1u);
  const Digest d = DigestOf("r");
  const QueryOutcome first = ledger->RegisterQuery(d);
  EXPECT_TRUE(first.allowed);
  EXPECT_EQ(first.remaining, 0u);
  EXPECT_FALSE(ledger->RegisterQuery(d).allowed);
  EXPECT_EQ(ledger->Count(d), 1u);
  EXPECT_TRUE(ledger->RegisterQuery(DigestOf("other")).allowed);
}

TEST(BudgetLedgerTest, BoundZeroDeniesFirstCall) {
  auto ledger = *BudgetLedger::Create(BudgetParams{0.1, 10, 0.5});
  EXPECT_FALSE(ledger->RegisterQuery(DigestOf("r")).allowed);
  EXPECT_EQ(ledger->size(), 0u);
}

TEST(BudgetLedgerTest, RemainingCountsDown) {
  BudgetParams p{0.1, 10, 1.0};
  p.overall_epsilon = 2.0;
  auto ledger = *BudgetLedger::Create(p);
  const uint64_t b = ledger->bound();
  ASSERT_GT(b, 2u);
  const Digest d = DigestOf("r");
  for (uint64_t i = 1; i <= b; ++i) {
    const QueryOutcome out = ledger->RegisterQuery(d);
    ASSERT_TRUE(out.allowed);
    ASSERT_EQ(out.remaining, b - i);
    ASSERT_EQ(ledger->Remaining(d), b - i);
  }
  EXPECT_FALSE(ledger->RegisterQuery(d).allowed);
}

BudgetParams ParamsWithBound(uint64_t want) {
  // Search eps' upward from k * eps until the bound reaches `want`.
  BudgetParams p{0.1, 2, 0.2};
  double lo = 0.2;
  double hi = 50.0;
  for (int i = 0; i < 200; ++i) {
    p.overall_epsilon = 0.5 * (lo + hi);
    if (QueryBound(p) < want) lo = p.overall_epsilon;
    else hi = p.overall_epsilon;
  }
  p.overall_epsilon = hi;
  return p;
}

TEST(BudgetLedgerTest, ConcurrentCallsGrantExactlyTheBound) {
  const BudgetParams params = ParamsWithBound(100);
  auto ledger = *BudgetLedger::Create(params);
  ASSERT_EQ(ledger->bound(), 100u);
  const Digest d = DigestOf("hot-record");
  constexpr int kThreads = 50;
  constexpr int kCallsPerThread = 20;
  std::atomic<int> allowed{0};
  std::latch start(kThreads);
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&] {
      start.arrive_and_wait();
      for (int i = 0; i < kCallsPerThread; ++i) {
        if (ledger->RegisterQuery(d).allowed) ++allowed;
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(allowed.load(), 100);
  EXPECT_EQ(ledger->Count(d), 100u);
}

TEST(BudgetLedgerTest, SnapshotRoundTrip) {
  auto ledger = *BudgetLedger::Create(ParamsWithBound(5));
  for (int r = 0; r < 40; ++r) {
    for (int i = 0; i < r % 7; ++i) {
      ledger->RegisterQuery(DigestOf("rec" + std::to_string(r)));
    }
  }
  std::istringstream in(ledger->Snapshot());
  auto loaded = *BudgetLedger::Load(in);
  EXPECT_EQ(loaded->Snapshot(), ledger->Snapshot());
  EXPECT_EQ(loaded->bound(), ledger->bound());
  for (int r = 0; r < 40; ++r) {
    const Digest d = DigestOf("rec" + std::to_string(r));
    EXPECT_EQ(loaded->Count(d), ledger->Count(d));
  }
}

TEST(BudgetLedgerTest, SnapshotFormat) {
  auto ledger = *BudgetLedger::Create(BudgetParams{0.1, 10, 10.0});
  ledger->RegisterQuery(DigestOf("abc"));
  ledger->RegisterQuery(DigestOf("abc"));
  EXPECT_EQ(ledger->Snapshot(),
            "dpguard-ledger v1 per_access_epsilon=0.10000000000000001 "
            "num_classes=10 overall_epsilon=10 bound=128183\n"
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad 2\n");
}

TEST(BudgetLedgerTest, LoadRejectsTamperedHeader) {
  std::istringstream in(
      "dpguard-ledger v1 per_access_epsilon=0.1 num_classes=10 "
      "overall_epsilon=10 bound=999999\n");
  EXPECT_FALSE(BudgetLedger::Load(in).ok());
  std::istringstream empty("");
  EXPECT_FALSE(BudgetLedger::Load(empty).ok());
}

TEST(BudgetLedgerTest, PersistsAcrossReopen) {
  TempDir dir;
  const fs::path path = dir / "ledger.log";
  const BudgetParams params = ParamsWithBound(3);
  const Digest a = DigestOf("a");
  const Digest b = DigestOf("b");
  {
    auto ledger = *BudgetLedger::Open(params, path);
    EXPECT_TRUE(ledger->RegisterQuery(a).allowed);
    EXPECT_TRUE(ledger->RegisterQuery(a).allowed);
    EXPECT_TRUE(ledger->RegisterQuery(b).allowed);
  }
  auto reopened = *BudgetLedger::Open(params, path);
  EXPECT_EQ(reopened->Count(a), 2u);
  EXPECT_EQ(reopened->Count(b), 1u);
  EXPECT_TRUE(reopened->RegisterQuery(a).allowed);
  EXPECT_FALSE(reopened->RegisterQuery(a).allowed);
}

TEST(BudgetLedgerTest, GrantsAreOnDiskBeforeReturning) {
  TempDir dir;
  const fs::path path = dir / "ledger.log";
  const BudgetParams params = ParamsWithBound(3);
  auto ledger = *BudgetLedger::Open(params, path);
  ledger->RegisterQuery(DigestOf("a"));
  // A second process view of the file sees the grant without any close.
  auto view = *BudgetLedger::Open(params, path);
  EXPECT_EQ(view->Count(DigestOf("a")), 1u);
}

TEST(BudgetLedgerTest, ReopenWithOtherParamsFails) {
  TempDir dir;
  const fs::path path = dir / "ledger.log";
  { auto ledger = *BudgetLedger::Open(ParamsWithBound(3), path); }
  EXPECT_EQ(BudgetLedger::Open(ParamsWithBound(4), path).status().code(),
            absl::StatusCode::kFailedPrecondition);
}

TEST(BudgetLedgerTest, TornFinalLineIsIgnored) {
  TempDir dir;
  const fs::path path = dir / "ledger.log";
  const BudgetParams params = ParamsWithBound(3);
  const Digest a = DigestOf("a");
  {
    auto ledger = *BudgetLedger::Open(params, path);
    ledger->RegisterQuery(a);
  }
  {
    std::ofstream out(path, std::ios::app);
    out << a.Hex().substr(0, 20);
  }
  auto reopened = *BudgetLedger::Open(params, path);
  EXPECT_EQ(reopened->Count(a), 1u);
}

TEST(BudgetLedgerTest, CorruptMiddleLineIsDataLoss) {
  TempDir dir;
  const fs::path path = dir / "ledger.log";
  const BudgetParams params = ParamsWithBound(3);
  {
    auto ledger = *BudgetLedger::Open(params, path);
    ledger->RegisterQuery(DigestOf("a"));
  }
  {
    std::ofstream out(path, std::ios::app);
    out << "garbage\n" << DigestOf("b").Hex() << " 1\n";
  }
  EXPECT_EQ(BudgetLedger::Open(params, path).status().code(),
            absl::StatusCode::kDataLoss);
}

TEST(BudgetLedgerTest, LogIsCompacted) {
  TempDir dir;
  const fs::path path = dir / "ledger.log";
  const BudgetParams params = ParamsWithBound(5000);
  const Digest a = DigestOf("a");
  {
    auto ledger = *BudgetLedger::Open(params, path);
    for (int i = 0; i < 3000; ++i) ASSERT_TRUE(ledger->RegisterQuery(a).allowed);
  }
  std::ifstream in(path);
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  EXPECT_LT(lines, 1100);
  auto reopened = *BudgetLedger::Open(params, path);
  EXPECT_EQ(reopened->Count(a), 3000u);
}

}  // namespace
}  // namespace dpguard
