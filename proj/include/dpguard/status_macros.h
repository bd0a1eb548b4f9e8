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

#ifndef DPGUARD_STATUS_MACROS_H_
#define DPGUARD_STATUS_MACROS_H_

#include <utility>

#include "absl/status/status.h"
#include "absl/status/statusor.h"

#define DPGUARD_STATUS_CONCAT_INNER_(x, y) x##y
#define DPGUARD_STATUS_CONCAT_(x, y) DPGUARD_STATUS_CONCAT_INNER_(x, y)

// Returns early from the enclosing function if `expr` is not OK.
#define DPGUARD_RETURN_IF_ERROR(expr)        \
  do {                                       \
    const absl::Status _status = (expr);     \
    if (!_status.ok()) return _status;       \
  } while (0)

#define DPGUARD_ASSIGN_OR_RETURN_IMPL_(tmp, lhs, rexpr) \
  auto tmp = (rexpr);                                   \
  if (!tmp.ok()) return tmp.status();                   \
  lhs = std::move(tmp).value()

// Evaluates `rexpr` (a StatusOr) and assigns its value to `lhs`, or returns
// its status from the enclosing function.
#define DPGUARD_ASSIGN_OR_RETURN(lhs, rexpr) \
  DPGUARD_ASSIGN_OR_RETURN_IMPL_(            \
      DPGUARD_STATUS_CONCAT_(_statusor_, __LINE__), lhs, rexpr)

#endif  // DPGUARD_STATUS_MACROS_H_
