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

#ifndef DPGUARD_DPGUARD_H_
#define DPGUARD_DPGUARD_H_

#include "dpguard/accountant.h"
#include "dpguard/app.h"
#include "dpguard/attack_sim.h"
#include "dpguard/calibration.h"
#include "dpguard/confidence_vector.h"
#include "dpguard/mechanism.h"
#include "dpguard/record_io.h"
#include "dpguard/rng.h"

#endif  // DPGUARD_DPGUARD_H_
