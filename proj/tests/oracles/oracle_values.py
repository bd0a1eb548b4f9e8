#!/usr/bin/env python3
# Copyright 2026 The dpguard Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""High-precision reference values frozen into the C++ unit tests.

Evaluates each closed form directly with mpmath at 50 digits. Nothing here
calls into the C++ library.
"""

import mpmath as mp

mp.mp.dps = 50


def selection_probabilities(score, candidates, epsilon, floor):
    raw = [1 / max(abs(mp.mpf(score) - c), mp.mpf(floor)) for c in candidates]
    top = max(raw)
    weights = [mp.e ** (epsilon * (r / top) / 2) for r in raw]
    total = sum(weights)
    return [r / top for r in raw], [w / total for w in weights]


def main():
    cands = [mp.mpf(x) / 10 for x in range(5)]
    utils, probs = selection_probabilities(mp.mpf("0.2"), cands, 1, mp.mpf("0.01"))
    print("selection eps=1 utilities", [mp.nstr(u, 17) for u in utils])
    print("selection eps=1 probabilities", [mp.nstr(p, 17) for p in probs])
    _, probs = selection_probabilities(mp.mpf("0.2"), cands, 200, mp.mpf("0.01"))
    print("selection eps=200 mass on 0.2", mp.nstr(probs[2], 17))

    a, b = mp.e ** (2 * mp.mpf("0.4") / 2), mp.e ** (2 * mp.mpf("0.9") / 2)
    print("normalize <0.4,0.9> eps=2", mp.nstr(a / (a + b), 17), mp.nstr(b / (a + b), 17))

    eps_star = 2 * (mp.log(mp.mpf("0.7")) - mp.log(mp.mpf("0.3"))) / mp.mpf("0.5")
    print("epsilon star <0.3,0.7>/<0.4,0.9>", mp.nstr(eps_star, 17))

    def f(x):
        return x * mp.expm1(x)

    bound = f(mp.mpf(10)) / f(10 * mp.mpf("0.1"))
    print("query bound k=10 eps=0.1 eps'=10", mp.nstr(bound, 25), int(mp.floor(bound)))

    d = [mp.mpf("0.3") - mp.mpf("0.2"), mp.mpf("0.7") - mp.mpf("0.8")]
    print("distortion l1", mp.nstr(sum(abs(x) for x in d), 17),
          "l2", mp.nstr(mp.sqrt(sum(x * x for x in d)), 17))

    s = sorted([mp.mpf("0.6"), mp.mpf("0.1"), mp.mpf("0.3")])
    print("partition <0.6,0.1,0.3>", [0] + [mp.nstr((s[i] + s[i + 1]) / 2, 17) for i in range(2)] + [1])


if __name__ == "__main__":
    main()
