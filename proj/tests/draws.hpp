/*
 * Copyright (C) 2026 The schisto-oc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
// Random parameter draws shared by the property tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "schisto/equilibria.hpp"
#include "schisto/model.hpp"

namespace draws {

/// Every rate of the reference table scaled by a log-uniform factor in
/// [1/spread, spread]; probabilities capped at 1.
inline schisto::ModelParams scaled_params(std::mt19937_64& rng, double spread = 2.0)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const auto f = [&] { return std::pow(spread, u(rng)); };
    schisto::ModelParams p = schisto::default_params();
    auto& sn = p.snail;
    sn.alpha *= f();
    sn.mu *= f();
    sn.kappa *= f();
    sn.gamma *= f();
    sn.beta = std::min(1.0, sn.beta * f());
    sn.omega *= f();
    sn.nu *= f();
    p.free.mu_e *= f();
    p.free.mu_l *= f();
    for (auto& s : p.species) {
        s.alpha *= f();
        s.mu *= f();
        s.theta *= f();
        s.gamma *= f();
        s.beta = std::min(1.0, s.beta * f());
        s.omega *= f();
    }
    return p;
}

/// Rescales nu_s, on which r0 depends linearly, so that r0 equals `target`.
inline void set_r0(schisto::ModelParams& p, double target)
{
    p.snail.nu *= target / schisto::r0(p).r0;
}

inline double log_uniform(std::mt19937_64& rng, double lo, double hi)
{
    std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
    return std::exp(u(rng));
}

} // namespace draws
