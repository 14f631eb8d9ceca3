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
#include "schisto/model.hpp"

#include <algorithm>
#include <cmath>

namespace schisto {

namespace {

void require_rate(double value, const std::string& what)
{
    if (!std::isfinite(value) || value < 0.0) {
        throw ModelError(what + " must be a finite non-negative rate, got " + std::to_string(value));
    }
}

void require_probability(double value, const std::string& what)
{
    if (!std::isfinite(value) || value < 0.0 || value > 1.0) {
        throw ModelError(what + " must lie in [0, 1], got " + std::to_string(value));
    }
}

void require_finite_state(const State& state, const ModelParams& params)
{
    if (state.size() != params.dim()) {
        throw ModelError("state has dimension " + std::to_string(state.size()) + ", expected " +
                         std::to_string(params.dim()));
    }
    for (Eigen::Index i = 0; i < state.size(); ++i) {
        if (!std::isfinite(state(i))) {
            throw ModelError("state component " + component_names(params)[static_cast<std::size_t>(i)] +
                             " is not finite");
        }
    }
}

} // namespace

bool ModelParams::any_controlled() const
{
    return std::any_of(species.begin(), species.end(), [](const SpeciesParams& s) { return s.controlled; });
}

void ModelParams::validate() const
{
    if (species.empty()) {
        throw ModelError("at least one mammal species is required");
    }
    require_rate(snail.alpha, "alpha_s");
    require_rate(snail.mu, "mu_s");
    require_rate(snail.gamma, "gamma_s");
    require_rate(snail.omega, "omega_s");
    require_rate(snail.nu, "nu_s");
    require_probability(snail.beta, "beta_s");
    if (!std::isfinite(snail.kappa) || snail.kappa <= 0.0) {
        throw ModelError("kappa_s must be positive");
    }
    if (!std::isfinite(free.mu_e) || free.mu_e <= 0.0) {
        throw ModelError("mu_e must be positive");
    }
    if (!std::isfinite(free.mu_l) || free.mu_l <= 0.0) {
        throw ModelError("mu_l must be positive");
    }
    for (const auto& s : species) {
        require_rate(s.alpha, "alpha[" + s.name + "]");
        require_rate(s.mu, "mu[" + s.name + "]");
        require_rate(s.theta, "theta[" + s.name + "]");
        require_rate(s.gamma, "gamma[" + s.name + "]");
        require_rate(s.omega, "omega[" + s.name + "]");
        require_probability(s.beta, "beta[" + s.name + "]");
    }
}

ModelParams default_params()
{
    ModelParams p;
    p.snail = SnailParams{.alpha = 0.06886,
                          .mu = 0.0035,
                          .kappa = 17300.0,
                          .gamma = 0.016,
                          .beta = 1e-4,
                          .omega = 1.17617,
                          .nu = 0.20865};
    p.free = FreeStageParams{.mu_e = 0.38527, .mu_l = 0.23407};
    p.species = {
        SpeciesParams{.name = "human",
                      .alpha = 0.00278,
                      .mu = 3.914e-5,
                      .theta = 250.0,
                      .gamma = 0.00898,
                      .beta = 0.01591,
                      .omega = 0.19972,
                      .controlled = true},
        SpeciesParams{.name = "bovine",
                      .alpha = 8.235e-8,
                      .mu = 1.218e-7,
                      .theta = 104750.0,
                      .gamma = 0.00486,
                      .beta = 0.47124,
                      .omega = 0.24692,
                      .controlled = true},
    };
    return p;
}

std::vector<std::string> component_names(const ModelParams& params)
{
    std::vector<std::string> names{"E", "S_s", "S_i", "L"};
    for (const auto& s : params.species) {
        names.push_back("M_s_" + s.name);
        names.push_back("M_i_" + s.name);
    }
    return names;
}

ControlValue ControlValue::neutral(Eigen::Index num_species)
{
    ControlValue u;
    u.u_m = Eigen::VectorXd::Zero(num_species);
    return u;
}

void validate_control(const ControlValue& u, const ModelParams& params)
{
    if (u.u_m.size() != params.num_species()) {
        throw ModelError("control has " + std::to_string(u.u_m.size()) + " treatment entries, expected " +
                         std::to_string(params.num_species()));
    }
    require_rate(u.u_a, "u_a");
    require_rate(u.u_s, "u_s");
    if (!std::isfinite(u.u_k) || u.u_k <= 0.0) {
        throw ModelError("u_k must be positive: the reduced capacity kappa_s/u_k is undefined for u_k = " +
                         std::to_string(u.u_k));
    }
    for (Eigen::Index j = 0; j < u.u_m.size(); ++j) {
        const auto& s = params.species[static_cast<std::size_t>(j)];
        require_rate(u.u_m(j), "u_m[" + s.name + "]");
        if (!s.controlled && u.u_m(j) != 0.0) {
            throw ModelError("species " + s.name + " is not controlled but has a treatment rate");
        }
    }
}

void controlled_field_jacobian(const Eigen::Ref<const Eigen::VectorXd>& x, const ModelParams& p,
                               const ControlValue& u, Eigen::MatrixXd& jac)
{
    using namespace layout;
    const auto& sn = p.snail;
    const Eigen::Index n = p.dim();
    jac.setZero(n, n);

    const double e = x(kEggs);
    const double ss = x(kSnailSusceptible);
    const double l = x(kLarvae);
    const double snails = ss + x(kSnailInfected);
    const double logistic_slope = sn.alpha * (1.0 - 2.0 * u.u_k * snails / sn.kappa);

    double larva_uptake = 0.0;
    for (Eigen::Index j = 0; j < p.num_species(); ++j) {
        larva_uptake += p.species[static_cast<std::size_t>(j)].omega * x(susceptible(j));
    }

    jac(kEggs, kEggs) = -sn.omega * ss - p.free.mu_e - u.u_a;
    jac(kEggs, kSnailSusceptible) = -sn.omega * e;

    jac(kSnailSusceptible, kEggs) = -sn.omega * sn.beta * ss;
    jac(kSnailSusceptible, kSnailSusceptible) = -sn.omega * sn.beta * e + logistic_slope - sn.mu - u.u_s;
    jac(kSnailSusceptible, kSnailInfected) = logistic_slope;

    jac(kSnailInfected, kEggs) = sn.omega * sn.beta * ss;
    jac(kSnailInfected, kSnailSusceptible) = sn.omega * sn.beta * e;
    jac(kSnailInfected, kSnailInfected) = -sn.mu - sn.gamma - u.u_s;

    jac(kLarvae, kSnailInfected) = sn.nu;
    jac(kLarvae, kLarvae) = -larva_uptake - p.free.mu_l - u.u_a;

    for (Eigen::Index j = 0; j < p.num_species(); ++j) {
        const auto& s = p.species[static_cast<std::size_t>(j)];
        const Eigen::Index is = susceptible(j);
        const Eigen::Index ii = infected(j);
        const double contact = s.omega * s.beta;
        jac(kEggs, ii) = s.theta;
        jac(kLarvae, is) = -s.omega * l;
        jac(is, kLarvae) = -contact * x(is);
        jac(is, is) = -contact * l - s.mu;
        jac(ii, kLarvae) = contact * x(is);
        jac(ii, is) = contact * l;
        jac(ii, ii) = -(s.mu + s.gamma) - u.u_m(j);
    }
}

State rhs_uncontrolled(const State& state, const ModelParams& params)
{
    require_finite_state(state, params);
    State out(state.size());
    controlled_field(state, params, ControlValue::neutral(params.num_species()), out);
    return out;
}

State rhs_controlled(const State& state, const ModelParams& params, const ControlValue& u)
{
    require_finite_state(state, params);
    validate_control(u, params);
    State out(state.size());
    controlled_field(state, params, u, out);
    return out;
}

double snail_capacity_level(const SnailParams& snail)
{
    if (snail.alpha <= snail.mu) {
        return 0.0;
    }
    return snail.kappa * (snail.alpha - snail.mu) / snail.alpha;
}

DomainBounds domain_bounds(const ModelParams& params, const State& initial)
{
    using namespace layout;
    if (initial.size() != params.dim()) {
        throw ModelError("initial state has the wrong dimension");
    }
    if (params.free.mu_e <= 0.0 || params.free.mu_l <= 0.0) {
        throw ModelError("mu_e and mu_l must be positive for the egg and larva bounds");
    }

    DomainBounds b;
    b.mammals.resize(params.num_species());
    double egg_source = 0.0;
    for (Eigen::Index j = 0; j < params.num_species(); ++j) {
        const auto& s = params.species[static_cast<std::size_t>(j)];
        if (s.mu <= 0.0) {
            throw ModelError("mu[" + s.name + "] must be positive for the mammal bound");
        }
        const double m0 = initial(susceptible(j)) + initial(infected(j));
        b.mammals(j) = std::max(s.alpha / s.mu, m0);
        egg_source += s.theta * b.mammals(j);
    }
    const double s0 = initial(kSnailSusceptible) + initial(kSnailInfected);
    b.snails = std::max(snail_capacity_level(params.snail), s0);
    b.eggs = std::max(egg_source / params.free.mu_e, initial(kEggs));
    b.larvae = std::max(params.snail.nu * b.snails / params.free.mu_l, initial(kLarvae));
    return b;
}

bool check_in_domain(const State& state, const DomainBounds& bounds, double rel_slack)
{
    using namespace layout;
    if ((state.array() < 0.0).any() || !state.allFinite()) {
        return false;
    }
    const auto within = [rel_slack](double value, double bound) {
        return value <= bound + rel_slack * std::max(1.0, bound);
    };
    if (!within(state(kEggs), bounds.eggs) || !within(state(kLarvae), bounds.larvae) ||
        !within(state(kSnailSusceptible) + state(kSnailInfected), bounds.snails)) {
        return false;
    }
    for (Eigen::Index j = 0; j < bounds.mammals.size(); ++j) {
        if (!within(state(susceptible(j)) + state(infected(j)), bounds.mammals(j))) {
            return false;
        }
    }
    return true;
}

} // namespace schisto
