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
#include "schisto/equilibria.hpp"

#include <fmt/format.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace schisto {

namespace {

constexpr double kEigenThreshold = 1e-8;

void require_mammal_mortality(const ModelParams& params)
{
    for (const auto& s : params.species) {
        if (!(s.mu > 0.0)) {
            throw EquilibriumError("mu[" + s.name + "] must be positive for the disease-free mammal level");
        }
    }
}

void require_snail_persistence(const ModelParams& params)
{
    if (!(params.snail.alpha > params.snail.mu)) {
        throw EquilibriumError(fmt::format("alpha_s = {} <= mu_s = {}: snails die out and only DFE1 exists",
                                           params.snail.alpha, params.snail.mu));
    }
}

State mammal_free_state(const ModelParams& params)
{
    State x = State::Zero(params.dim());
    for (Eigen::Index j = 0; j < params.num_species(); ++j) {
        const auto& s = params.species[static_cast<std::size_t>(j)];
        x(layout::susceptible(j)) = s.alpha / s.mu;
    }
    return x;
}

EquilibriumReport finish_report(const ModelParams& params, EquilibriumKind kind, State state)
{
    EquilibriumReport report;
    report.kind = kind;
    report.residual = equilibrium_residual(params, state);
    report.state = std::move(state);
    const StabilityReport stability = classify_stability(params, report.state);
    report.stability = stability.label;
    report.max_real_eigenvalue = stability.max_real_eigenvalue;
    report.eigenvalues = stability.eigenvalues;
    return report;
}

double spectral_radius(const Eigen::MatrixXd& m)
{
    Eigen::EigenSolver<Eigen::MatrixXd> solver(m, false);
    if (solver.info() != Eigen::Success) {
        throw EquilibriumError("eigenvalue computation failed");
    }
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

// Endemic state as a function of the cercaria level L, from the stationarity
// of every equation except the total-snail balance.
struct EndemicProfile {
    const ModelParams& p;

    // sum_j omega_j M_{j,s}(L) + mu_l
    double larva_removal(double l) const
    {
        double d = p.free.mu_l;
        for (const auto& s : p.species) {
            d += s.omega * s.alpha / (s.omega * s.beta * l + s.mu);
        }
        return d;
    }

    // sum_j theta_j M_{j,i}(L) / L
    double egg_yield(double l) const
    {
        double q = 0.0;
        for (const auto& s : p.species) {
            q += s.omega * s.beta * s.theta * s.alpha / ((s.omega * s.beta * l + s.mu) * (s.mu + s.gamma));
        }
        return q;
    }

    double denominator(double l) const
    {
        const auto& sn = p.snail;
        return sn.nu * sn.beta * egg_yield(l) - (sn.mu + sn.gamma) * larva_removal(l);
    }

    double susceptible_snails(double l) const
    {
        const auto& sn = p.snail;
        return (sn.mu + sn.gamma) * larva_removal(l) * p.free.mu_e / (sn.omega * denominator(l));
    }

    double infected_snails(double l) const { return larva_removal(l) * l / p.snail.nu; }

    // Total snail balance; -inf past the pole where S_s(L) leaves the orthant.
    double balance(double l) const
    {
        if (!(denominator(l) > 0.0)) {
            return -std::numeric_limits<double>::infinity();
        }
        const auto& sn = p.snail;
        const double ss = susceptible_snails(l);
        const double si = infected_snails(l);
        const double total = ss + si;
        return sn.alpha * total * (1.0 - total / sn.kappa) - sn.mu * total - sn.gamma * si;
    }

    State state(double l) const
    {
        using namespace layout;
        State x(p.dim());
        const double ss = susceptible_snails(l);
        x(kSnailSusceptible) = ss;
        x(kSnailInfected) = infected_snails(l);
        x(kLarvae) = l;
        x(kEggs) = egg_yield(l) * l / (p.snail.omega * ss + p.free.mu_e);
        for (Eigen::Index j = 0; j < p.num_species(); ++j) {
            const auto& s = p.species[static_cast<std::size_t>(j)];
            const double uptake = s.omega * s.beta * l + s.mu;
            x(susceptible(j)) = s.alpha / uptake;
            x(infected(j)) = s.omega * s.beta * s.alpha * l / (uptake * (s.mu + s.gamma));
        }
        return x;
    }
};

// Newton on the full system; only used when the reconstruction misses the
// residual tolerance by rounding.
void newton_polish(const ModelParams& params, State& x)
{
    const ControlValue neutral = ControlValue::neutral(params.num_species());
    Eigen::MatrixXd jac;
    State f(x.size());
    for (int iter = 0; iter < 8; ++iter) {
        controlled_field(x, params, neutral, f);
        if (f.cwiseAbs().maxCoeff() <= 1e-3 * equilibrium_tolerance(x)) {
            return;
        }
        controlled_field_jacobian(x, params, neutral, jac);
        const State step = jac.fullPivLu().solve(f);
        if (!step.allFinite()) {
            return;
        }
        x -= step;
    }
}

} // namespace

std::string to_string(EquilibriumKind kind)
{
    switch (kind) {
    case EquilibriumKind::kDfe1:
        return "DFE1";
    case EquilibriumKind::kDfe2:
        return "DFE2";
    case EquilibriumKind::kEndemic:
        return "EE";
    }
    return "?";
}

std::string to_string(Stability stability)
{
    switch (stability) {
    case Stability::kStable:
        return "stable";
    case Stability::kUnstable:
        return "unstable";
    case Stability::kMarginal:
        return "marginal";
    }
    return "?";
}

double equilibrium_tolerance(const State& state)
{
    return 1e-8 * (1.0 + state.cwiseAbs().maxCoeff());
}

double equilibrium_residual(const ModelParams& params, const State& state)
{
    return rhs_uncontrolled(state, params).cwiseAbs().maxCoeff();
}

EquilibriumReport dfe1(const ModelParams& params)
{
    params.validate();
    require_mammal_mortality(params);
    return finish_report(params, EquilibriumKind::kDfe1, mammal_free_state(params));
}

EquilibriumReport dfe2(const ModelParams& params)
{
    params.validate();
    require_mammal_mortality(params);
    require_snail_persistence(params);
    State x = mammal_free_state(params);
    x(layout::kSnailSusceptible) = snail_capacity_level(params.snail);
    return finish_report(params, EquilibriumKind::kDfe2, std::move(x));
}

R0Report r0(const ModelParams& params)
{
    params.validate();
    require_mammal_mortality(params);
    require_snail_persistence(params);

    const auto& sn = params.snail;
    const auto& fr = params.free;
    const Eigen::Index m = params.num_species();
    const double s_star = snail_capacity_level(sn);

    double larva_uptake = 0.0;
    for (const auto& s : params.species) {
        larva_uptake += s.omega * s.alpha / s.mu;
    }
    const double egg_outflow = sn.omega * s_star + fr.mu_e;
    const double larva_outflow = larva_uptake + fr.mu_l;
    const double snail_factor = sn.omega * sn.beta * s_star / (sn.mu + sn.gamma);

    R0Report report;
    report.per_species_terms.resize(m);
    report.displayed_per_species_terms.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto& s = params.species[static_cast<std::size_t>(j)];
        const double mammal_factor = s.omega * s.beta * (s.alpha / s.mu) / (s.mu + s.gamma);
        report.displayed_per_species_terms(j) = mammal_factor * (s.theta / fr.mu_e) * snail_factor * (sn.nu / fr.mu_l);
        report.per_species_terms(j) = mammal_factor * s.theta * snail_factor * sn.nu / (egg_outflow * larva_outflow);
    }
    report.r0 = report.per_species_terms.sum();
    report.displayed_r0 = report.displayed_per_species_terms.sum();

    // Infected-compartment order: E, S_i, L, M_{1,i} .. M_{m,i}.
    const Eigen::Index k = 3 + m;
    report.ngm = Eigen::MatrixXd::Zero(k, k);
    report.ngm(1, 0) = sn.omega * sn.beta * s_star / egg_outflow;
    report.ngm(2, 1) = sn.nu / (sn.mu + sn.gamma);
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto& s = params.species[static_cast<std::size_t>(j)];
        report.ngm(3 + j, 2) = s.omega * s.beta * (s.alpha / s.mu) / larva_outflow;
        report.ngm(0, 3 + j) = s.theta / (s.mu + s.gamma);
    }
    report.ngm_spectral_radius = spectral_radius(report.ngm);

    report.displayed_ngm = Eigen::MatrixXd::Zero(k, k);
    report.displayed_ngm(0, 0) = -sn.omega * s_star / fr.mu_e;
    report.displayed_ngm(1, 0) = sn.omega * sn.beta * s_star / fr.mu_e;
    report.displayed_ngm(2, 1) = sn.nu / (sn.gamma + sn.mu);
    report.displayed_ngm(2, 2) = -larva_uptake / fr.mu_l;
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto& s = params.species[static_cast<std::size_t>(j)];
        report.displayed_ngm(0, 3 + j) = s.theta / (s.gamma + s.mu);
        report.displayed_ngm(3 + j, 2) = s.omega * s.beta * (s.alpha / s.mu) / fr.mu_l;
    }
    report.displayed_ngm_spectral_radius = spectral_radius(report.displayed_ngm);
    return report;
}

EquilibriumReport endemic_equilibrium(const ModelParams& params)
{
    const R0Report threshold = r0(params);
    if (!(threshold.r0 > 1.0)) {
        throw EquilibriumError(fmt::format("no endemic equilibrium: r0 = {:.6g} <= 1", threshold.r0));
    }

    const EndemicProfile profile{params};
    const double larva_ceiling = params.snail.nu * snail_capacity_level(params.snail) / params.free.mu_l;
    if (!(profile.balance(0.0) > 0.0)) {
        throw EquilibriumError("no endemic equilibrium found: snail balance is not positive at L = 0");
    }

    // Geometric scan down from the larva ceiling for the first sign change.
    constexpr int kScanPoints = 600;
    constexpr double kScanDecades = 40.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::quiet_NaN();
    for (int i = kScanPoints; i >= 0; --i) {
        const double l = larva_ceiling * std::pow(10.0, -kScanDecades * i / kScanPoints);
        if (profile.balance(l) > 0.0) {
            lo = l;
        } else {
            hi = l;
            break;
        }
    }
    if (!std::isfinite(hi)) {
        throw EquilibriumError(fmt::format(
            "no endemic equilibrium found: no sign change of the snail balance on (0, {:.6g}]", larva_ceiling));
    }

    while (true) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) {
            break;
        }
        (profile.balance(mid) > 0.0 ? lo : hi) = mid;
    }
    double root = lo;
    const double g_lo = profile.balance(lo);
    const double g_hi = profile.balance(hi);
    if (std::isfinite(g_hi) && g_lo != g_hi) {
        const double secant = lo - g_lo * (hi - lo) / (g_hi - g_lo);
        if (secant >= lo && secant <= hi) {
            root = secant;
        }
    }

    State x = profile.state(root);
    if (equilibrium_residual(params, x) > equilibrium_tolerance(x)) {
        newton_polish(params, x);
    }
    const double residual = equilibrium_residual(params, x);
    if (!(x.array() > 0.0).all() || residual > equilibrium_tolerance(x)) {
        throw EquilibriumError(fmt::format("endemic equilibrium at L = {:.17g} is inconsistent: residual {:.3g}", root,
                                           residual));
    }
    return finish_report(params, EquilibriumKind::kEndemic, std::move(x));
}

Eigen::MatrixXd numerical_jacobian(const ModelParams& params, const State& state)
{
    const Eigen::Index n = state.size();
    Eigen::MatrixXd jac(n, n);
    State probe = state;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double delta = 1e-6 * (1.0 + std::abs(state(i)));
        probe(i) = state(i) + delta;
        const State plus = rhs_uncontrolled(probe, params);
        probe(i) = state(i) - delta;
        const State minus = rhs_uncontrolled(probe, params);
        probe(i) = state(i);
        jac.col(i) = (plus - minus) / (2.0 * delta);
    }
    return jac;
}

StabilityReport classify_stability(const ModelParams& params, const State& state)
{
    const double residual = equilibrium_residual(params, state);
    if (residual > equilibrium_tolerance(state)) {
        throw EquilibriumError(fmt::format("state is not an equilibrium: residual {:.3g}", residual));
    }
    Eigen::EigenSolver<Eigen::MatrixXd> solver(numerical_jacobian(params, state), false);
    if (solver.info() != Eigen::Success) {
        throw EquilibriumError("eigenvalue computation failed");
    }
    StabilityReport report;
    report.eigenvalues = solver.eigenvalues();
    report.max_real_eigenvalue = report.eigenvalues.real().maxCoeff();
    if (report.max_real_eigenvalue > kEigenThreshold) {
        report.label = Stability::kUnstable;
    } else if (report.max_real_eigenvalue < -kEigenThreshold) {
        report.label = Stability::kStable;
    } else {
        report.label = Stability::kMarginal;
    }
    return report;
}

} // namespace schisto
