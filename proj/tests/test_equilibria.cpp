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
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "draws.hpp"
#include "oracle.hpp"
#include "schisto/equilibria.hpp"
#include "schisto/model.hpp"
#include "schisto/ode.hpp"

using namespace schisto;

namespace {

ModelParams one_species()
{
    ModelParams p = default_params();
    p.species.resize(1);
    return p;
}

/// Cycle product with uptake counted as removal, written out directly.
double cycle_r0(const ModelParams& p)
{
    const auto& sn = p.snail;
    const double s_star = sn.kappa * (sn.alpha - sn.mu) / sn.alpha;
    double uptake = p.free.mu_l;
    for (const auto& s : p.species) {
        uptake += s.omega * s.alpha / s.mu;
    }
    const double snail_part = sn.omega * sn.beta * s_star / (sn.omega * s_star + p.free.mu_e) * sn.nu / (sn.mu + sn.gamma);
    double total = 0.0;
    for (const auto& s : p.species) {
        total += s.omega * s.beta * (s.alpha / s.mu) / uptake * s.theta / (s.mu + s.gamma) * snail_part;
    }
    return total;
}

double displayed_r0(const ModelParams& p)
{
    const auto& sn = p.snail;
    const double s_star = sn.kappa * (sn.alpha - sn.mu) / sn.alpha;
    double total = 0.0;
    for (const auto& s : p.species) {
        total += s.omega * s.beta * (s.alpha / s.mu) / (s.mu + s.gamma) * s.theta / p.free.mu_e * sn.omega * sn.beta *
                 s_star / (sn.mu + sn.gamma) * sn.nu / p.free.mu_l;
    }
    return total;
}

Trajectory simulate(const ModelParams& p, const State& x0, double t_end, double dt)
{
    const ControlValue u = ControlValue::neutral(p.num_species());
    IntegratorOptions o;
    o.jacobian = [&](const Eigen::VectorXd& x, double, Eigen::MatrixXd& jac) { controlled_field_jacobian(x, p, u, jac); };
    return integrate_forward([&](const Eigen::VectorXd& x, double, Eigen::VectorXd& dx) { controlled_field(x, p, u, dx); },
                             x0, TimeGrid::uniform(0.0, t_end, dt), o);
}

double max_relative_gap(const Eigen::VectorXd& x, const Eigen::VectorXd& ref)
{
    return ((x - ref).array().abs() / ref.array().abs()).maxCoeff();
}

} // namespace

TEST_CASE("first disease-free equilibrium")
{
    const ModelParams one = one_species();
    const EquilibriumReport r = dfe1(one);
    CHECK(r.kind == EquilibriumKind::kDfe1);
    CHECK(r.state(layout::susceptible(0)) == doctest::Approx(71.03).epsilon(1e-3));
    CHECK(r.residual == 0.0);
    for (Eigen::Index i = 0; i < 4; ++i) {
        CHECK(r.state(i) == 0.0);
    }

    ModelParams none = default_params();
    none.species[0].alpha = 0.0;
    const EquilibriumReport z = dfe1(none);
    CHECK(z.state(layout::susceptible(0)) == 0.0);
    CHECK(z.state(layout::infected(0)) == 0.0);

    const ModelParams p = default_params();
    const EquilibriumReport two = dfe1(p);
    for (Eigen::Index j = 0; j < 2; ++j) {
        const auto& s = p.species[static_cast<std::size_t>(j)];
        CHECK(two.state(layout::susceptible(j)) == s.alpha / s.mu);
        CHECK(two.state(layout::infected(j)) == 0.0);
    }

    ModelParams bad = p;
    bad.species[1].mu = 0.0;
    CHECK_THROWS_AS(dfe1(bad), EquilibriumError);
}

TEST_CASE("second disease-free equilibrium")
{
    const ModelParams p = default_params();
    const EquilibriumReport r = dfe2(p);
    CHECK(r.state(layout::kSnailSusceptible) == doctest::Approx(16420.7).epsilon(1e-5));
    CHECK(r.residual <= equilibrium_tolerance(r.state));
    CHECK(oracle::rhs(r.state, p).cwiseAbs().maxCoeff() <= 1e-8 * (1.0 + r.state.cwiseAbs().maxCoeff()));

    ModelParams half = p;
    half.snail.alpha = 2.0 * half.snail.mu;
    CHECK(dfe2(half).state(layout::kSnailSusceptible) == doctest::Approx(half.snail.kappa / 2.0).epsilon(1e-15));

    ModelParams dying = p;
    dying.snail.alpha = 0.5 * dying.snail.mu;
    CHECK_THROWS_AS(dfe2(dying), EquilibriumError);
    CHECK_THROWS_AS(r0(dying), EquilibriumError);
}

TEST_CASE("reproduction number at the reference table")
{
    const ModelParams p = default_params();
    const R0Report r = r0(p);
    CHECK(r.r0 == doctest::Approx(cycle_r0(p)).epsilon(1e-12));
    CHECK(r.r0 == doctest::Approx(124.837).epsilon(1e-5));
    CHECK(r.per_species_terms.sum() == doctest::Approx(r.r0).epsilon(1e-12));
    CHECK(std::pow(r.ngm_spectral_radius, 4) == doctest::Approx(r.r0).epsilon(1e-9));
    const oracle::NextGeneration ng = oracle::next_generation(p);
    CHECK(r.ngm_spectral_radius == doctest::Approx(ng.spectral_radius).epsilon(1e-7));
    CHECK(r.displayed_r0 == doctest::Approx(displayed_r0(p)).epsilon(1e-12));
    CHECK(r.displayed_per_species_terms.sum() == doctest::Approx(r.displayed_r0).epsilon(1e-12));
}

TEST_CASE("unit factors give a threshold value of one")
{
    ModelParams p = one_species();
    auto& sn = p.snail;
    auto& s = p.species[0];
    const double s_star = sn.kappa * (sn.alpha - sn.mu) / sn.alpha;
    const double m_star = s.alpha / s.mu;
    s.beta = (s.mu + s.gamma) / (s.omega * m_star);
    sn.beta = (sn.mu + sn.gamma) / (sn.omega * s_star);

    SUBCASE("displayed expression")
    {
        s.theta = p.free.mu_e;
        sn.nu = p.free.mu_l;
        CHECK(r0(p).displayed_r0 == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("uptake counted as removal")
    {
        s.theta = sn.omega * s_star + p.free.mu_e;
        sn.nu = s.omega * m_star + p.free.mu_l;
        const R0Report r = r0(p);
        CHECK(r.r0 == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(r.ngm_spectral_radius == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("reproduction number is linear in an infection probability")
{
    ModelParams p = one_species();
    const R0Report before = r0(p);
    p.species[0].beta *= 2.0;
    const R0Report after = r0(p);
    CHECK(after.r0 == doctest::Approx(2.0 * before.r0).epsilon(1e-14));
    CHECK(after.displayed_r0 == doctest::Approx(2.0 * before.displayed_r0).epsilon(1e-14));
}

TEST_CASE("threshold agreement with the next-generation oracle")
{
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        ModelParams p = draws::scaled_params(rng);
        draws::set_r0(p, draws::log_uniform(rng, 0.1, 10.0));
        const R0Report r = r0(p);
        const double rho = oracle::next_generation(p).spectral_radius;
        CHECK((r.r0 - 1.0) * (rho - 1.0) > 0.0);
        CHECK((r.ngm_spectral_radius - 1.0) * (rho - 1.0) > 0.0);
    }
}

TEST_CASE("monotonicity of the reproduction number")
{
    std::mt19937_64 rng(22);
    const auto bump = [](ModelParams p, const std::function<void(ModelParams&)>& change) {
        change(p);
        return r0(p).r0;
    };
    for (int trial = 0; trial < 10; ++trial) {
        const ModelParams p = draws::scaled_params(rng);
        const double base = r0(p).r0;
        const double f = 1.01;
        CHECK(bump(p, [&](ModelParams& q) { q.snail.nu *= f; }) >= base);
        CHECK(bump(p, [&](ModelParams& q) { q.snail.beta *= f; }) >= base);
        CHECK(bump(p, [&](ModelParams& q) { q.snail.omega *= f; }) >= base);
        CHECK(bump(p, [&](ModelParams& q) { q.free.mu_e *= f; }) <= base);
        CHECK(bump(p, [&](ModelParams& q) { q.free.mu_l *= f; }) <= base);
        CHECK(bump(p, [&](ModelParams& q) { q.snail.gamma *= f; }) <= base);
        for (std::size_t j = 0; j < p.species.size(); ++j) {
            CHECK(bump(p, [&](ModelParams& q) { q.species[j].beta *= 0.99; }) <= base);
            CHECK(bump(p, [&](ModelParams& q) { q.species[j].theta *= f; }) >= base);
            CHECK(bump(p, [&](ModelParams& q) { q.species[j].gamma *= f; }) <= base);
        }
        ModelParams single = p;
        single.species.resize(1);
        const double single_base = r0(single).r0;
        CHECK(bump(single, [](ModelParams& q) { q.species[0].omega *= 1.01; }) >= single_base);
    }
    // With several species, more contact by a weak host diverts cercariae
    // from a strong one; the displayed expression ignores that uptake.
    const ModelParams p = default_params();
    ModelParams more_contact = p;
    more_contact.species[0].omega *= 1.01;
    CHECK(r0(more_contact).r0 < r0(p).r0);
    CHECK(r0(more_contact).displayed_r0 > r0(p).displayed_r0);
}

TEST_CASE("endemic equilibrium at the reference table")
{
    const ModelParams p = default_params();
    const EquilibriumReport ee = endemic_equilibrium(p);
    CHECK(ee.kind == EquilibriumKind::kEndemic);
    CHECK((ee.state.array() > 0.0).all());
    CHECK(ee.residual <= 1e-8 * (1.0 + ee.state.cwiseAbs().maxCoeff()));
    CHECK(oracle::rhs(ee.state, p).cwiseAbs().maxCoeff() <= 1e-8 * (1.0 + ee.state.cwiseAbs().maxCoeff()));
    CHECK(ee.stability == Stability::kStable);
    CHECK(dfe1(p).stability == Stability::kUnstable);
    CHECK(dfe2(p).stability == Stability::kUnstable);
}

TEST_CASE("no endemic equilibrium below threshold")
{
    ModelParams p = default_params();
    draws::set_r0(p, 0.8);
    CHECK_THROWS_AS(endemic_equilibrium(p), EquilibriumError);
    CHECK(dfe2(p).stability == Stability::kStable);
}

TEST_CASE("stability regimes on random draws")
{
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 5; ++trial) {
        ModelParams dying = draws::scaled_params(rng);
        dying.snail.alpha = dying.snail.mu * draws::log_uniform(rng, 0.2, 0.9);
        CHECK(classify_stability(dying, dfe1(dying).state).label == Stability::kStable);

        ModelParams low = draws::scaled_params(rng);
        draws::set_r0(low, draws::log_uniform(rng, 0.05, 0.8));
        CHECK(classify_stability(low, dfe2(low).state).label == Stability::kStable);

        ModelParams high = draws::scaled_params(rng);
        draws::set_r0(high, draws::log_uniform(rng, 2.0, 200.0));
        CHECK(classify_stability(high, dfe2(high).state).label == Stability::kUnstable);
        const EquilibriumReport ee = endemic_equilibrium(high);
        CHECK(ee.residual <= 1e-8 * (1.0 + ee.state.cwiseAbs().maxCoeff()));
        CHECK(ee.stability == Stability::kStable);
    }
}

TEST_CASE("stability needs an equilibrium")
{
    const ModelParams p = default_params();
    CHECK_THROWS_AS(classify_stability(p, State::Ones(p.dim())), EquilibriumError);
}

TEST_CASE("numerical Jacobian matches the analytic one at equilibria")
{
    const ModelParams p = default_params();
    for (const State& x : {dfe2(p).state, endemic_equilibrium(p).state}) {
        Eigen::MatrixXd analytic;
        controlled_field_jacobian(x, p, ControlValue::neutral(p.num_species()), analytic);
        const Eigen::MatrixXd numeric = numerical_jacobian(p, x);
        CHECK((numeric - analytic).cwiseAbs().maxCoeff() <= 1e-6 * (1.0 + analytic.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("endemic equilibrium persists over ten slowest lifetimes")
{
    const ModelParams p = default_params();
    const State ee = endemic_equilibrium(p).state;
    double slowest = std::min({p.snail.mu, p.free.mu_e, p.free.mu_l});
    for (const auto& s : p.species) {
        slowest = std::min(slowest, s.mu);
    }
    const double horizon = 10.0 / slowest;
    const double dt = 1000.0;
    const Trajectory t = simulate(p, ee, dt * std::ceil(horizon / dt), dt);
    double worst = 0.0;
    for (Eigen::Index k = 0; k < t.values.cols(); ++k) {
        worst = std::max(worst, max_relative_gap(t.values.col(k), ee));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("perturbed starts return to the endemic equilibrium")
{
    const ModelParams p = default_params();
    const State ee = endemic_equilibrium(p).state;
    std::mt19937_64 rng(24);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    for (int trial = 0; trial < 3; ++trial) {
        State x0 = ee;
        for (Eigen::Index i = 0; i < x0.size(); ++i) {
            x0(i) *= 1.0 + u(rng);
        }
        const Trajectory t = simulate(p, x0, 2.0e6, 50.0);
        CHECK(max_relative_gap(t.final(), ee) <= 1e-3);
    }
}
