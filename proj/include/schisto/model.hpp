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
#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "schisto/error.hpp"

namespace schisto {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Parameters of one definitive-host (mammal) species.
///
/// `alpha` is a constant recruitment inflow in individuals/day, so the
/// infection-free population settles at alpha/mu. The source table quotes the
/// same numbers as per-capita "birth rates"; they are used here as inflows.
struct SpeciesParams {
    std::string name;
    double alpha = 0.0; ///< recruitment (individuals/day)
    double mu = 0.0;    ///< natural death rate (1/day)
    double theta = 0.0; ///< egg output per infected individual (eggs/day)
    double gamma = 0.0; ///< disease-induced death rate (1/day)
    double beta = 0.0;  ///< infection probability per contact
    double omega = 0.0; ///< contact rate with cercariae (1/day per larva)
    bool controlled = false;
};

struct SnailParams {
    double alpha = 0.0; ///< birth rate (1/day)
    double mu = 0.0;    ///< natural death rate (1/day)
    double kappa = 1.0; ///< carrying capacity
    double gamma = 0.0; ///< disease-induced death rate (1/day)
    double beta = 0.0;  ///< infection probability per egg contact
    double omega = 0.0; ///< contact rate with eggs (1/day per egg)
    double nu = 0.0;    ///< cercaria shedding per infected snail (1/day)
};

struct FreeStageParams {
    double mu_e = 1.0; ///< egg death rate (1/day)
    double mu_l = 1.0; ///< cercaria death rate (1/day)
};

struct ModelParams {
    SnailParams snail;
    FreeStageParams free;
    std::vector<SpeciesParams> species;

    Eigen::Index num_species() const { return static_cast<Eigen::Index>(species.size()); }
    Eigen::Index dim() const { return 2 * num_species() + 4; }
    bool any_controlled() const;

    /// Throws ModelError on negative rates, probabilities outside [0, 1],
    /// non-positive kappa, mu_e or mu_l, or an empty species list.
    void validate() const;
};

/// Appendix-table values; species are ordered human, bovine (carabao).
ModelParams default_params();

/// Flat state ordering shared by every module:
/// E, S_s, S_i, L, then (M_{j,s}, M_{j,i}) for each species in declaration order.
namespace layout {
inline constexpr Eigen::Index kEggs = 0;
inline constexpr Eigen::Index kSnailSusceptible = 1;
inline constexpr Eigen::Index kSnailInfected = 2;
inline constexpr Eigen::Index kLarvae = 3;
constexpr Eigen::Index susceptible(Eigen::Index j) { return 4 + 2 * j; }
constexpr Eigen::Index infected(Eigen::Index j) { return 5 + 2 * j; }
} // namespace layout

using State = Eigen::VectorXd;

/// Column labels in layout order, e.g. E,S_s,S_i,L,M_s_human,M_i_human.
std::vector<std::string> component_names(const ModelParams& params);

/// Control channels at one instant. `u_k` divides the snail carrying capacity,
/// so its neutral value is 1. `u_m` holds one treatment rate per species and
/// must be zero for species that are not controlled.
struct ControlValue {
    double u_a = 0.0;
    double u_s = 0.0;
    double u_k = 1.0;
    Eigen::VectorXd u_m;

    static ControlValue neutral(Eigen::Index num_species);
};

void validate_control(const ControlValue& u, const ModelParams& params);

/// Right-hand side of the controlled system written into `out`. Works for any
/// floating scalar; no validation (see rhs_controlled for the checked entry).
template <typename Derived, typename OutDerived>
void controlled_field(const Eigen::MatrixBase<Derived>& x, const ModelParams& p, const ControlValue& u,
                      const Eigen::MatrixBase<OutDerived>& out_)
{
    using Scalar = typename Derived::Scalar;
    using namespace layout;
    auto& dx = const_cast<Eigen::MatrixBase<OutDerived>&>(out_);
    const auto& sn = p.snail;

    const Scalar e = x(kEggs);
    const Scalar ss = x(kSnailSusceptible);
    const Scalar si = x(kSnailInfected);
    const Scalar l = x(kLarvae);
    const Scalar snails = ss + si;

    Scalar egg_input(0);
    Scalar larva_uptake(0);
    for (Eigen::Index j = 0; j < p.num_species(); ++j) {
        const auto& s = p.species[static_cast<std::size_t>(j)];
        egg_input += Scalar(s.theta) * x(infected(j));
        larva_uptake += Scalar(s.omega) * x(susceptible(j));
    }

    const Scalar egg_contact = Scalar(sn.omega) * ss * e;
    const Scalar snail_infection = Scalar(sn.beta) * egg_contact;
    const Scalar capacity = Scalar(sn.kappa) / Scalar(u.u_k);

    dx(kEggs) = egg_input - egg_contact - Scalar(p.free.mu_e) * e - Scalar(u.u_a) * e;
    dx(kSnailSusceptible) = -snail_infection + Scalar(sn.alpha) * snails * (Scalar(1) - snails / capacity) -
                            Scalar(sn.mu) * ss - Scalar(u.u_s) * ss;
    dx(kSnailInfected) = snail_infection - Scalar(sn.mu + sn.gamma) * si - Scalar(u.u_s) * si;
    dx(kLarvae) = Scalar(sn.nu) * si - larva_uptake * l - Scalar(p.free.mu_l) * l - Scalar(u.u_a) * l;

    for (Eigen::Index j = 0; j < p.num_species(); ++j) {
        const auto& s = p.species[static_cast<std::size_t>(j)];
        const Scalar ms = x(susceptible(j));
        const Scalar mi = x(infected(j));
        const Scalar infection = Scalar(s.omega * s.beta) * l * ms;
        dx(susceptible(j)) = -infection + Scalar(s.alpha) - Scalar(s.mu) * ms;
        dx(infected(j)) = infection - Scalar(s.mu + s.gamma) * mi - Scalar(u.u_m(j)) * mi;
    }
}

/// State Jacobian of controlled_field; `jac` is resized to dim x dim.
void controlled_field_jacobian(const Eigen::Ref<const Eigen::VectorXd>& x, const ModelParams& p,
                               const ControlValue& u, Eigen::MatrixXd& jac);

/// Uncontrolled dynamics. Throws ModelError naming the first non-finite component.
State rhs_uncontrolled(const State& state, const ModelParams& params);

/// Controlled dynamics; additionally rejects inadmissible controls (u_k <= 0 in
/// particular, where the reduced capacity is undefined).
State rhs_controlled(const State& state, const ModelParams& params, const ControlValue& u);

/// Positively invariant box for the uncontrolled flow started at `initial`.
struct DomainBounds {
    double eggs = 0.0;
    double snails = 0.0; ///< bound on S_s + S_i
    double larvae = 0.0;
    Eigen::VectorXd mammals; ///< bound on M_{j,s} + M_{j,i}
};

/// The snail ceiling is the logistic level kappa_s (alpha_s - mu_s) / alpha_s,
/// clamped at zero when alpha_s <= mu_s.
DomainBounds domain_bounds(const ModelParams& params, const State& initial);

/// True iff every component is >= 0 and every aggregate is within its bound up
/// to `rel_slack` * max(1, bound).
bool check_in_domain(const State& state, const DomainBounds& bounds, double rel_slack = 1e-9);

/// kappa_s (alpha_s - mu_s) / alpha_s, or 0 when snails cannot persist.
double snail_capacity_level(const SnailParams& snail);

} // namespace schisto
