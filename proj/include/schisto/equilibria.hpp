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

#include "schisto/model.hpp"

namespace schisto {

enum class EquilibriumKind { kDfe1, kDfe2, kEndemic };
enum class Stability { kStable, kUnstable, kMarginal };

std::string to_string(EquilibriumKind kind);
std::string to_string(Stability stability);

struct StabilityReport {
    Stability label = Stability::kMarginal;
    Eigen::VectorXcd eigenvalues;
    double max_real_eigenvalue = 0.0;
};

struct EquilibriumReport {
    EquilibriumKind kind = EquilibriumKind::kDfe1;
    State state;
    /// max-norm of rhs_uncontrolled at `state`
    double residual = 0.0;
    Stability stability = Stability::kMarginal;
    double max_real_eigenvalue = 0.0;
    Eigen::VectorXcd eigenvalues;
};

/// Threshold quantities at DFE2.
///
/// `r0` is the product over one transmission cycle (egg -> infected snail ->
/// cercaria -> infected mammal -> egg) with every compartment's full outflow in
/// the denominators, so egg uptake by snails and cercaria uptake by mammals
/// count as removal. `ngm_spectral_radius` is the spectral radius of the
/// next-generation matrix K built from the same split; K is cyclic of length
/// four, so ngm_spectral_radius^4 == r0 and both cross 1 together.
///
/// The `displayed_*` members evaluate the textbook expressions in which the
/// uptake terms were placed in F with a negative sign. They omit the factors
/// mu_e / (mu_e + omega_s S*) and mu_l / (mu_l + sum omega_j M_j*), and the
/// spectral radius of that F V^-1 is at least omega_s S* / mu_e, so neither is
/// a threshold quantity. They are reported for comparison only.
struct R0Report {
    double r0 = 0.0;
    double ngm_spectral_radius = 0.0;
    Eigen::VectorXd per_species_terms;
    Eigen::MatrixXd ngm;

    double displayed_r0 = 0.0;
    Eigen::VectorXd displayed_per_species_terms;
    double displayed_ngm_spectral_radius = 0.0;
    Eigen::MatrixXd displayed_ngm;
};

/// Equilibrium tolerance 1e-8 (1 + |x|_inf) used by every report.
double equilibrium_tolerance(const State& state);
double equilibrium_residual(const ModelParams& params, const State& state);

/// Snail-free, infection-free state with M_j* = alpha_j / mu_j.
EquilibriumReport dfe1(const ModelParams& params);

/// Infection-free state with S_s = kappa_s (alpha_s - mu_s) / alpha_s.
/// Throws EquilibriumError when alpha_s <= mu_s.
EquilibriumReport dfe2(const ModelParams& params);

/// Positive equilibrium from a bracketed scalar root-find in L*. Throws
/// EquilibriumError when r0 <= 1, when no sign change is found, or when the
/// reconstructed state fails the residual check.
EquilibriumReport endemic_equilibrium(const ModelParams& params);

/// Throws EquilibriumError when alpha_s <= mu_s (only DFE1 exists then).
R0Report r0(const ModelParams& params);

/// Central-difference Jacobian of rhs_uncontrolled, step 1e-6 (1 + |x_i|).
Eigen::MatrixXd numerical_jacobian(const ModelParams& params, const State& state);

/// Stable if every eigenvalue has real part < -1e-8, unstable if any exceeds
/// 1e-8, marginal otherwise. Throws EquilibriumError if `state` is not an
/// equilibrium.
StabilityReport classify_stability(const ModelParams& params, const State& state);

} // namespace schisto
