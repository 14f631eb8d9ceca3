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

#include "schisto/model.hpp"
#include "schisto/ode.hpp"

namespace schisto {

/// Quadratic cost weights. `a_m` has one entry per species; entries of
/// uncontrolled species are ignored.
struct ControlWeights {
    double a_a = 1.0;
    double a_s = 1.0;
    double a_k = 1.0;
    Eigen::VectorXd a_m;
};

/// Control box. Inactive channels are pinned at neutral (0, or 1 for u_k).
/// Treatment of species j is active only if `active_m[j]` and the species is
/// flagged `controlled`.
struct ControlBounds {
    bool active_a = false;
    bool active_s = false;
    bool active_k = false;
    double u_a_max = 0.0;
    double u_s_max = 0.0;
    double u_k_max = 1.0;
    std::vector<bool> active_m;
    Eigen::VectorXd u_m_max;

    bool treatment_active(const ModelParams& params, Eigen::Index j) const;
    bool any_active(const ModelParams& params) const;
};

/// Throws ModelError on non-positive weights for active channels, negative
/// bounds, u_k_max < 1 or size mismatches.
void validate_control_setup(const ModelParams& params, const ControlWeights& weights, const ControlBounds& bounds);

/// Rows u_a, u_s, u_k, u_m[0..m-1]; one column per grid point.
struct ControlTrajectory {
    TimeGrid grid;
    Eigen::MatrixXd values;

    static ControlTrajectory neutral(const TimeGrid& grid, Eigen::Index num_species);

    Eigen::Index num_species() const { return values.rows() - 3; }
    /// Linear interpolation between nodes, exact at nodes.
    ControlValue at(double t) const;
    ControlValue node(long k) const;
    void set_node(long k, const ControlValue& u);
};

inline constexpr Eigen::Index kRowUa = 0;
inline constexpr Eigen::Index kRowUs = 1;
inline constexpr Eigen::Index kRowUk = 2;
inline constexpr Eigen::Index row_um(Eigen::Index j) { return 3 + j; }

/// u_a, u_s, u_k, u_<species...>
std::vector<std::string> control_channel_names(const ModelParams& params);

/// H = sum_{controlled j} M_{j,i} + A_a u_a^2 + A_s u_s^2 + A_k (u_k - 1)^2
///     + sum_{controlled j} A_j u_j^2 + lambda . f(x, u).
double hamiltonian(const State& x, const State& lambda, const ControlValue& u, const ModelParams& params,
                   const ControlWeights& weights);

/// Running cost (the integrand of J) at one instant.
double running_cost(const State& x, const ControlValue& u, const ModelParams& params, const ControlWeights& weights);

/// dlambda/dt = -dH/dx.
State adjoint_rhs(const State& lambda, const State& x, const ControlValue& u, const ModelParams& params);

/// Pointwise minimizer of H over the control box.
ControlValue characterize_controls(const State& x, const State& lambda, const ModelParams& params,
                                   const ControlWeights& weights, const ControlBounds& bounds);

/// Composite trapezoid rule for J. Throws ModelError when the grids differ.
double objective(const Trajectory& state, const ControlTrajectory& controls, const ModelParams& params,
                 const ControlWeights& weights);

/// Forward integration of the controlled system.
Trajectory simulate_controlled(const ModelParams& params, const State& initial, const ControlTrajectory& controls,
                               const IntegratorOptions& options = {});

/// Backward adjoint integration from lambda(T) = 0.
Trajectory solve_adjoint(const ModelParams& params, const Trajectory& state, const ControlTrajectory& controls,
                         const IntegratorOptions& options = {});

struct SweepConfig {
    double relaxation = 0.5;
    double tolerance = 1e-4;
    int max_iterations = 500;
    IntegratorOptions integrator;
};

struct SweepResult {
    ControlTrajectory controls;
    Trajectory state;
    Trajectory adjoint;
    std::vector<double> objective_history;
    bool converged = false;
    int iterations = 0;
    /// max over active channels of the relative L1 change at the last update
    double last_change = 0.0;
    /// iterations after the second where J rose by more than 1e-6 relative
    int descent_violations = 0;
};

SweepResult forward_backward_sweep(const ModelParams& params, const State& initial, const TimeGrid& grid,
                                   const ControlWeights& weights, const ControlBounds& bounds,
                                   const SweepConfig& config = {});

} // namespace schisto
