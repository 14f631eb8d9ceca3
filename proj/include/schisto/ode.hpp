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
#include <Eigen/LU>

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "schisto/error.hpp"

namespace schisto {

/// Uniform grid t_k = t0 + k dt, k = 0..n, with t_end = t0 + n dt.
struct TimeGrid {
    double t0 = 0.0;
    double t_end = 1.0;
    double dt = 1.0;
    long n = 1;

    /// Builds the grid; (t_end - t0) must be an integer multiple of dt up to
    /// 1e-9 dt. Throws ModelError otherwise.
    static TimeGrid uniform(double t0, double t_end, double dt);

    double time(long k) const { return t0 + static_cast<double>(k) * dt; }
    Eigen::Index points() const { return static_cast<Eigen::Index>(n + 1); }
    bool operator==(const TimeGrid& other) const = default;
};

/// Grid-aligned samples of a vector-valued function; column k is the value at
/// grid.time(k).
struct Trajectory {
    TimeGrid grid;
    Eigen::MatrixXd values;

    Eigen::Index dim() const { return values.rows(); }
    auto at(long k) const { return values.col(static_cast<Eigen::Index>(k)); }
    auto final() const { return values.col(values.cols() - 1); }
};

/// dx/dt = f(x, t), written into the third argument.
using VectorField = std::function<void(const Eigen::VectorXd&, double, Eigen::VectorXd&)>;

/// df/dx at (x, t), written into the third argument.
using JacobianField = std::function<void(const Eigen::VectorXd&, double, Eigen::MatrixXd&)>;

enum class Scheme {
    /// Classical fourth-order Runge-Kutta.
    kClassicalRk4,
    /// Three-stage Radau IIA (implicit, L-stable, order 5). Needed whenever
    /// the egg stage is stiff, which holds for the default parameters.
    kRadauIIA,
};

struct IntegratorOptions {
    Scheme scheme = Scheme::kRadauIIA;
    /// Analytic Jacobian for the implicit scheme; central finite differences
    /// of the field when empty.
    JacobianField jacobian;
    double newton_tolerance = 1e-12;
    int newton_max_iterations = 12;
    /// Forward only: clamp components in (-eps, 0) to 0 and fail below -eps,
    /// eps = negative_tolerance * (1 + running max |component|).
    bool clamp_negative = true;
    double negative_tolerance = 1e-12;
};

/// Integrates forward from `initial` at grid.t0. The implicit scheme halves a
/// grid interval (down to 1/1024 of it) when its stage equations do not
/// converge. Throws IntegrationError on a non-finite value, on negativity
/// beyond tolerance, or when the smallest substep still fails.
Trajectory integrate_forward(const VectorField& field, const Eigen::VectorXd& initial, const TimeGrid& grid,
                             const IntegratorOptions& options = {});

/// Integrates from `terminal` at grid.t_end back to grid.t0. Values are stored
/// in forward time order; no negativity handling.
Trajectory integrate_backward(const VectorField& field, const Eigen::VectorXd& terminal, const TimeGrid& grid,
                              const IntegratorOptions& options = {});

/// Linear interpolation between bracketing grid points; exact (bitwise) at
/// grid points. Throws ModelError for t outside [t0, t_end].
Eigen::VectorXd sample(const Trajectory& traj, double t);
void sample_into(const Trajectory& traj, double t, Eigen::VectorXd& out);

/// `t,<names...>` header and one row per grid point, 17 significant digits.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj, const std::vector<std::string>& names);

} // namespace schisto
