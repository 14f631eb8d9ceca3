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
#include "schisto/ode.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <ostream>

namespace schisto {

TimeGrid TimeGrid::uniform(double t0, double t_end, double dt)
{
    if (!std::isfinite(t0) || !std::isfinite(t_end) || !std::isfinite(dt) || dt <= 0.0) {
        throw ModelError("time grid needs finite t0, t_end and dt > 0");
    }
    const double steps = (t_end - t0) / dt;
    const double rounded = std::round(steps);
    if (rounded < 1.0 || std::abs(steps - rounded) > 1e-9 * std::max(1.0, rounded)) {
        throw ModelError(fmt::format("(t_end - t0) = {} is not a positive integer multiple of dt = {}", t_end - t0, dt));
    }
    TimeGrid g;
    g.t0 = t0;
    g.dt = dt;
    g.n = static_cast<long>(rounded);
    g.t_end = g.time(g.n);
    return g;
}

namespace {

class Stepper {
public:
    Stepper(const VectorField& field, const IntegratorOptions& options, Eigen::Index dim)
        : field_(field), options_(options), k0_(dim), ka_(dim), kb_(dim), kc_(dim), tmp_(dim), probe_(dim),
          fplus_(dim), fminus_(dim), jac_(dim, dim), stages_(3 * dim), evals_(3 * dim), residual_(3 * dim),
          correction_(3 * dim)
    {
    }

    /// One step from (x, t) to t_next = t + h; h may be negative.
    void step(Eigen::VectorXd& x, double t, double t_next, long step_index)
    {
        const double h = t_next - t;
        const double t_mid = 0.5 * (t + t_next);
        if (options_.scheme == Scheme::kClassicalRk4) {
            field_(x, t, k0_);
            tmp_.noalias() = x + (0.5 * h) * k0_;
            field_(tmp_, t_mid, ka_);
            tmp_.noalias() = x + (0.5 * h) * ka_;
            field_(tmp_, t_mid, kb_);
            tmp_.noalias() = x + h * kb_;
            field_(tmp_, t_next, kc_);
            x += (h / 6.0) * (k0_ + 2.0 * ka_ + 2.0 * kb_ + kc_);
            return;
        }
        if (!radau_span(x, t, h, 0)) {
            throw IntegrationError("implicit stage equations did not converge; dt too large", step_index);
        }
    }

private:
    void compute_jacobian(const Eigen::VectorXd& x, double t)
    {
        if (options_.jacobian) {
            options_.jacobian(x, t, jac_);
            return;
        }
        probe_ = x;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double delta = 1e-7 * (1.0 + std::abs(x(i)));
            probe_(i) = x(i) + delta;
            field_(probe_, t, fplus_);
            probe_(i) = x(i) - delta;
            field_(probe_, t, fminus_);
            probe_(i) = x(i);
            jac_.col(i) = (fplus_ - fminus_) / (2.0 * delta);
        }
    }

    // Halves the interval when Newton fails; output still lands on the grid.
    bool radau_span(Eigen::VectorXd& x, double t, double h, int depth)
    {
        if (radau_step(x, t, h)) {
            return true;
        }
        if (depth >= kMaxSubdivision) {
            return false;
        }
        const Eigen::VectorXd start = x;
        if (radau_span(x, t, 0.5 * h, depth + 1) && radau_span(x, t + 0.5 * h, 0.5 * h, depth + 1)) {
            return true;
        }
        x = start;
        return false;
    }

    // Three-stage Radau IIA collocation, solved by simplified Newton with the
    // Jacobian frozen at the step start. Leaves x untouched on failure.
    bool radau_step(Eigen::VectorXd& x, double t, double h)
    {
        static const double s6 = std::sqrt(6.0);
        static const double c[3] = {(4.0 - s6) / 10.0, (4.0 + s6) / 10.0, 1.0};
        static const double a[3][3] = {
            {(88.0 - 7.0 * s6) / 360.0, (296.0 - 169.0 * s6) / 1800.0, (-2.0 + 3.0 * s6) / 225.0},
            {(296.0 + 169.0 * s6) / 1800.0, (88.0 + 7.0 * s6) / 360.0, (-2.0 - 3.0 * s6) / 225.0},
            {(16.0 - s6) / 36.0, (16.0 + s6) / 36.0, 1.0 / 9.0}};

        const Eigen::Index n = x.size();
        compute_jacobian(x, t);
        newton_.setIdentity(3 * n, 3 * n);
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                newton_.block(i * n, j * n, n, n) -= (h * a[i][j]) * jac_;
            }
        }
        lu_.compute(newton_);

        stages_.setZero(3 * n);
        for (int iter = 0; iter < options_.newton_max_iterations; ++iter) {
            for (int j = 0; j < 3; ++j) {
                tmp_ = x + stages_.segment(j * n, n);
                field_(tmp_, t + c[j] * h, k0_);
                evals_.segment(j * n, n) = k0_;
            }
            for (int i = 0; i < 3; ++i) {
                residual_.segment(i * n, n) = -stages_.segment(i * n, n);
                for (int j = 0; j < 3; ++j) {
                    residual_.segment(i * n, n) += (h * a[i][j]) * evals_.segment(j * n, n);
                }
            }
            correction_ = lu_.solve(residual_);
            if (!correction_.allFinite()) {
                break;
            }
            stages_ += correction_;
            double norm = 0.0;
            for (Eigen::Index i = 0; i < 3 * n; ++i) {
                const double scale = options_.newton_tolerance * (1.0 + std::abs(x(i % n)));
                norm = std::max(norm, std::abs(correction_(i)) / scale);
            }
            if (norm <= 1.0) {
                x += stages_.segment(2 * n, n);
                return true;
            }
        }
        return false;
    }

    static constexpr int kMaxSubdivision = 10;

    const VectorField& field_;
    const IntegratorOptions& options_;
    Eigen::VectorXd k0_, ka_, kb_, kc_, tmp_, probe_, fplus_, fminus_;
    Eigen::MatrixXd jac_, newton_;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
    Eigen::VectorXd stages_, evals_, residual_, correction_;
};

void require_finite(const Eigen::VectorXd& x, long step)
{
    if (!x.allFinite()) {
        throw IntegrationError("non-finite value produced", step);
    }
}

} // namespace

Trajectory integrate_forward(const VectorField& field, const Eigen::VectorXd& initial, const TimeGrid& grid,
                             const IntegratorOptions& options)
{
    Trajectory traj{grid, Eigen::MatrixXd(initial.size(), grid.points())};
    require_finite(initial, 0);
    traj.values.col(0) = initial;

    Stepper stepper(field, options, initial.size());
    Eigen::VectorXd x = initial;
    Eigen::VectorXd scale = initial.cwiseAbs();
    for (long k = 0; k < grid.n; ++k) {
        stepper.step(x, grid.time(k), grid.time(k + 1), k + 1);
        require_finite(x, k + 1);
        if (options.clamp_negative) {
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                if (x(i) < 0.0) {
                    const double eps = options.negative_tolerance * (1.0 + scale(i));
                    if (x(i) < -eps) {
                        throw IntegrationError(fmt::format("component {} fell to {:.6g} below zero; dt too large", i,
                                                           x(i)),
                                               k + 1);
                    }
                    x(i) = 0.0;
                }
            }
            scale = scale.cwiseMax(x.cwiseAbs());
        }
        traj.values.col(k + 1) = x;
    }
    return traj;
}

Trajectory integrate_backward(const VectorField& field, const Eigen::VectorXd& terminal, const TimeGrid& grid,
                              const IntegratorOptions& options)
{
    Trajectory traj{grid, Eigen::MatrixXd(terminal.size(), grid.points())};
    require_finite(terminal, grid.n);
    traj.values.col(grid.n) = terminal;

    Stepper stepper(field, options, terminal.size());
    Eigen::VectorXd x = terminal;
    for (long k = grid.n; k > 0; --k) {
        stepper.step(x, grid.time(k), grid.time(k - 1), k - 1);
        require_finite(x, k - 1);
        traj.values.col(k - 1) = x;
    }
    return traj;
}

void sample_into(const Trajectory& traj, double t, Eigen::VectorXd& out)
{
    const TimeGrid& g = traj.grid;
    if (!(t >= g.t0 && t <= g.t_end)) {
        throw ModelError(fmt::format("sample time {} outside grid [{}, {}]", t, g.t0, g.t_end));
    }
    const double s = (t - g.t0) / g.dt;
    long k = static_cast<long>(std::floor(s));
    k = std::clamp(k, 0L, g.n - 1);
    const double tk = g.time(k);
    const double tk1 = g.time(k + 1);
    if (t == tk) {
        out = traj.values.col(k);
        return;
    }
    if (t == tk1) {
        out = traj.values.col(k + 1);
        return;
    }
    const double w = (t - tk) / (tk1 - tk);
    out.noalias() = (1.0 - w) * traj.values.col(k) + w * traj.values.col(k + 1);
}

Eigen::VectorXd sample(const Trajectory& traj, double t)
{
    Eigen::VectorXd out(traj.dim());
    sample_into(traj, t, out);
    return out;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj, const std::vector<std::string>& names)
{
    os << 't';
    for (const auto& name : names) {
        os << ',' << name;
    }
    os << '\n';
    for (long k = 0; k <= traj.grid.n; ++k) {
        os << fmt::format("{:.17g}", traj.grid.time(k));
        for (Eigen::Index i = 0; i < traj.dim(); ++i) {
            os << ',' << fmt::format("{:.17g}", traj.values(i, k));
        }
        os << '\n';
    }
}

} // namespace schisto
