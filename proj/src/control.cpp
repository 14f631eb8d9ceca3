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
#include "schisto/control.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace schisto {

namespace {

double clamp_to(double value, double lo, double hi)
{
    return std::clamp(value, lo, std::max(lo, hi));
}

void require_same_grid(const TimeGrid& a, const TimeGrid& b)
{
    if (!(a == b)) {
        throw ModelError("state and control trajectories must share one time grid");
    }
}

double total_snails(const State& x)
{
    return x(layout::kSnailSusceptible) + x(layout::kSnailInfected);
}

} // namespace

bool ControlBounds::treatment_active(const ModelParams& params, Eigen::Index j) const
{
    const auto idx = static_cast<std::size_t>(j);
    return idx < active_m.size() && active_m[idx] && params.species[idx].controlled;
}

bool ControlBounds::any_active(const ModelParams& params) const
{
    if (active_a || active_s || active_k) {
        return true;
    }
    for (Eigen::Index j = 0; j < params.num_species(); ++j) {
        if (treatment_active(params, j)) {
            return true;
        }
    }
    return false;
}

void validate_control_setup(const ModelParams& params, const ControlWeights& weights, const ControlBounds& bounds)
{
    const Eigen::Index m = params.num_species();
    if (weights.a_m.size() != m || bounds.u_m_max.size() != m || static_cast<Eigen::Index>(bounds.active_m.size()) != m) {
        throw ModelError(fmt::format("treatment weights, bounds and flags need {} entries", m));
    }
    const auto positive = [](double w, const std::string& what) {
        if (!(w > 0.0) || !std::isfinite(w)) {
            throw ModelError(what + " must be a positive finite weight");
        }
    };
    const auto bound = [](double b, const std::string& what) {
        if (!(b >= 0.0) || !std::isfinite(b)) {
            throw ModelError(what + " must be a finite non-negative bound");
        }
    };
    if (bounds.active_a) {
        positive(weights.a_a, "A_a");
        bound(bounds.u_a_max, "u_a_max");
    }
    if (bounds.active_s) {
        positive(weights.a_s, "A_s");
        bound(bounds.u_s_max, "u_s_max");
    }
    if (bounds.active_k) {
        positive(weights.a_k, "A_k");
        if (!(bounds.u_k_max >= 1.0) || !std::isfinite(bounds.u_k_max)) {
            throw ModelError("u_k_max must be >= 1");
        }
    }
    for (Eigen::Index j = 0; j < m; ++j) {
        const auto& s = params.species[static_cast<std::size_t>(j)];
        if (bounds.active_m[static_cast<std::size_t>(j)] && !s.controlled) {
            throw ModelError("treatment channel for " + s.name + " is active but the species is not controlled");
        }
        if (bounds.treatment_active(params, j)) {
            positive(weights.a_m(j), "A_" + s.name);
            bound(bounds.u_m_max(j), "u_max_" + s.name);
        }
    }
}

ControlTrajectory ControlTrajectory::neutral(const TimeGrid& grid, Eigen::Index num_species)
{
    ControlTrajectory c{grid, Eigen::MatrixXd::Zero(3 + num_species, grid.points())};
    c.values.row(kRowUk).setOnes();
    return c;
}

ControlValue ControlTrajectory::node(long k) const
{
    ControlValue u;
    const auto col = values.col(static_cast<Eigen::Index>(k));
    u.u_a = col(kRowUa);
    u.u_s = col(kRowUs);
    u.u_k = col(kRowUk);
    u.u_m = col.tail(num_species());
    return u;
}

void ControlTrajectory::set_node(long k, const ControlValue& u)
{
    auto col = values.col(static_cast<Eigen::Index>(k));
    col(kRowUa) = u.u_a;
    col(kRowUs) = u.u_s;
    col(kRowUk) = u.u_k;
    col.tail(num_species()) = u.u_m;
}

ControlValue ControlTrajectory::at(double t) const
{
    if (!(t >= grid.t0 && t <= grid.t_end)) {
        throw ModelError(fmt::format("control time {} outside grid [{}, {}]", t, grid.t0, grid.t_end));
    }
    long k = std::clamp(static_cast<long>(std::floor((t - grid.t0) / grid.dt)), 0L, grid.n - 1);
    const double tk = grid.time(k);
    if (t == tk) {
        return node(k);
    }
    if (t == grid.time(k + 1)) {
        return node(k + 1);
    }
    const double w = (t - tk) / grid.dt;
    const Eigen::VectorXd col = (1.0 - w) * values.col(k) + w * values.col(k + 1);
    ControlValue u;
    u.u_a = col(kRowUa);
    u.u_s = col(kRowUs);
    u.u_k = col(kRowUk);
    u.u_m = col.tail(num_species());
    return u;
}

std::vector<std::string> control_channel_names(const ModelParams& params)
{
    std::vector<std::string> names{"u_a", "u_s", "u_k"};
    for (const auto& s : params.species) {
        names.push_back("u_" + s.name);
    }
    return names;
}

double running_cost(const State& x, const ControlValue& u, const ModelParams& params, const ControlWeights& weights)
{
    double cost = weights.a_a * u.u_a * u.u_a + weights.a_s * u.u_s * u.u_s +
                  weights.a_k * (u.u_k - 1.0) * (u.u_k - 1.0);
    for (Eigen::Index j = 0; j < params.num_species(); ++j) {
        if (params.species[static_cast<std::size_t>(j)].controlled) {
            cost += x(layout::infected(j)) + weights.a_m(j) * u.u_m(j) * u.u_m(j);
        }
    }
    return cost;
}

double hamiltonian(const State& x, const State& lambda, const ControlValue& u, const ModelParams& params,
                   const ControlWeights& weights)
{
    State f(x.size());
    controlled_field(x, params, u, f);
    return running_cost(x, u, params, weights) + lambda.dot(f);
}

State adjoint_rhs(const State& lambda, const State& x, const ControlValue& u, const ModelParams& params)
{
    using namespace layout;
    const auto& sn = params.snail;
    const double e = x(kEggs);
    const double ss = x(kSnailSusceptible);
    const double l = x(kLarvae);
    const double logistic_slope = sn.alpha * (1.0 - 2.0 * u.u_k * total_snails(x) / sn.kappa);
    const double l1 = lambda(kEggs);
    const double l2 = lambda(kSnailSusceptible);
    const double l3 = lambda(kSnailInfected);
    const double l4 = lambda(kLarvae);

    State d(lambda.size());
    d(kEggs) = l1 * (sn.omega * ss + params.free.mu_e + u.u_a) + (l2 - l3) * sn.omega * sn.beta * ss;
    d(kSnailSusceptible) = l1 * sn.omega * e + l2 * (sn.omega * sn.beta * e - logistic_slope + sn.mu + u.u_s) -
                           l3 * sn.omega * sn.beta * e;
    d(kSnailInfected) = -l2 * logistic_slope + l3 * (sn.mu + sn.gamma + u.u_s) - l4 * sn.nu;

    double larva_uptake = 0.0;
    double larva_coupling = 0.0;
    for (Eigen::Index j = 0; j < params.num_species(); ++j) {
        const auto& s = params.species[static_cast<std::size_t>(j)];
        const double ms = x(susceptible(j));
        larva_uptake += s.omega * ms;
        larva_coupling += s.omega * s.beta * ms * (lambda(susceptible(j)) - lambda(infected(j)));

        const double ls = lambda(susceptible(j));
        const double li = lambda(infected(j));
        d(susceptible(j)) = l4 * s.omega * l + ls * (s.omega * s.beta * l + s.mu) - li * s.omega * s.beta * l;
        d(infected(j)) = -(s.controlled ? 1.0 : 0.0) - s.theta * l1 + li * (s.mu + s.gamma + u.u_m(j));
    }
    d(kLarvae) = l4 * (larva_uptake + params.free.mu_l + u.u_a) + larva_coupling;
    return d;
}

ControlValue characterize_controls(const State& x, const State& lambda, const ModelParams& params,
                                   const ControlWeights& weights, const ControlBounds& bounds)
{
    using namespace layout;
    ControlValue u = ControlValue::neutral(params.num_species());
    if (bounds.active_a) {
        const double raw = (lambda(kEggs) * x(kEggs) + lambda(kLarvae) * x(kLarvae)) / (2.0 * weights.a_a);
        u.u_a = clamp_to(raw, 0.0, bounds.u_a_max);
    }
    if (bounds.active_s) {
        const double raw = (lambda(kSnailSusceptible) * x(kSnailSusceptible) +
                            lambda(kSnailInfected) * x(kSnailInfected)) /
                           (2.0 * weights.a_s);
        u.u_s = clamp_to(raw, 0.0, bounds.u_s_max);
    }
    if (bounds.active_k) {
        const double s = total_snails(x);
        const double raw =
            1.0 + lambda(kSnailSusceptible) * params.snail.alpha * s * s / (2.0 * params.snail.kappa * weights.a_k);
        u.u_k = clamp_to(raw, 1.0, bounds.u_k_max);
    }
    for (Eigen::Index j = 0; j < params.num_species(); ++j) {
        if (bounds.treatment_active(params, j)) {
            const double raw = lambda(infected(j)) * x(infected(j)) / (2.0 * weights.a_m(j));
            u.u_m(j) = clamp_to(raw, 0.0, bounds.u_m_max(j));
        }
    }
    return u;
}

double objective(const Trajectory& state, const ControlTrajectory& controls, const ModelParams& params,
                 const ControlWeights& weights)
{
    require_same_grid(state.grid, controls.grid);
    const long n = state.grid.n;
    double sum = 0.0;
    for (long k = 0; k <= n; ++k) {
        const double c = running_cost(state.values.col(k), controls.node(k), params, weights);
        sum += (k == 0 || k == n) ? 0.5 * c : c;
    }
    return sum * state.grid.dt;
}

Trajectory simulate_controlled(const ModelParams& params, const State& initial, const ControlTrajectory& controls,
                               const IntegratorOptions& options)
{
    VectorField field = [&](const Eigen::VectorXd& x, double t, Eigen::VectorXd& dx) {
        controlled_field(x, params, controls.at(t), dx);
    };
    IntegratorOptions opts = options;
    if (!opts.jacobian) {
        opts.jacobian = [&](const Eigen::VectorXd& x, double t, Eigen::MatrixXd& jac) {
            controlled_field_jacobian(x, params, controls.at(t), jac);
        };
    }
    return integrate_forward(field, initial, controls.grid, opts);
}

Trajectory solve_adjoint(const ModelParams& params, const Trajectory& state, const ControlTrajectory& controls,
                         const IntegratorOptions& options)
{
    require_same_grid(state.grid, controls.grid);
    Eigen::VectorXd x(state.dim());
    VectorField field = [&](const Eigen::VectorXd& lambda, double t, Eigen::VectorXd& dl) {
        sample_into(state, t, x);
        dl = adjoint_rhs(lambda, x, controls.at(t), params);
    };
    IntegratorOptions opts = options;
    if (!opts.jacobian) {
        opts.jacobian = [&](const Eigen::VectorXd&, double t, Eigen::MatrixXd& jac) {
            sample_into(state, t, x);
            Eigen::MatrixXd forward;
            controlled_field_jacobian(x, params, controls.at(t), forward);
            jac = -forward.transpose();
        };
    }
    return integrate_backward(field, State::Zero(state.dim()), state.grid, opts);
}

SweepResult forward_backward_sweep(const ModelParams& params, const State& initial, const TimeGrid& grid,
                                   const ControlWeights& weights, const ControlBounds& bounds,
                                   const SweepConfig& config)
{
    params.validate();
    validate_control_setup(params, weights, bounds);
    if (!(config.relaxation > 0.0 && config.relaxation <= 1.0)) {
        throw ModelError("sweep relaxation must lie in (0, 1]");
    }

    const Eigen::Index m = params.num_species();
    std::vector<Eigen::Index> active_rows;
    if (bounds.active_a) {
        active_rows.push_back(kRowUa);
    }
    if (bounds.active_s) {
        active_rows.push_back(kRowUs);
    }
    if (bounds.active_k) {
        active_rows.push_back(kRowUk);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
        if (bounds.treatment_active(params, j)) {
            active_rows.push_back(row_um(j));
        }
    }

    SweepResult result;
    result.controls = ControlTrajectory::neutral(grid, m);
    ControlTrajectory characterized = result.controls;

    const auto record_objective = [&](const Trajectory& state) {
        const double j = objective(state, result.controls, params, weights);
        if (!std::isfinite(j)) {
            throw IntegrationError("objective is not finite", result.iterations);
        }
        const auto& hist = result.objective_history;
        if (hist.size() >= 2 && j > hist.back() + 1e-6 * std::abs(hist.back())) {
            ++result.descent_violations;
        }
        result.objective_history.push_back(j);
    };

    result.state = simulate_controlled(params, initial, result.controls, config.integrator);
    record_objective(result.state);
    while (true) {
        result.adjoint = solve_adjoint(params, result.state, result.controls, config.integrator);
        if (active_rows.empty() || result.iterations >= config.max_iterations) {
            break;
        }
        for (long k = 0; k <= grid.n; ++k) {
            characterized.set_node(k, characterize_controls(result.state.values.col(k), result.adjoint.values.col(k),
                                                            params, weights, bounds));
        }
        double change = 0.0;
        for (Eigen::Index row : active_rows) {
            const Eigen::VectorXd old_row = result.controls.values.row(row).transpose();
            const Eigen::VectorXd new_row =
                (1.0 - config.relaxation) * old_row + config.relaxation * characterized.values.row(row).transpose();
            const double diff = (new_row - old_row).cwiseAbs().sum();
            const double size = new_row.cwiseAbs().sum();
            change = std::max(change, size > 0.0 ? diff / size : diff);
            result.controls.values.row(row) = new_row.transpose();
        }
        ++result.iterations;
        result.last_change = change;

        result.state = simulate_controlled(params, initial, result.controls, config.integrator);
        record_objective(result.state);
        if (change <= config.tolerance) {
            result.converged = true;
            result.adjoint = solve_adjoint(params, result.state, result.controls, config.integrator);
            break;
        }
    }
    if (active_rows.empty()) {
        result.converged = true;
    }
    return result;
}

} // namespace schisto
