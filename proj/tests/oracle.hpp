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
// Independent reference formulas for the tests. Written against the model
// equations directly, with raw indices, and without calling library code.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "schisto/control.hpp"
#include "schisto/model.hpp"

namespace oracle {

struct Controls {
    double ua = 0.0;
    double us = 0.0;
    double uk = 1.0;
    std::vector<double> um;
};

inline Controls from(const schisto::ControlValue& u)
{
    Controls c{u.u_a, u.u_s, u.u_k, {}};
    for (Eigen::Index j = 0; j < u.u_m.size(); ++j) {
        c.um.push_back(u.u_m(j));
    }
    return c;
}

inline Eigen::VectorXd rhs(const Eigen::VectorXd& x, const schisto::ModelParams& p, const Controls& c)
{
    const std::size_t m = p.species.size();
    const double E = x(0), Ss = x(1), Si = x(2), L = x(3);
    const double S = Ss + Si;
    const auto& sn = p.snail;
    Eigen::VectorXd d = Eigen::VectorXd::Zero(x.size());

    double eggs_in = 0.0;
    double larva_out = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        eggs_in += p.species[j].theta * x(5 + 2 * j);
        larva_out += p.species[j].omega * x(4 + 2 * j) * L;
    }
    d(0) = eggs_in - sn.omega * Ss * E - p.free.mu_e * E - c.ua * E;
    d(1) = -sn.omega * sn.beta * Ss * E + sn.alpha * S * (1.0 - S * c.uk / sn.kappa) - sn.mu * Ss - c.us * Ss;
    d(2) = sn.omega * sn.beta * Ss * E - (sn.mu + sn.gamma) * Si - c.us * Si;
    d(3) = sn.nu * Si - larva_out - p.free.mu_l * L - c.ua * L;
    for (std::size_t j = 0; j < m; ++j) {
        const auto& s = p.species[j];
        const double Ms = x(4 + 2 * j), Mi = x(5 + 2 * j);
        const double uj = c.um.empty() ? 0.0 : c.um[j];
        d(4 + 2 * j) = -s.omega * s.beta * L * Ms + s.alpha - s.mu * Ms;
        d(5 + 2 * j) = s.omega * s.beta * L * Ms - (s.mu + s.gamma) * Mi - uj * Mi;
    }
    return d;
}

inline Eigen::VectorXd rhs(const Eigen::VectorXd& x, const schisto::ModelParams& p)
{
    return rhs(x, p, Controls{0.0, 0.0, 1.0, std::vector<double>(p.species.size(), 0.0)});
}

/// Integrand of the objective plus lambda . f.
inline double hamiltonian(const Eigen::VectorXd& x, const Eigen::VectorXd& lambda, const schisto::ModelParams& p,
                          const Controls& c, const schisto::ControlWeights& w)
{
    double h = w.a_a * c.ua * c.ua + w.a_s * c.us * c.us + w.a_k * (c.uk - 1.0) * (c.uk - 1.0);
    for (std::size_t j = 0; j < p.species.size(); ++j) {
        if (p.species[j].controlled) {
            h += x(5 + 2 * j) + w.a_m(static_cast<Eigen::Index>(j)) * c.um[j] * c.um[j];
        }
    }
    return h + lambda.dot(rhs(x, p, c));
}

/// Central differences of the Hamiltonian in x, taken term by term: the
/// running cost and each lambda_k f_k separately, then summed. Differencing H
/// whole loses most digits to the egg-output terms.
inline Eigen::VectorXd hamiltonian_gradient_fd(const Eigen::VectorXd& x, const Eigen::VectorXd& lambda,
                                               const schisto::ModelParams& p, const Controls& c,
                                               const schisto::ControlWeights& w, double rel_step = 1e-4)
{
    const Eigen::VectorXd no_costate = Eigen::VectorXd::Zero(x.size());
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = rel_step * (1.0 + std::abs(x(i)));
        Eigen::VectorXd xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        const Eigen::VectorXd df = (rhs(xp, p, c) - rhs(xm, p, c)) / (2.0 * h);
        const double dcost = (hamiltonian(xp, no_costate, p, c, w) - hamiltonian(xm, no_costate, p, c, w)) / (2.0 * h);
        g(i) = dcost + lambda.dot(df);
    }
    return g;
}

/// dH/du per channel, differentiated by hand from `hamiltonian` above.
/// Order: u_a, u_s, u_k, u_m...
inline std::vector<double> hamiltonian_control_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& lambda,
                                                        const schisto::ModelParams& p, const Controls& c,
                                                        const schisto::ControlWeights& w)
{
    const double S = x(1) + x(2);
    std::vector<double> g;
    g.push_back(2.0 * w.a_a * c.ua - lambda(0) * x(0) - lambda(3) * x(3));
    g.push_back(2.0 * w.a_s * c.us - lambda(1) * x(1) - lambda(2) * x(2));
    g.push_back(2.0 * w.a_k * (c.uk - 1.0) - lambda(1) * p.snail.alpha * S * S / p.snail.kappa);
    for (std::size_t j = 0; j < p.species.size(); ++j) {
        g.push_back(2.0 * w.a_m(static_cast<Eigen::Index>(j)) * c.um[j] - lambda(5 + 2 * j) * x(5 + 2 * j));
    }
    return g;
}

/// Magnitude of the terms summed in hamiltonian_control_gradient, for scaling.
inline std::vector<double> hamiltonian_control_scale(const Eigen::VectorXd& x, const Eigen::VectorXd& lambda,
                                                     const schisto::ModelParams& p, const Controls& c,
                                                     const schisto::ControlWeights& w)
{
    const double S = x(1) + x(2);
    std::vector<double> s;
    s.push_back(std::abs(2.0 * w.a_a * c.ua) + std::abs(lambda(0) * x(0)) + std::abs(lambda(3) * x(3)));
    s.push_back(std::abs(2.0 * w.a_s * c.us) + std::abs(lambda(1) * x(1)) + std::abs(lambda(2) * x(2)));
    s.push_back(std::abs(2.0 * w.a_k * (c.uk - 1.0)) + std::abs(lambda(1) * p.snail.alpha * S * S / p.snail.kappa));
    for (std::size_t j = 0; j < p.species.size(); ++j) {
        s.push_back(std::abs(2.0 * w.a_m(static_cast<Eigen::Index>(j)) * c.um[j]) +
                    std::abs(lambda(5 + 2 * j) * x(5 + 2 * j)));
    }
    return s;
}

/// Next-generation split at the infection-free state with snails at S*:
/// Jacobian of the infected subsystem (E, S_i, L, M_i...) by central
/// differences of `rhs`, new-infection part F = off-diagonal entries,
/// transition part V = minus the diagonal.
struct NextGeneration {
    Eigen::MatrixXd F;
    Eigen::MatrixXd V;
    double spectral_radius = 0.0;
};

inline NextGeneration next_generation(const schisto::ModelParams& p)
{
    const std::size_t m = p.species.size();
    const auto& sn = p.snail;
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(4 + 2 * m));
    x0(1) = sn.kappa * (sn.alpha - sn.mu) / sn.alpha;
    for (std::size_t j = 0; j < m; ++j) {
        x0(4 + 2 * j) = p.species[j].alpha / p.species[j].mu;
    }
    std::vector<Eigen::Index> infected{0, 2, 3};
    for (std::size_t j = 0; j < m; ++j) {
        infected.push_back(static_cast<Eigen::Index>(5 + 2 * j));
    }
    const auto k = static_cast<Eigen::Index>(infected.size());
    Eigen::MatrixXd jac(k, k);
    for (Eigen::Index c = 0; c < k; ++c) {
        const Eigen::Index i = infected[static_cast<std::size_t>(c)];
        const double h = 1e-6 * (1.0 + std::abs(x0(i)));
        Eigen::VectorXd xp = x0, xm = x0;
        xp(i) += h;
        xm(i) -= h;
        const Eigen::VectorXd d = (rhs(xp, p) - rhs(xm, p)) / (2.0 * h);
        for (Eigen::Index r = 0; r < k; ++r) {
            jac(r, c) = d(infected[static_cast<std::size_t>(r)]);
        }
    }
    NextGeneration out;
    out.F = jac;
    out.F.diagonal().setZero();
    out.V = Eigen::MatrixXd::Zero(k, k);
    out.V.diagonal() = -jac.diagonal();
    const Eigen::MatrixXd ngm = out.F * out.V.inverse();
    out.spectral_radius = ngm.eigenvalues().cwiseAbs().maxCoeff();
    return out;
}

/// Composite Simpson rule, n even.
template <typename F>
double simpson(F f, double a, double b, int n)
{
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) {
        s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    }
    return s * h / 3.0;
}

} // namespace oracle
