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

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "schisto/model.hpp"
#include "schisto/ode.hpp"

namespace schisto {

/// Reads a scalar parameter by name: alpha_s, mu_s, kappa_s, gamma_s, beta_s,
/// omega_s, nu_s, mu_e, mu_l, or <field>_<species> with field one of alpha,
/// mu, theta, gamma, beta, omega (e.g. beta_human). Throws ModelError for an
/// unknown name.
double get_parameter(const ModelParams& params, const std::string& name);
void set_parameter(ModelParams& params, const std::string& name, double value);

/// Prevalence M_i / (M_s + M_i) per species at each observation time. Row k
/// holds time k; column j holds species j.
struct PrevalenceSeries {
    std::vector<double> times;
    std::vector<std::string> species;
    Eigen::MatrixXd values;

    /// Throws ModelError unless times are strictly increasing, sizes agree and
    /// every value lies in [0, 1].
    void validate() const;
};

struct PriorBound {
    std::string name;
    double lower = 0.0;
    double upper = 1.0;
};
using PriorSpec = std::vector<PriorBound>;

/// The ten fitted rates of the reference table: gamma, beta and omega of the
/// first two species, then omega_s, nu_s, mu_e, mu_l.
std::vector<std::string> fitted_parameter_names(const ModelParams& params);

/// Uniform box [0, 4 * value] around the values in `params`; infection
/// probabilities are capped at 1.
PriorSpec default_prior(const ModelParams& params);

struct SimulationSettings {
    double dt = 0.1;
    IntegratorOptions integrator;
};

/// Simulates from t = 0 and samples prevalence at `times` (each within the
/// horizon, linear interpolation between grid nodes). A species with fewer
/// than 1e-9 mammals has prevalence 0.
PrevalenceSeries simulate_prevalence(const ModelParams& params, const State& initial,
                                     const std::vector<double>& times, const SimulationSettings& settings = {});

/// Root-mean-square difference pooled over every species and time. Throws
/// ModelError when the times or species differ.
double distance(const PrevalenceSeries& sim, const PrevalenceSeries& obs);

/// simulate_prevalence plus N(0, noise_sd) noise clipped to [0, 1].
PrevalenceSeries synth_data(const ModelParams& params, const State& initial, const std::vector<double>& times,
                            double noise_sd, std::uint64_t seed, const SimulationSettings& settings = {});

/// Calibration initial state: DFE2 with infected mammals at `seed_fraction`
/// of each species' disease-free level. The state does not depend on any of
/// the fitted rates.
State seeded_dfe2(const ModelParams& params, double seed_fraction = 0.01);

struct AbcOptions {
    int n_draws = 2000;
    double accept_fraction = 0.01;
    std::uint64_t seed = 1;
    SimulationSettings simulation;
};

struct PosteriorSample {
    std::vector<std::string> names;
    /// one row per accepted draw, ordered by increasing distance
    Eigen::MatrixXd accepted;
    std::vector<double> distances;
    std::vector<int> draw_index;
    double threshold = 0.0;
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;
    Eigen::VectorXd lower95;
    Eigen::VectorXd upper95;
    int n_draws = 0;
    int failed_draws = 0;
};

/// Deterministic per-draw seed stream (splitmix64 of seed and index).
std::uint64_t draw_seed(std::uint64_t seed, std::uint64_t index);

/// Rejection ABC: draws n_draws vectors uniformly from the prior, keeps the
/// round(accept_fraction * n_draws) smallest distances (ties by draw index).
/// Draws whose simulation fails are discarded and counted.
PosteriorSample abc_rejection(const PriorSpec& prior, const PrevalenceSeries& obs, const ModelParams& fixed_params,
                              const State& initial, const AbcOptions& options);

struct RefineOptions {
    double initial_step = 0.05;   ///< relative to each coordinate's value
    double min_step = 1e-7;
    int max_evaluations = 4000;
    SimulationSettings simulation;
};

struct RefineResult {
    Eigen::VectorXd values;
    double distance = 0.0;
    double start_distance = 0.0;
    int evaluations = 0;
};

/// Bounded compass search on distance^2 within the prior box. Never returns a
/// point worse than the start.
RefineResult refine_fit(const Eigen::VectorXd& start, const PriorSpec& prior, const PrevalenceSeries& obs,
                        const ModelParams& fixed_params, const State& initial, const RefineOptions& options = {});

/// Distance of the model with `values` substituted for the prior's names.
/// Returns +inf when the simulation fails.
double evaluate_distance(const Eigen::VectorXd& values, const PriorSpec& prior, const PrevalenceSeries& obs,
                         const ModelParams& fixed_params, const State& initial, const SimulationSettings& settings);

/// `t,<species>_prev...` with 17 significant digits.
void write_prevalence_csv(std::ostream& os, const PrevalenceSeries& series);
/// Reads the layout written by write_prevalence_csv; throws ConfigError.
PrevalenceSeries read_prevalence_csv(std::istream& is);

/// Accepted vectors with their distances, one row per draw.
void write_posterior_csv(std::ostream& os, const PosteriorSample& sample);
/// parameter,mean,variance,lower95,upper95
void write_posterior_summary_csv(std::ostream& os, const PosteriorSample& sample);

} // namespace schisto
