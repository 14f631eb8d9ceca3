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
#include "schisto/calibration.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "schisto/csv.hpp"
#include "schisto/equilibria.hpp"

namespace schisto {

namespace {

double* parameter_slot(ModelParams& p, const std::string& name)
{
    if (name == "alpha_s") return &p.snail.alpha;
    if (name == "mu_s") return &p.snail.mu;
    if (name == "kappa_s") return &p.snail.kappa;
    if (name == "gamma_s") return &p.snail.gamma;
    if (name == "beta_s") return &p.snail.beta;
    if (name == "omega_s") return &p.snail.omega;
    if (name == "nu_s") return &p.snail.nu;
    if (name == "mu_e") return &p.free.mu_e;
    if (name == "mu_l") return &p.free.mu_l;

    const auto sep = name.find('_');
    if (sep != std::string::npos) {
        const std::string field = name.substr(0, sep);
        const std::string species = name.substr(sep + 1);
        for (auto& s : p.species) {
            if (s.name != species) {
                continue;
            }
            if (field == "alpha") return &s.alpha;
            if (field == "mu") return &s.mu;
            if (field == "theta") return &s.theta;
            if (field == "gamma") return &s.gamma;
            if (field == "beta") return &s.beta;
            if (field == "omega") return &s.omega;
        }
    }
    throw ModelError("unknown parameter name '" + name + "'");
}

ModelParams with_values(const ModelParams& fixed, const PriorSpec& prior, const Eigen::VectorXd& values)
{
    ModelParams p = fixed;
    for (std::size_t i = 0; i < prior.size(); ++i) {
        set_parameter(p, prior[i].name, values(static_cast<Eigen::Index>(i)));
    }
    return p;
}

void validate_prior(const PriorSpec& prior, const ModelParams& params)
{
    if (prior.empty()) {
        throw ModelError("prior has no parameters");
    }
    for (const auto& b : prior) {
        get_parameter(params, b.name);
        if (!(b.lower < b.upper) || !std::isfinite(b.lower) || !std::isfinite(b.upper)) {
            throw ModelError(fmt::format("prior for {} needs finite lower < upper", b.name));
        }
    }
}

double quantile(std::vector<double> v, double q)
{
    std::sort(v.begin(), v.end());
    if (v.size() == 1) {
        return v.front();
    }
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double w = pos - static_cast<double>(lo);
    return (1.0 - w) * v[lo] + w * v[hi];
}

} // namespace

double get_parameter(const ModelParams& params, const std::string& name)
{
    return *parameter_slot(const_cast<ModelParams&>(params), name);
}

void set_parameter(ModelParams& params, const std::string& name, double value)
{
    *parameter_slot(params, name) = value;
}

void PrevalenceSeries::validate() const
{
    if (static_cast<std::size_t>(values.rows()) != times.size() ||
        static_cast<std::size_t>(values.cols()) != species.size()) {
        throw ModelError("prevalence series sizes do not match");
    }
    for (std::size_t k = 1; k < times.size(); ++k) {
        if (!(times[k] > times[k - 1])) {
            throw ModelError("prevalence times must be strictly increasing");
        }
    }
    if (!((values.array() >= 0.0) && (values.array() <= 1.0)).all()) {
        throw ModelError("prevalence values must lie in [0, 1]");
    }
}

std::vector<std::string> fitted_parameter_names(const ModelParams& params)
{
    if (params.num_species() < 2) {
        throw ModelError("the fitted parameter set needs two mammal species");
    }
    std::vector<std::string> names;
    for (int j = 0; j < 2; ++j) {
        const auto& s = params.species[static_cast<std::size_t>(j)].name;
        names.push_back("gamma_" + s);
        names.push_back("beta_" + s);
        names.push_back("omega_" + s);
    }
    for (const char* n : {"omega_s", "nu_s", "mu_e", "mu_l"}) {
        names.emplace_back(n);
    }
    return names;
}

PriorSpec default_prior(const ModelParams& params)
{
    PriorSpec prior;
    for (const auto& name : fitted_parameter_names(params)) {
        double upper = 4.0 * get_parameter(params, name);
        if (name.rfind("beta_", 0) == 0) {
            upper = std::min(upper, 1.0);
        }
        prior.push_back({name, 0.0, upper});
    }
    return prior;
}

PrevalenceSeries simulate_prevalence(const ModelParams& params, const State& initial,
                                     const std::vector<double>& times, const SimulationSettings& settings)
{
    // below this many animals a species counts as absent
    constexpr double kEmptySpecies = 1e-9;
    if (times.empty()) {
        throw ModelError("no observation times");
    }
    const double horizon = std::ceil(times.back() / settings.dt - 1e-9) * settings.dt;
    const TimeGrid grid = TimeGrid::uniform(0.0, std::max(horizon, settings.dt), settings.dt);
    const ControlValue neutral = ControlValue::neutral(params.num_species());
    VectorField field = [&](const Eigen::VectorXd& x, double, Eigen::VectorXd& dx) {
        controlled_field(x, params, neutral, dx);
    };
    IntegratorOptions opts = settings.integrator;
    if (!opts.jacobian) {
        opts.jacobian = [&](const Eigen::VectorXd& x, double, Eigen::MatrixXd& jac) {
            controlled_field_jacobian(x, params, neutral, jac);
        };
    }
    const Trajectory traj = integrate_forward(field, initial, grid, opts);

    PrevalenceSeries out;
    out.times = times;
    for (const auto& s : params.species) {
        out.species.push_back(s.name);
    }
    out.values.resize(static_cast<Eigen::Index>(times.size()), params.num_species());
    Eigen::VectorXd x(initial.size());
    for (std::size_t k = 0; k < times.size(); ++k) {
        sample_into(traj, std::min(times[k], grid.t_end), x);
        for (Eigen::Index j = 0; j < params.num_species(); ++j) {
            const double mi = x(layout::infected(j));
            const double total = x(layout::susceptible(j)) + mi;
            out.values(static_cast<Eigen::Index>(k), j) = total > kEmptySpecies ? mi / total : 0.0;
        }
    }
    return out;
}

double distance(const PrevalenceSeries& sim, const PrevalenceSeries& obs)
{
    if (sim.times != obs.times || sim.species != obs.species || sim.values.rows() != obs.values.rows() ||
        sim.values.cols() != obs.values.cols()) {
        throw ModelError("simulated and observed series differ in times or species");
    }
    if (sim.values.size() == 0) {
        return 0.0;
    }
    return std::sqrt((sim.values - obs.values).squaredNorm() / static_cast<double>(sim.values.size()));
}

PrevalenceSeries synth_data(const ModelParams& params, const State& initial, const std::vector<double>& times,
                            double noise_sd, std::uint64_t seed, const SimulationSettings& settings)
{
    if (!(noise_sd >= 0.0)) {
        throw ModelError("noise_sd must be >= 0");
    }
    PrevalenceSeries out = simulate_prevalence(params, initial, times, settings);
    if (noise_sd > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0.0, noise_sd);
        for (Eigen::Index k = 0; k < out.values.rows(); ++k) {
            for (Eigen::Index j = 0; j < out.values.cols(); ++j) {
                out.values(k, j) = std::clamp(out.values(k, j) + noise(rng), 0.0, 1.0);
            }
        }
    }
    return out;
}

State seeded_dfe2(const ModelParams& params, double seed_fraction)
{
    if (!(seed_fraction >= 0.0 && seed_fraction < 1.0)) {
        throw ModelError("seed fraction must lie in [0, 1)");
    }
    State x = dfe2(params).state;
    for (Eigen::Index j = 0; j < params.num_species(); ++j) {
        const double total = x(layout::susceptible(j));
        x(layout::infected(j)) = seed_fraction * total;
        x(layout::susceptible(j)) = total - x(layout::infected(j));
    }
    return x;
}

std::uint64_t draw_seed(std::uint64_t seed, std::uint64_t index)
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double evaluate_distance(const Eigen::VectorXd& values, const PriorSpec& prior, const PrevalenceSeries& obs,
                         const ModelParams& fixed_params, const State& initial, const SimulationSettings& settings)
{
    try {
        const ModelParams p = with_values(fixed_params, prior, values);
        p.validate();
        const double d = distance(simulate_prevalence(p, initial, obs.times, settings), obs);
        return std::isfinite(d) ? d : std::numeric_limits<double>::infinity();
    } catch (const ModelError&) {
        return std::numeric_limits<double>::infinity();
    } catch (const IntegrationError&) {
        return std::numeric_limits<double>::infinity();
    }
}

PosteriorSample abc_rejection(const PriorSpec& prior, const PrevalenceSeries& obs, const ModelParams& fixed_params,
                              const State& initial, const AbcOptions& options)
{
    validate_prior(prior, fixed_params);
    obs.validate();
    if (options.n_draws < 100) {
        throw ModelError("abc_rejection needs at least 100 draws");
    }
    if (!(options.accept_fraction > 0.0 && options.accept_fraction <= 0.5)) {
        throw ModelError("accept_fraction must lie in (0, 0.5]");
    }

    const auto dim = static_cast<Eigen::Index>(prior.size());
    Eigen::MatrixXd draws(options.n_draws, dim);
    std::vector<double> dist(static_cast<std::size_t>(options.n_draws));
    for (int i = 0; i < options.n_draws; ++i) {
        std::mt19937_64 rng(draw_seed(options.seed, static_cast<std::uint64_t>(i)));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (Eigen::Index k = 0; k < dim; ++k) {
            const auto& b = prior[static_cast<std::size_t>(k)];
            draws(i, k) = b.lower + (b.upper - b.lower) * unit(rng);
        }
        dist[static_cast<std::size_t>(i)] =
            evaluate_distance(draws.row(i).transpose(), prior, obs, fixed_params, initial, options.simulation);
    }

    PosteriorSample out;
    out.n_draws = options.n_draws;
    for (const auto& b : prior) {
        out.names.push_back(b.name);
    }
    std::vector<int> order;
    for (int i = 0; i < options.n_draws; ++i) {
        if (std::isfinite(dist[static_cast<std::size_t>(i)])) {
            order.push_back(i);
        } else {
            ++out.failed_draws;
        }
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)];
    });
    const auto keep = std::min<std::size_t>(
        order.size(),
        std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(options.accept_fraction * options.n_draws))));
    if (keep == 0) {
        throw ModelError("every ABC draw failed to simulate");
    }
    order.resize(keep);

    out.accepted.resize(static_cast<Eigen::Index>(keep), dim);
    for (std::size_t r = 0; r < keep; ++r) {
        out.accepted.row(static_cast<Eigen::Index>(r)) = draws.row(order[r]);
        out.distances.push_back(dist[static_cast<std::size_t>(order[r])]);
        out.draw_index.push_back(order[r]);
    }
    out.threshold = out.distances.back();
    out.mean = out.accepted.colwise().mean().transpose();
    out.variance.resize(dim);
    out.lower95.resize(dim);
    out.upper95.resize(dim);
    for (Eigen::Index k = 0; k < dim; ++k) {
        const Eigen::VectorXd col = out.accepted.col(k);
        const double n = static_cast<double>(col.size());
        out.variance(k) = col.size() > 1 ? (col.array() - out.mean(k)).square().sum() / (n - 1.0) : 0.0;
        std::vector<double> v(col.data(), col.data() + col.size());
        out.lower95(k) = quantile(v, 0.025);
        out.upper95(k) = quantile(v, 0.975);
    }
    return out;
}

RefineResult refine_fit(const Eigen::VectorXd& start, const PriorSpec& prior, const PrevalenceSeries& obs,
                        const ModelParams& fixed_params, const State& initial, const RefineOptions& options)
{
    validate_prior(prior, fixed_params);
    const auto dim = static_cast<Eigen::Index>(prior.size());
    if (start.size() != dim) {
        throw ModelError("refine_fit start has the wrong dimension");
    }
    Eigen::VectorXd lower(dim), upper(dim);
    for (Eigen::Index k = 0; k < dim; ++k) {
        lower(k) = prior[static_cast<std::size_t>(k)].lower;
        upper(k) = prior[static_cast<std::size_t>(k)].upper;
    }
    if (!((start.array() >= lower.array()) && (start.array() <= upper.array())).all()) {
        throw ModelError("refine_fit start lies outside the prior box");
    }

    RefineResult result;
    result.values = start;
    result.start_distance = evaluate_distance(start, prior, obs, fixed_params, initial, options.simulation);
    result.distance = result.start_distance;
    result.evaluations = 1;

    // Steps are relative to the coordinate, with the box width as a floor for
    // coordinates at zero.
    Eigen::VectorXd step(dim);
    for (Eigen::Index k = 0; k < dim; ++k) {
        const double scale = start(k) != 0.0 ? std::abs(start(k)) : 0.01 * (upper(k) - lower(k));
        step(k) = options.initial_step * scale;
    }
    const Eigen::VectorXd min_step = (options.min_step / options.initial_step) * step;

    while (result.evaluations < options.max_evaluations && (step.array() > min_step.array()).any()) {
        bool improved = false;
        for (Eigen::Index k = 0; k < dim && result.evaluations < options.max_evaluations; ++k) {
            for (double sign : {1.0, -1.0}) {
                Eigen::VectorXd trial = result.values;
                trial(k) = std::clamp(trial(k) + sign * step(k), lower(k), upper(k));
                if (trial(k) == result.values(k)) {
                    continue;
                }
                const double d = evaluate_distance(trial, prior, obs, fixed_params, initial, options.simulation);
                ++result.evaluations;
                if (d < result.distance) {
                    result.values = trial;
                    result.distance = d;
                    improved = true;
                    step(k) *= 2.0;
                    break;
                }
            }
        }
        if (!improved) {
            step *= 0.5;
        }
    }
    return result;
}

void write_prevalence_csv(std::ostream& os, const PrevalenceSeries& series)
{
    Table table;
    table.header.push_back("t");
    for (const auto& s : series.species) {
        table.header.push_back(s + "_prev");
    }
    for (std::size_t k = 0; k < series.times.size(); ++k) {
        std::vector<Cell> row{series.times[k]};
        for (Eigen::Index j = 0; j < series.values.cols(); ++j) {
            row.emplace_back(series.values(static_cast<Eigen::Index>(k), j));
        }
        table.rows.push_back(std::move(row));
    }
    write_csv(os, table);
}

PrevalenceSeries read_prevalence_csv(std::istream& is)
{
    const Table table = read_csv(is);
    if (table.header.empty() || table.header.front() != "t") {
        throw ConfigError("prevalence CSV must start with a 't' column");
    }
    PrevalenceSeries series;
    for (std::size_t c = 1; c < table.header.size(); ++c) {
        const auto& h = table.header[c];
        const std::string suffix = "_prev";
        if (h.size() <= suffix.size() || h.compare(h.size() - suffix.size(), suffix.size(), suffix) != 0) {
            throw ConfigError("prevalence column '" + h + "' must be named <species>_prev");
        }
        series.species.push_back(h.substr(0, h.size() - suffix.size()));
    }
    series.values.resize(static_cast<Eigen::Index>(table.rows.size()),
                         static_cast<Eigen::Index>(series.species.size()));
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        series.times.push_back(table.number(r, 0));
        for (std::size_t c = 1; c < table.header.size(); ++c) {
            series.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1)) = table.number(r, c);
        }
    }
    try {
        series.validate();
    } catch (const ModelError& e) {
        throw ConfigError(e.what());
    }
    return series;
}

void write_posterior_csv(std::ostream& os, const PosteriorSample& sample)
{
    Table table;
    table.header = {"draw", "distance"};
    table.header.insert(table.header.end(), sample.names.begin(), sample.names.end());
    for (Eigen::Index r = 0; r < sample.accepted.rows(); ++r) {
        std::vector<Cell> row{static_cast<double>(sample.draw_index[static_cast<std::size_t>(r)]),
                              sample.distances[static_cast<std::size_t>(r)]};
        for (Eigen::Index k = 0; k < sample.accepted.cols(); ++k) {
            row.emplace_back(sample.accepted(r, k));
        }
        table.rows.push_back(std::move(row));
    }
    write_csv(os, table);
}

void write_posterior_summary_csv(std::ostream& os, const PosteriorSample& sample)
{
    Table table;
    table.header = {"parameter", "mean", "variance", "lower95", "upper95"};
    for (std::size_t k = 0; k < sample.names.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        table.rows.push_back(
            {sample.names[k], sample.mean(i), sample.variance(i), sample.lower95(i), sample.upper95(i)});
    }
    write_csv(os, table);
}

} // namespace schisto
