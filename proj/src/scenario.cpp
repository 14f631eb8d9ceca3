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
#include "schisto/scenario.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <sstream>
#include <string_view>

#include "schisto/equilibria.hpp"
#include "schisto/error.hpp"

#ifndef SCHISTO_DEFAULT_PRESET_DIR
#define SCHISTO_DEFAULT_PRESET_DIR "presets"
#endif

namespace schisto {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// JSON access

void check_keys(const Json& j, std::initializer_list<std::string_view> allowed, const std::string& where)
{
    if (!j.is_object()) {
        throw ConfigError(where + " must be an object");
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
            throw ConfigError(fmt::format("{}: unknown key '{}'", where, it.key()));
        }
    }
}

const Json& member(const Json& j, const std::string& key, const std::string& where)
{
    const auto it = j.find(key);
    if (it == j.end()) {
        throw ConfigError(fmt::format("{}: missing '{}'", where, key));
    }
    return *it;
}

double number(const Json& j, const std::string& key, const std::string& where)
{
    const Json& v = member(j, key, where);
    if (!v.is_number()) {
        throw ConfigError(fmt::format("{}.{} must be a number", where, key));
    }
    return v.get<double>();
}

double number_or(const Json& j, const std::string& key, double fallback, const std::string& where)
{
    return j.contains(key) ? number(j, key, where) : fallback;
}

int integer_or(const Json& j, const std::string& key, int fallback, const std::string& where)
{
    if (!j.contains(key)) {
        return fallback;
    }
    const Json& v = j.at(key);
    if (!v.is_number_integer()) {
        throw ConfigError(fmt::format("{}.{} must be an integer", where, key));
    }
    return v.get<int>();
}

std::uint64_t seed_or(const Json& j, std::uint64_t fallback, const std::string& where)
{
    if (!j.contains("seed")) {
        return fallback;
    }
    const Json& v = j.at("seed");
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw ConfigError(where + ".seed must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

bool boolean_or(const Json& j, const std::string& key, bool fallback, const std::string& where)
{
    if (!j.contains(key)) {
        return fallback;
    }
    if (!j.at(key).is_boolean()) {
        throw ConfigError(fmt::format("{}.{} must be true or false", where, key));
    }
    return j.at(key).get<bool>();
}

std::string string_or(const Json& j, const std::string& key, const std::string& fallback, const std::string& where)
{
    if (!j.contains(key)) {
        return fallback;
    }
    if (!j.at(key).is_string()) {
        throw ConfigError(fmt::format("{}.{} must be a string", where, key));
    }
    return j.at(key).get<std::string>();
}

std::vector<double> number_list(const Json& j, const std::string& where)
{
    if (!j.is_array()) {
        throw ConfigError(where + " must be a list of numbers");
    }
    std::vector<double> out;
    for (const auto& v : j) {
        if (!v.is_number()) {
            throw ConfigError(where + " must be a list of numbers");
        }
        out.push_back(v.get<double>());
    }
    return out;
}

std::vector<std::string> string_list(const Json& j, const std::string& where)
{
    if (!j.is_array()) {
        throw ConfigError(where + " must be a list of strings");
    }
    std::vector<std::string> out;
    for (const auto& v : j) {
        if (!v.is_string()) {
            throw ConfigError(where + " must be a list of strings");
        }
        out.push_back(v.get<std::string>());
    }
    return out;
}

void require_kind(const Json& j, const std::string& kind)
{
    const std::string found = string_or(j, "kind", "", "config");
    if (found != kind) {
        throw ConfigError(fmt::format("expected a '{}' config, found kind '{}'", kind, found));
    }
}

/// {start, stop, step} expands inclusively; a list is taken as is.
std::vector<double> time_list(const Json& j, const std::string& where)
{
    if (j.is_array()) {
        return number_list(j, where);
    }
    check_keys(j, {"start", "stop", "step"}, where);
    const double start = number(j, "start", where);
    const double stop = number(j, "stop", where);
    const double step = number(j, "step", where);
    if (!(step > 0.0) || stop < start) {
        throw ConfigError(where + " needs step > 0 and stop >= start");
    }
    std::vector<double> out;
    const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9));
    for (long k = 0; k <= n; ++k) {
        out.push_back(start + static_cast<double>(k) * step);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameters

SpeciesParams species_from_json(const Json& j, const std::string& where)
{
    check_keys(j, {"name", "alpha", "mu", "theta", "gamma", "beta", "omega", "controlled", "note"}, where);
    SpeciesParams s;
    s.name = string_or(j, "name", "", where);
    if (s.name.empty()) {
        throw ConfigError(where + ": species needs a name");
    }
    s.alpha = number(j, "alpha", where);
    s.mu = number(j, "mu", where);
    s.theta = number(j, "theta", where);
    s.gamma = number(j, "gamma", where);
    s.beta = number(j, "beta", where);
    s.omega = number(j, "omega", where);
    s.controlled = boolean_or(j, "controlled", false, where);
    return s;
}

Json species_to_json(const SpeciesParams& s)
{
    return Json{{"name", s.name},   {"alpha", s.alpha}, {"mu", s.mu},       {"theta", s.theta},
                {"gamma", s.gamma}, {"beta", s.beta},   {"omega", s.omega}, {"controlled", s.controlled}};
}

void validate_params(const ModelParams& p)
{
    try {
        p.validate();
    } catch (const ModelError& e) {
        throw ConfigError(std::string("invalid parameters: ") + e.what());
    }
    for (std::size_t a = 0; a < p.species.size(); ++a) {
        for (std::size_t b = a + 1; b < p.species.size(); ++b) {
            if (p.species[a].name == p.species[b].name) {
                throw ConfigError("duplicate species name '" + p.species[a].name + "'");
            }
        }
        if (p.species[a].name.find_first_of(",\"\r\n") != std::string::npos) {
            throw ConfigError("species name may not contain ',', '\"' or line breaks");
        }
    }
}

Eigen::Index species_index(const ModelParams& p, const std::string& name)
{
    for (Eigen::Index j = 0; j < p.num_species(); ++j) {
        if (p.species[static_cast<std::size_t>(j)].name == name) {
            return j;
        }
    }
    throw ConfigError("no species named '" + name + "'");
}

// ---------------------------------------------------------------------------
// Scenario pieces

InitialMode initial_mode_from(const std::string& s)
{
    if (s == "explicit") return InitialMode::kExplicit;
    if (s == "endemic-equilibrium") return InitialMode::kEndemicEquilibrium;
    if (s == "dfe2-plus-seed") return InitialMode::kDfe2PlusSeed;
    throw ConfigError("initial.mode must be explicit, endemic-equilibrium or dfe2-plus-seed, not '" + s + "'");
}

Scheme scheme_from(const std::string& s)
{
    if (s == "radau-iia") return Scheme::kRadauIIA;
    if (s == "rk4") return Scheme::kClassicalRk4;
    throw ConfigError("integrator.scheme must be radau-iia or rk4, not '" + s + "'");
}

std::string scheme_name(Scheme s)
{
    return s == Scheme::kRadauIIA ? "radau-iia" : "rk4";
}

struct Channel {
    bool active = false;
    double max = 0.0;
    double weight = 1.0;
};

Channel channel_from_json(const Json& j, double neutral, const std::string& where)
{
    check_keys(j, {"active", "max", "efficacy", "window_days", "weight", "note"}, where);
    Channel c;
    c.active = boolean_or(j, "active", true, where);
    c.weight = number_or(j, "weight", 1.0, where);
    c.max = neutral;
    const bool has_max = j.contains("max");
    const bool has_eff = j.contains("efficacy");
    if (has_max && has_eff) {
        throw ConfigError(where + ": give either max or efficacy, not both");
    }
    if (has_max) {
        c.max = number(j, "max", where);
    } else if (has_eff) {
        // removal rate whose effect over the window matches the efficacy
        const double eff = number(j, "efficacy", where);
        const double window = number(j, "window_days", where);
        if (!(eff > 0.0 && eff < 1.0) || !(window > 0.0)) {
            throw ConfigError(where + ": efficacy must lie in (0, 1) and window_days be positive");
        }
        c.max = -std::log1p(-eff) / window;
    } else if (c.active) {
        throw ConfigError(where + ": an active channel needs max or efficacy");
    }
    if (c.active && !j.contains("weight")) {
        throw ConfigError(where + ": an active channel needs a weight");
    }
    return c;
}

Json channel_to_json(bool active, double max, double weight)
{
    return Json{{"active", active}, {"max", max}, {"weight", weight}};
}

IntegratorOptions integrator_from_json(const Json& j, const std::string& where)
{
    check_keys(j, {"scheme", "newton_tolerance", "newton_max_iterations"}, where);
    IntegratorOptions o;
    o.scheme = scheme_from(string_or(j, "scheme", "radau-iia", where));
    o.newton_tolerance = number_or(j, "newton_tolerance", o.newton_tolerance, where);
    o.newton_max_iterations = integer_or(j, "newton_max_iterations", o.newton_max_iterations, where);
    return o;
}

Json integrator_to_json(const IntegratorOptions& o)
{
    return Json{{"scheme", scheme_name(o.scheme)},
                {"newton_tolerance", o.newton_tolerance},
                {"newton_max_iterations", o.newton_max_iterations}};
}

Cell optional_cell(std::optional<double> v)
{
    if (v) {
        return *v;
    }
    return std::string("not_reached");
}

Trajectory controls_as_trajectory(const ControlTrajectory& c)
{
    return Trajectory{c.grid, c.values};
}

std::vector<Eigen::Index> active_rows(const ScenarioConfig& c)
{
    std::vector<Eigen::Index> rows;
    if (c.bounds.active_a) rows.push_back(kRowUa);
    if (c.bounds.active_s) rows.push_back(kRowUs);
    if (c.bounds.active_k) rows.push_back(kRowUk);
    for (Eigen::Index j = 0; j < c.params.num_species(); ++j) {
        if (c.bounds.treatment_active(c.params, j)) {
            rows.push_back(row_um(j));
        }
    }
    return rows;
}

double time_average(const ControlTrajectory& c, Eigen::Index row)
{
    const auto& g = c.grid;
    double sum = 0.0;
    for (long k = 0; k < g.n; ++k) {
        sum += 0.5 * (c.values(row, k) + c.values(row, k + 1));
    }
    return sum / static_cast<double>(g.n);
}

void write_text_file(const fs::path& path, const std::string& text)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw ConfigError("cannot write " + path.string());
    }
    os << text;
}

void write_trajectory_file(const fs::path& path, const Trajectory& traj, const std::vector<std::string>& names)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw ConfigError("cannot write " + path.string());
    }
    write_trajectory_csv(os, traj, names);
}

std::string gnuplot_stub(const std::string& csv, const std::string& title, int first_col, int last_col,
                         int x_col = 1)
{
    return fmt::format("# gnuplot stub for {0}\n"
                       "set datafile separator ','\n"
                       "set key autotitle columnhead outside\n"
                       "set title '{1}'\n"
                       "set xlabel 't (days)'\n"
                       "plot for [i={2}:{3}] '{0}' using {4}:i with lines\n",
                       csv, title, first_col, last_col, x_col);
}

/// Long-format stub: one curve per value of column 1.
std::string gnuplot_keyed_stub(const std::string& csv, const std::string& title, const std::string& key,
                               const std::vector<double>& values, int y_col)
{
    std::string list;
    for (double v : values) {
        list += (list.empty() ? "" : " ") + format_real(v);
    }
    return fmt::format("# gnuplot stub for {0}: column {3} against t, one curve per {2}\n"
                       "set datafile separator ','\n"
                       "set title '{1}'\n"
                       "set xlabel 't (days)'\n"
                       "values = \"{4}\"\n"
                       "plot for [v in values] '{0}' using 2:(abs($1 - real(v)) < 1e-12 ? ${3} : 1/0) "
                       "every ::1 with lines title '{2} = '.v\n",
                       csv, title, key, y_col, list);
}

std::vector<std::string> infected_names(const ModelParams& p)
{
    std::vector<std::string> out;
    for (const auto& s : p.species) {
        out.push_back("M_i_" + s.name);
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Parameters

ModelParams params_from_json(const Json& j)
{
    const std::string where = "params";
    check_keys(j, {"schema_version", "kind", "note", "snail", "free_stages", "species"}, where);
    if (j.contains("kind")) {
        require_kind(j, "params");
    }
    ModelParams p;
    const Json& sn = member(j, "snail", where);
    check_keys(sn, {"alpha", "mu", "kappa", "gamma", "beta", "omega", "nu"}, "params.snail");
    p.snail.alpha = number(sn, "alpha", "params.snail");
    p.snail.mu = number(sn, "mu", "params.snail");
    p.snail.kappa = number(sn, "kappa", "params.snail");
    p.snail.gamma = number(sn, "gamma", "params.snail");
    p.snail.beta = number(sn, "beta", "params.snail");
    p.snail.omega = number(sn, "omega", "params.snail");
    p.snail.nu = number(sn, "nu", "params.snail");
    const Json& fr = member(j, "free_stages", where);
    check_keys(fr, {"mu_e", "mu_l"}, "params.free_stages");
    p.free.mu_e = number(fr, "mu_e", "params.free_stages");
    p.free.mu_l = number(fr, "mu_l", "params.free_stages");
    const Json& sp = member(j, "species", where);
    if (!sp.is_array()) {
        throw ConfigError("params.species must be a list");
    }
    for (std::size_t i = 0; i < sp.size(); ++i) {
        p.species.push_back(species_from_json(sp[i], fmt::format("params.species[{}]", i)));
    }
    validate_params(p);
    return p;
}

Json params_to_json(const ModelParams& p)
{
    Json species = Json::array();
    for (const auto& s : p.species) {
        species.push_back(species_to_json(s));
    }
    return Json{{"schema_version", kSchemaVersion},
                {"kind", "params"},
                {"snail",
                 {{"alpha", p.snail.alpha},
                  {"mu", p.snail.mu},
                  {"kappa", p.snail.kappa},
                  {"gamma", p.snail.gamma},
                  {"beta", p.snail.beta},
                  {"omega", p.snail.omega},
                  {"nu", p.snail.nu}}},
                {"free_stages", {{"mu_e", p.free.mu_e}, {"mu_l", p.free.mu_l}}},
                {"species", species}};
}

ModelParams resolve_params(const Json& block, const fs::path& base_dir)
{
    if (block.is_string()) {
        if (block.get<std::string>() != "default") {
            throw ConfigError("params must be \"default\" or an object");
        }
        return default_params();
    }
    check_keys(block, {"file", "inline", "add_species", "overrides", "note"}, "params");
    ModelParams p;
    if (block.contains("file") == block.contains("inline")) {
        throw ConfigError("params needs exactly one of 'file' or 'inline'");
    }
    if (block.contains("file")) {
        p = params_from_json(load_config_file(base_dir / string_or(block, "file", "", "params")));
    } else {
        p = params_from_json(block.at("inline"));
    }
    if (block.contains("add_species")) {
        const Json& add = block.at("add_species");
        if (!add.is_array()) {
            throw ConfigError("params.add_species must be a list");
        }
        for (std::size_t i = 0; i < add.size(); ++i) {
            p.species.push_back(species_from_json(add[i], fmt::format("params.add_species[{}]", i)));
        }
    }
    if (block.contains("overrides")) {
        const Json& ov = block.at("overrides");
        if (!ov.is_object()) {
            throw ConfigError("params.overrides must be an object");
        }
        for (auto it = ov.begin(); it != ov.end(); ++it) {
            if (!it.value().is_number()) {
                throw ConfigError("params.overrides." + it.key() + " must be a number");
            }
            try {
                set_parameter(p, it.key(), it.value().get<double>());
            } catch (const ModelError& e) {
                throw ConfigError(e.what());
            }
        }
    }
    validate_params(p);
    return p;
}

// ---------------------------------------------------------------------------
// Scenarios

std::string to_string(InitialMode mode)
{
    switch (mode) {
    case InitialMode::kExplicit:
        return "explicit";
    case InitialMode::kEndemicEquilibrium:
        return "endemic-equilibrium";
    case InitialMode::kDfe2PlusSeed:
        return "dfe2-plus-seed";
    }
    return "unknown";
}

void ScenarioConfig::validate() const
{
    validate_params(params);
    if (grid.n < 1 || !(grid.dt > 0.0)) {
        throw ConfigError("grid needs dt > 0 and at least one step");
    }
    try {
        validate_control_setup(params, weights, bounds);
    } catch (const ModelError& e) {
        throw ConfigError(e.what());
    }
    for (Eigen::Index j = 0; j < params.num_species(); ++j) {
        if (bounds.active_m[static_cast<std::size_t>(j)] && !params.species[static_cast<std::size_t>(j)].controlled) {
            throw ConfigError("treatment of '" + params.species[static_cast<std::size_t>(j)].name +
                              "' is active but the species is not marked controlled");
        }
    }
    if (!(sweep.relaxation > 0.0 && sweep.relaxation <= 1.0) || !(sweep.tolerance > 0.0) ||
        sweep.max_iterations < 0) {
        throw ConfigError("sweep needs relaxation in (0, 1], tolerance > 0, max_iterations >= 0");
    }
    if (initial.mode == InitialMode::kExplicit && initial.state.size() != params.dim()) {
        throw ConfigError(fmt::format("explicit initial state has {} entries, the model has {}",
                                      initial.state.size(), params.dim()));
    }
    if (initial.mode == InitialMode::kDfe2PlusSeed && !(initial.seed_fraction >= 0.0 && initial.seed_fraction < 1.0)) {
        throw ConfigError("initial.seed_fraction must lie in [0, 1)");
    }
    for (const auto& name : initial.equilibrium_excludes) {
        species_index(params, name);
    }
    for (const auto& [name, value] : initial.prevalence) {
        species_index(params, name);
        if (!(value >= 0.0 && value <= 1.0)) {
            throw ConfigError("initial.prevalence." + name + " must lie in [0, 1]");
        }
    }
}

ScenarioConfig scenario_from_json(const Json& j, const fs::path& base_dir)
{
    const std::string where = "scenario";
    check_keys(j, {"schema_version", "kind", "name", "notes", "params", "initial", "grid", "controls", "sweep",
                   "integrator", "seed"},
               where);
    require_kind(j, "scenario");
    ScenarioConfig c;
    c.name = string_or(j, "name", "", where);
    c.notes = string_or(j, "notes", "", where);
    c.params = resolve_params(member(j, "params", where), base_dir);
    const Eigen::Index m = c.params.num_species();

    if (j.contains("initial")) {
        const Json& in = j.at("initial");
        check_keys(in, {"mode", "state", "seed_fraction", "equilibrium_excludes", "prevalence", "note"},
                   "initial");
        c.initial.mode = initial_mode_from(string_or(in, "mode", "endemic-equilibrium", "initial"));
        if (in.contains("state")) {
            const auto v = number_list(in.at("state"), "initial.state");
            c.initial.state = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
        }
        c.initial.seed_fraction = number_or(in, "seed_fraction", c.initial.seed_fraction, "initial");
        if (in.contains("equilibrium_excludes")) {
            c.initial.equilibrium_excludes = string_list(in.at("equilibrium_excludes"), "initial.equilibrium_excludes");
        }
        if (in.contains("prevalence")) {
            const Json& pr = in.at("prevalence");
            if (!pr.is_object()) {
                throw ConfigError("initial.prevalence must map species names to fractions");
            }
            for (auto it = pr.begin(); it != pr.end(); ++it) {
                if (!it.value().is_number()) {
                    throw ConfigError("initial.prevalence." + it.key() + " must be a number");
                }
                c.initial.prevalence.emplace_back(it.key(), it.value().get<double>());
            }
        }
    }

    const Json& g = member(j, "grid", where);
    check_keys(g, {"t0", "t_end", "dt"}, "grid");
    try {
        c.grid = TimeGrid::uniform(number_or(g, "t0", 0.0, "grid"), number(g, "t_end", "grid"),
                                   number(g, "dt", "grid"));
    } catch (const ModelError& e) {
        throw ConfigError(e.what());
    }

    c.weights.a_m = Eigen::VectorXd::Ones(m);
    c.bounds.active_m.assign(static_cast<std::size_t>(m), false);
    c.bounds.u_m_max = Eigen::VectorXd::Zero(m);
    if (j.contains("controls")) {
        const Json& ctl = j.at("controls");
        check_keys(ctl, {"u_a", "u_s", "u_k", "treatment", "note"}, "controls");
        if (ctl.contains("u_a")) {
            const Channel ch = channel_from_json(ctl.at("u_a"), 0.0, "controls.u_a");
            c.bounds.active_a = ch.active;
            c.bounds.u_a_max = ch.max;
            c.weights.a_a = ch.weight;
        }
        if (ctl.contains("u_s")) {
            const Channel ch = channel_from_json(ctl.at("u_s"), 0.0, "controls.u_s");
            c.bounds.active_s = ch.active;
            c.bounds.u_s_max = ch.max;
            c.weights.a_s = ch.weight;
        }
        if (ctl.contains("u_k")) {
            const Channel ch = channel_from_json(ctl.at("u_k"), 1.0, "controls.u_k");
            c.bounds.active_k = ch.active;
            c.bounds.u_k_max = ch.max;
            c.weights.a_k = ch.weight;
        }
        if (ctl.contains("treatment")) {
            const Json& tr = ctl.at("treatment");
            if (!tr.is_object()) {
                throw ConfigError("controls.treatment must map species names to channels");
            }
            for (auto it = tr.begin(); it != tr.end(); ++it) {
                const Eigen::Index sj = species_index(c.params, it.key());
                const Channel ch = channel_from_json(it.value(), 0.0, "controls.treatment." + it.key());
                c.bounds.active_m[static_cast<std::size_t>(sj)] = ch.active;
                c.bounds.u_m_max(sj) = ch.max;
                c.weights.a_m(sj) = ch.weight;
            }
        }
    }

    if (j.contains("sweep")) {
        const Json& s = j.at("sweep");
        check_keys(s, {"relaxation", "tolerance", "max_iterations"}, "sweep");
        c.sweep.relaxation = number_or(s, "relaxation", c.sweep.relaxation, "sweep");
        c.sweep.tolerance = number_or(s, "tolerance", c.sweep.tolerance, "sweep");
        c.sweep.max_iterations = integer_or(s, "max_iterations", c.sweep.max_iterations, "sweep");
    }
    if (j.contains("integrator")) {
        c.sweep.integrator = integrator_from_json(j.at("integrator"), "integrator");
    }
    c.seed = seed_or(j, 0, where);
    c.validate();
    return c;
}

Json scenario_to_json(const ScenarioConfig& c)
{
    Json initial{{"mode", to_string(c.initial.mode)}};
    if (c.initial.mode == InitialMode::kExplicit) {
        initial["state"] = std::vector<double>(c.initial.state.data(), c.initial.state.data() + c.initial.state.size());
    }
    if (c.initial.mode == InitialMode::kDfe2PlusSeed) {
        initial["seed_fraction"] = c.initial.seed_fraction;
    }
    if (!c.initial.equilibrium_excludes.empty()) {
        initial["equilibrium_excludes"] = c.initial.equilibrium_excludes;
    }
    if (!c.initial.prevalence.empty()) {
        Json pr = Json::object();
        for (const auto& [name, value] : c.initial.prevalence) {
            pr[name] = value;
        }
        initial["prevalence"] = pr;
    }

    Json treatment = Json::object();
    for (Eigen::Index j = 0; j < c.params.num_species(); ++j) {
        const auto& s = c.params.species[static_cast<std::size_t>(j)];
        if (s.controlled) {
            treatment[s.name] =
                channel_to_json(c.bounds.active_m[static_cast<std::size_t>(j)], c.bounds.u_m_max(j), c.weights.a_m(j));
        }
    }

    Json params_json = params_to_json(c.params);
    params_json.erase("schema_version");
    params_json.erase("kind");
    return Json{{"schema_version", kSchemaVersion},
                {"kind", "scenario"},
                {"name", c.name},
                {"notes", c.notes},
                {"params", {{"inline", params_json}}},
                {"initial", initial},
                {"grid", {{"t0", c.grid.t0}, {"t_end", c.grid.t_end}, {"dt", c.grid.dt}}},
                {"controls",
                 {{"u_a", channel_to_json(c.bounds.active_a, c.bounds.u_a_max, c.weights.a_a)},
                  {"u_s", channel_to_json(c.bounds.active_s, c.bounds.u_s_max, c.weights.a_s)},
                  {"u_k", channel_to_json(c.bounds.active_k, c.bounds.u_k_max, c.weights.a_k)},
                  {"treatment", treatment}}},
                {"sweep",
                 {{"relaxation", c.sweep.relaxation},
                  {"tolerance", c.sweep.tolerance},
                  {"max_iterations", c.sweep.max_iterations}}},
                {"integrator", integrator_to_json(c.sweep.integrator)},
                {"seed", c.seed}};
}

State resolve_initial_state(const ScenarioConfig& c)
{
    const ModelParams& p = c.params;
    State x;
    switch (c.initial.mode) {
    case InitialMode::kExplicit:
        x = c.initial.state;
        break;
    case InitialMode::kDfe2PlusSeed:
        try {
            x = seeded_dfe2(p, c.initial.seed_fraction);
        } catch (const EquilibriumError& e) {
            throw ConfigError(std::string("dfe2-plus-seed start is unavailable: ") + e.what());
        }
        break;
    case InitialMode::kEndemicEquilibrium: {
        ModelParams sub = p;
        sub.species.clear();
        for (const auto& s : p.species) {
            if (std::find(c.initial.equilibrium_excludes.begin(), c.initial.equilibrium_excludes.end(), s.name) ==
                c.initial.equilibrium_excludes.end()) {
                sub.species.push_back(s);
            }
        }
        if (sub.species.empty()) {
            throw ConfigError("initial.equilibrium_excludes removes every species");
        }
        double threshold = 0.0;
        try {
            threshold = r0(sub).r0;
        } catch (const EquilibriumError& e) {
            throw ConfigError(std::string("no endemic equilibrium: ") + e.what() +
                              "; use initial.mode dfe2-plus-seed or explicit");
        }
        if (!(threshold > 1.0)) {
            throw ConfigError(fmt::format("no endemic equilibrium: r0 = {} <= 1; use initial.mode dfe2-plus-seed or "
                                          "explicit, or raise transmission parameters",
                                          format_real(threshold)));
        }
        State ee;
        try {
            ee = endemic_equilibrium(sub).state;
        } catch (const EquilibriumError& e) {
            throw ConfigError(std::string("endemic equilibrium not found: ") + e.what());
        }
        x = State::Zero(p.dim());
        x.head(4) = ee.head(4);
        Eigen::Index k = 0;
        for (Eigen::Index j = 0; j < p.num_species(); ++j) {
            const auto& s = p.species[static_cast<std::size_t>(j)];
            if (k < sub.num_species() && sub.species[static_cast<std::size_t>(k)].name == s.name) {
                x(layout::susceptible(j)) = ee(layout::susceptible(k));
                x(layout::infected(j)) = ee(layout::infected(k));
                ++k;
            } else {
                x(layout::susceptible(j)) = s.alpha / s.mu;
            }
        }
        break;
    }
    }
    for (const auto& [name, value] : c.initial.prevalence) {
        const Eigen::Index j = species_index(p, name);
        const double total = x(layout::susceptible(j)) + x(layout::infected(j));
        x(layout::infected(j)) = value * total;
        x(layout::susceptible(j)) = total - x(layout::infected(j));
    }
    if (x.size() != p.dim() || !x.allFinite() || (x.array() < 0.0).any()) {
        throw ConfigError("initial state must be finite and non-negative");
    }
    return x;
}

ScenarioResult run_scenario(const ScenarioConfig& config)
{
    config.validate();
    ScenarioResult res;
    res.config = config;
    res.initial = resolve_initial_state(config);
    const ModelParams& p = config.params;
    res.controlled = config.bounds.any_active(p);
    if (res.controlled) {
        SweepResult s =
            forward_backward_sweep(p, res.initial, config.grid, config.weights, config.bounds, config.sweep);
        res.state = std::move(s.state);
        res.controls = std::move(s.controls);
        res.adjoint = std::move(s.adjoint);
        res.converged = s.converged;
        res.iterations = s.iterations;
        res.last_change = s.last_change;
        res.descent_violations = s.descent_violations;
        res.objective_history = std::move(s.objective_history);
        res.objective = res.objective_history.back();
    } else {
        res.controls = ControlTrajectory::neutral(config.grid, p.num_species());
        res.state = simulate_controlled(p, res.initial, res.controls, config.sweep.integrator);
        res.objective = objective(res.state, res.controls, p, config.weights);
        res.objective_history = {res.objective};
        res.adjoint.grid = config.grid;
    }
    return res;
}

std::optional<double> days_to_reduction(const Trajectory& traj, Eigen::Index index, double fraction)
{
    const double start = traj.values(index, 0);
    const double target = fraction * start;
    for (long k = 0; k <= traj.grid.n; ++k) {
        if (start - traj.values(index, k) >= target) {
            return traj.grid.time(k) - traj.grid.t0;
        }
    }
    return std::nullopt;
}

double days_active(const ControlTrajectory& controls, Eigen::Index row, double lower, double upper, double fraction)
{
    if (!(upper > lower)) {
        return 0.0;
    }
    const double threshold = lower + fraction * (upper - lower);
    long count = 0;
    for (long k = 0; k < controls.grid.n; ++k) {
        if (controls.values(row, k) > threshold) {
            ++count;
        }
    }
    return static_cast<double>(count) * controls.grid.dt;
}

std::pair<double, double> channel_range(const ScenarioConfig& c, Eigen::Index row)
{
    if (row == kRowUa) return {0.0, c.bounds.active_a ? c.bounds.u_a_max : 0.0};
    if (row == kRowUs) return {0.0, c.bounds.active_s ? c.bounds.u_s_max : 0.0};
    if (row == kRowUk) return {1.0, c.bounds.active_k ? c.bounds.u_k_max : 1.0};
    const Eigen::Index j = row - 3;
    return {0.0, c.bounds.treatment_active(c.params, j) ? c.bounds.u_m_max(j) : 0.0};
}

Table scenario_summary(const ScenarioResult& r)
{
    const ModelParams& p = r.config.params;
    Table t;
    t.header = {"quantity", "item", "value"};
    t.rows.push_back({std::string("converged"), std::string("run"), r.converged ? 1.0 : 0.0});
    t.rows.push_back({std::string("iterations"), std::string("run"), static_cast<double>(r.iterations)});
    t.rows.push_back({std::string("last_change"), std::string("run"), r.last_change});
    t.rows.push_back({std::string("descent_violations"), std::string("run"), static_cast<double>(r.descent_violations)});
    t.rows.push_back({std::string("objective"), std::string("run"), r.objective});
    for (Eigen::Index j = 0; j < p.num_species(); ++j) {
        const std::string& name = p.species[static_cast<std::size_t>(j)].name;
        t.rows.push_back({std::string("initial_infected"), name, r.state.values(layout::infected(j), 0)});
        t.rows.push_back({std::string("final_infected"), name, r.state.final()(layout::infected(j))});
        t.rows.push_back({std::string("reduction_90pct_day"), name,
                          optional_cell(days_to_reduction(r.state, layout::infected(j), 0.9))});
    }
    const auto names = control_channel_names(p);
    for (Eigen::Index row = 0; row < r.controls.values.rows(); ++row) {
        const auto [lo, hi] = channel_range(r.config, row);
        t.rows.push_back({std::string("days_active"), names[static_cast<std::size_t>(row)],
                          days_active(r.controls, row, lo, hi)});
        t.rows.push_back({std::string("mean_control"), names[static_cast<std::size_t>(row)],
                          time_average(r.controls, row)});
    }
    return t;
}

std::vector<std::string> write_scenario_outputs(const ScenarioResult& r, const fs::path& dir)
{
    fs::create_directories(dir);
    const ModelParams& p = r.config.params;
    std::vector<std::string> files;
    write_trajectory_file(dir / "state.csv", r.state, component_names(p));
    files.push_back("state.csv");
    write_trajectory_file(dir / "controls.csv", controls_as_trajectory(r.controls), control_channel_names(p));
    files.push_back("controls.csv");
    if (r.controlled) {
        std::vector<std::string> names;
        for (const auto& n : component_names(p)) {
            names.push_back("lambda_" + n);
        }
        write_trajectory_file(dir / "adjoint.csv", r.adjoint, names);
        files.push_back("adjoint.csv");
    }
    Table conv;
    conv.header = {"iteration", "objective"};
    for (std::size_t i = 0; i < r.objective_history.size(); ++i) {
        conv.rows.push_back({static_cast<double>(i), r.objective_history[i]});
    }
    write_csv_file(dir / "convergence.csv", conv);
    files.push_back("convergence.csv");
    write_csv_file(dir / "summary.csv", scenario_summary(r));
    files.push_back("summary.csv");
    return files;
}

// ---------------------------------------------------------------------------
// Sweeps

void SweepSpec::validate() const
{
    base.validate();
    if (output_stride < 1) {
        throw ConfigError("sweep output_stride must be positive");
    }
    if (kind == SweepKind::kCompliance) {
        if (targets.empty()) {
            throw ConfigError("compliance sweep needs target channels");
        }
        const auto names = control_channel_names(base.params);
        for (const auto& t : targets) {
            const auto it = std::find(names.begin(), names.end(), t);
            if (it == names.end()) {
                throw ConfigError("compliance target '" + t + "' is not a control channel");
            }
            const auto row = static_cast<Eigen::Index>(it - names.begin());
            const auto [lo, hi] = channel_range(base, row);
            if (!(hi > lo)) {
                throw ConfigError("compliance target '" + t + "' is not active in the base scenario");
            }
        }
        for (double v : values) {
            if (!(v > 0.0 && v <= 1.0)) {
                throw ConfigError("compliance values must lie in (0, 1]");
            }
        }
    } else {
        if (targets.size() != 1) {
            throw ConfigError("prevalence sweep needs exactly one target species");
        }
        species_index(base.params, targets.front());
        for (double v : values) {
            if (!(v >= 0.0 && v < 1.0)) {
                throw ConfigError("prevalence values must lie in [0, 1)");
            }
        }
    }
}

SweepSpec sweep_from_json(const Json& j, const fs::path& base_dir)
{
    const std::string where = "sweep";
    check_keys(j,
               {"schema_version", "kind", "name", "notes", "quantity", "targets", "values", "output_stride", "base",
                "base_preset", "base_file", "seed"},
               where);
    require_kind(j, "sweep");
    SweepSpec s;
    const std::string q = string_or(j, "quantity", "", where);
    if (q == "compliance") {
        s.kind = SweepKind::kCompliance;
    } else if (q == "prevalence") {
        s.kind = SweepKind::kPrevalence;
    } else {
        throw ConfigError("sweep.quantity must be compliance or prevalence");
    }
    s.targets = string_list(member(j, "targets", where), "sweep.targets");
    s.values = number_list(member(j, "values", where), "sweep.values");
    s.output_stride = integer_or(j, "output_stride", s.output_stride, where);
    const int sources = static_cast<int>(j.contains("base")) + static_cast<int>(j.contains("base_preset")) +
                        static_cast<int>(j.contains("base_file"));
    if (sources != 1) {
        throw ConfigError("sweep needs exactly one of base, base_preset or base_file");
    }
    if (j.contains("base")) {
        s.base = scenario_from_json(j.at("base"), base_dir);
    } else {
        const fs::path path = j.contains("base_preset") ? preset_path(string_or(j, "base_preset", "", where))
                                                        : base_dir / string_or(j, "base_file", "", where);
        s.base = scenario_from_json(load_config_file(path), path.parent_path());
    }
    if (j.contains("seed")) {
        s.base.seed = seed_or(j, 0, where);
    }
    s.validate();
    return s;
}

Json sweep_to_json(const SweepSpec& s)
{
    return Json{{"schema_version", kSchemaVersion},
                {"kind", "sweep"},
                {"quantity", s.kind == SweepKind::kCompliance ? "compliance" : "prevalence"},
                {"targets", s.targets},
                {"values", s.values},
                {"output_stride", s.output_stride},
                {"base", scenario_to_json(s.base)}};
}

ScenarioConfig sweep_case(const SweepSpec& spec, std::size_t index)
{
    ScenarioConfig c = spec.base;
    const double v = spec.values.at(index);
    if (spec.kind == SweepKind::kCompliance) {
        const auto names = control_channel_names(c.params);
        for (const auto& t : spec.targets) {
            const auto row = static_cast<Eigen::Index>(std::find(names.begin(), names.end(), t) - names.begin());
            if (row == kRowUa) {
                c.bounds.u_a_max *= v;
            } else if (row == kRowUs) {
                c.bounds.u_s_max *= v;
            } else if (row == kRowUk) {
                c.bounds.u_k_max = 1.0 + v * (c.bounds.u_k_max - 1.0);
            } else {
                c.bounds.u_m_max(row - 3) *= v;
            }
        }
        c.name = fmt::format("{} compliance={}", c.name, format_real(v));
    } else {
        auto& prev = c.initial.prevalence;
        prev.erase(std::remove_if(prev.begin(), prev.end(),
                                  [&](const auto& e) { return e.first == spec.targets.front(); }),
                   prev.end());
        prev.emplace_back(spec.targets.front(), v);
        c.name = fmt::format("{} prevalence={}", c.name, format_real(v));
    }
    return c;
}

bool SweepOutcome::all_ok() const
{
    return std::all_of(runs.begin(), runs.end(), [](const SweepRun& r) { return r.ok; });
}

SweepOutcome run_sweep(const SweepSpec& spec)
{
    spec.validate();
    SweepOutcome out;
    out.spec = spec;
    for (std::size_t i = 0; i < spec.values.size(); ++i) {
        SweepRun run;
        run.value = spec.values[i];
        try {
            run.result = run_scenario(sweep_case(spec, i));
            run.ok = true;
        } catch (const std::exception& e) {
            run.error = e.what();
        }
        out.runs.push_back(std::move(run));
    }
    return out;
}

Table sweep_long_table(const SweepOutcome& o)
{
    const ModelParams& p = o.spec.base.params;
    const auto names = control_channel_names(p);
    const auto rows = active_rows(o.spec.base);
    Table t;
    t.header = {"value", "t", "channel", "level"};
    for (const auto& n : infected_names(p)) {
        t.header.push_back(n);
    }
    for (const auto& run : o.runs) {
        if (!run.ok) {
            continue;
        }
        const auto& r = run.result;
        for (long k = 0; k <= r.state.grid.n; k += o.spec.output_stride) {
            for (Eigen::Index row : rows) {
                std::vector<Cell> line{run.value, r.state.grid.time(k), names[static_cast<std::size_t>(row)],
                                       r.controls.values(row, k)};
                for (Eigen::Index j = 0; j < p.num_species(); ++j) {
                    line.emplace_back(r.state.values(layout::infected(j), k));
                }
                t.rows.push_back(std::move(line));
            }
        }
    }
    return t;
}

Table sweep_summary_table(const SweepOutcome& o)
{
    const ModelParams& p = o.spec.base.params;
    const auto names = control_channel_names(p);
    const auto rows = active_rows(o.spec.base);
    Table t;
    t.header = {"value", "status", "converged", "iterations", "objective"};
    for (Eigen::Index row : rows) {
        t.header.push_back("days_active_" + names[static_cast<std::size_t>(row)]);
        t.header.push_back("mean_" + names[static_cast<std::size_t>(row)]);
    }
    for (const auto& n : infected_names(p)) {
        t.header.push_back("final_" + n);
    }
    for (const auto& run : o.runs) {
        std::vector<Cell> line{run.value, std::string(run.ok ? "ok" : "error")};
        if (!run.ok) {
            line.resize(t.header.size(), std::string("none"));
            t.rows.push_back(std::move(line));
            continue;
        }
        const auto& r = run.result;
        line.emplace_back(r.converged ? 1.0 : 0.0);
        line.emplace_back(static_cast<double>(r.iterations));
        line.emplace_back(r.objective);
        for (Eigen::Index row : rows) {
            const auto [lo, hi] = channel_range(r.config, row);
            line.emplace_back(days_active(r.controls, row, lo, hi));
            line.emplace_back(time_average(r.controls, row));
        }
        for (Eigen::Index j = 0; j < p.num_species(); ++j) {
            line.emplace_back(r.state.final()(layout::infected(j)));
        }
        t.rows.push_back(std::move(line));
    }
    return t;
}

std::vector<std::string> write_sweep_outputs(const SweepOutcome& o, const fs::path& dir)
{
    fs::create_directories(dir);
    std::vector<std::string> files;
    for (std::size_t i = 0; i < o.runs.size(); ++i) {
        const std::string sub = fmt::format("run_{:03d}", i);
        const auto& run = o.runs[i];
        if (run.ok) {
            for (const auto& f : write_scenario_outputs(run.result, dir / sub)) {
                files.push_back(sub + "/" + f);
            }
        } else {
            fs::create_directories(dir / sub);
            write_text_file(dir / sub / "error.txt", run.error + "\n");
            files.push_back(sub + "/error.txt");
        }
    }
    write_csv_file(dir / "sweep_long.csv", sweep_long_table(o));
    files.push_back("sweep_long.csv");
    write_csv_file(dir / "sweep_summary.csv", sweep_summary_table(o));
    files.push_back("sweep_summary.csv");
    return files;
}

// ---------------------------------------------------------------------------
// Plot data

std::vector<std::string> emit_plot_data(const ScenarioResult& r, const fs::path& dir)
{
    fs::create_directories(dir);
    const ModelParams& p = r.config.params;
    std::vector<std::string> files;
    const auto comps = component_names(p);
    const auto chans = control_channel_names(p);

    write_trajectory_file(dir / "fig2_states.csv", r.state, comps);
    write_text_file(dir / "fig2_states.gp",
                    gnuplot_stub("fig2_states.csv", "states", 2, static_cast<int>(comps.size()) + 1));
    write_trajectory_file(dir / "fig3_controls.csv", controls_as_trajectory(r.controls), chans);
    write_text_file(dir / "fig3_controls.gp",
                    gnuplot_stub("fig3_controls.csv", "controls", 2, static_cast<int>(chans.size()) + 1));
    files.insert(files.end(), {"fig2_states.csv", "fig2_states.gp", "fig3_controls.csv", "fig3_controls.gp"});

    bool every = r.config.bounds.active_a && r.config.bounds.active_s && r.config.bounds.active_k;
    for (Eigen::Index j = 0; j < p.num_species(); ++j) {
        if (p.species[static_cast<std::size_t>(j)].controlled && !r.config.bounds.treatment_active(p, j)) {
            every = false;
        }
    }
    if (every) {
        Table t;
        t.header = {"t"};
        for (const auto& n : infected_names(p)) {
            t.header.push_back(n);
        }
        t.header.push_back("total_infected");
        t.header.insert(t.header.end(), chans.begin(), chans.end());
        for (long k = 0; k <= r.state.grid.n; ++k) {
            std::vector<Cell> line{r.state.grid.time(k)};
            double total = 0.0;
            for (Eigen::Index j = 0; j < p.num_species(); ++j) {
                line.emplace_back(r.state.values(layout::infected(j), k));
                total += r.state.values(layout::infected(j), k);
            }
            line.emplace_back(total);
            for (Eigen::Index row = 0; row < r.controls.values.rows(); ++row) {
                line.emplace_back(r.controls.values(row, k));
            }
            t.rows.push_back(std::move(line));
        }
        write_csv_file(dir / "fig7_integrated.csv", t);
        write_text_file(dir / "fig7_integrated.gp",
                        gnuplot_stub("fig7_integrated.csv", "integrated strategy", 2,
                                     static_cast<int>(t.header.size())));
        files.insert(files.end(), {"fig7_integrated.csv", "fig7_integrated.gp"});
    }
    return files;
}

std::vector<std::string> emit_plot_data(const SweepOutcome& o, const fs::path& dir)
{
    fs::create_directories(dir);
    const ModelParams& p = o.spec.base.params;
    const auto chans = control_channel_names(p);
    const auto comps = component_names(p);
    std::vector<std::string> files;

    const auto keyed = [&](const std::string& key, bool states) {
        Table t;
        t.header = {key, "t"};
        const auto& cols = states ? comps : chans;
        t.header.insert(t.header.end(), cols.begin(), cols.end());
        for (const auto& run : o.runs) {
            if (!run.ok) {
                continue;
            }
            const auto& r = run.result;
            for (long k = 0; k <= r.state.grid.n; k += o.spec.output_stride) {
                std::vector<Cell> line{run.value, r.state.grid.time(k)};
                const Eigen::MatrixXd& m = states ? r.state.values : r.controls.values;
                for (Eigen::Index i = 0; i < m.rows(); ++i) {
                    line.emplace_back(m(i, k));
                }
                t.rows.push_back(std::move(line));
            }
        }
        return t;
    };

    std::vector<double> values;
    for (const auto& run : o.runs) {
        if (run.ok) {
            values.push_back(run.value);
        }
    }
    if (o.spec.kind == SweepKind::kCompliance) {
        write_csv_file(dir / "fig4_compliance.csv", keyed("compliance", false));
        const auto it = std::find(chans.begin(), chans.end(), o.spec.targets.front());
        write_text_file(dir / "fig4_compliance.gp",
                        gnuplot_keyed_stub("fig4_compliance.csv", o.spec.targets.front(), "compliance", values,
                                           static_cast<int>(it - chans.begin()) + 3));
        files.insert(files.end(), {"fig4_compliance.csv", "fig4_compliance.gp"});
    } else {
        write_csv_file(dir / "fig5_rodents_states.csv", keyed("prevalence", true));
        write_text_file(dir / "fig5_rodents_states.gp",
                        gnuplot_keyed_stub("fig5_rodents_states.csv", "M_i_" + p.species.front().name, "prevalence",
                                           values, layout::infected(0) + 3));
        write_csv_file(dir / "fig6_rodents_controls.csv", keyed("prevalence", false));
        Eigen::Index row = kRowUa;
        for (Eigen::Index j = p.num_species() - 1; j >= 0; --j) {
            if (o.spec.base.bounds.treatment_active(p, j)) {
                row = row_um(j);
                break;
            }
        }
        write_text_file(dir / "fig6_rodents_controls.gp",
                        gnuplot_keyed_stub("fig6_rodents_controls.csv", chans[static_cast<std::size_t>(row)],
                                           "prevalence", values, static_cast<int>(row) + 3));
        files.insert(files.end(), {"fig5_rodents_states.csv", "fig5_rodents_states.gp", "fig6_rodents_controls.csv",
                                   "fig6_rodents_controls.gp"});
    }
    return files;
}

// ---------------------------------------------------------------------------
// Calibration runs

CalibrationConfig calibration_from_json(const Json& j, const fs::path& base_dir)
{
    const std::string where = "calibration";
    check_keys(j,
               {"schema_version", "kind", "name", "notes", "params", "seed_fraction", "data", "prior", "abc",
                "simulation", "refine", "seed"},
               where);
    require_kind(j, "calibration");
    CalibrationConfig c;
    c.params = resolve_params(j.contains("params") ? j.at("params") : Json("default"), base_dir);
    c.seed_fraction = number_or(j, "seed_fraction", c.seed_fraction, where);
    c.seed = seed_or(j, 0, where);

    const Json& d = member(j, "data", where);
    check_keys(d, {"synthetic", "file", "inline"}, "data");
    if (d.size() != 1) {
        throw ConfigError("data needs exactly one of synthetic, file or inline");
    }
    if (d.contains("synthetic")) {
        const Json& s = d.at("synthetic");
        check_keys(s, {"noise_sd", "times"}, "data.synthetic");
        c.synthetic = true;
        c.noise_sd = number_or(s, "noise_sd", 0.0, "data.synthetic");
        c.times = time_list(member(s, "times", "data.synthetic"), "data.synthetic.times");
    } else {
        c.synthetic = false;
        if (d.contains("file")) {
            std::ifstream is(base_dir / d.at("file").get<std::string>(), std::ios::binary);
            if (!is) {
                throw ConfigError("cannot read observations " + (base_dir / d.at("file").get<std::string>()).string());
            }
            c.data = read_prevalence_csv(is);
        } else {
            const Json& in = d.at("inline");
            check_keys(in, {"times", "species", "values"}, "data.inline");
            c.data.times = number_list(member(in, "times", "data.inline"), "data.inline.times");
            c.data.species = string_list(member(in, "species", "data.inline"), "data.inline.species");
            const Json& rows = member(in, "values", "data.inline");
            if (!rows.is_array() || rows.size() != c.data.times.size()) {
                throw ConfigError("data.inline.values needs one row per time");
            }
            c.data.values.resize(static_cast<Eigen::Index>(c.data.times.size()),
                                 static_cast<Eigen::Index>(c.data.species.size()));
            for (std::size_t r = 0; r < rows.size(); ++r) {
                const auto v = number_list(rows[r], "data.inline.values");
                if (v.size() != c.data.species.size()) {
                    throw ConfigError("data.inline.values rows need one entry per species");
                }
                for (std::size_t k = 0; k < v.size(); ++k) {
                    c.data.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = v[k];
                }
            }
        }
        try {
            c.data.validate();
        } catch (const ModelError& e) {
            throw ConfigError(e.what());
        }
        for (const auto& s : c.data.species) {
            species_index(c.params, s);
        }
        c.times = c.data.times;
    }

    if (j.contains("prior") && !(j.at("prior").is_string() && j.at("prior").get<std::string>() == "default")) {
        const Json& pr = j.at("prior");
        if (!pr.is_array()) {
            throw ConfigError("prior must be \"default\" or a list of {name, lower, upper}");
        }
        for (const auto& b : pr) {
            check_keys(b, {"name", "lower", "upper"}, "prior");
            c.prior.push_back({string_or(b, "name", "", "prior"), number(b, "lower", "prior"),
                               number(b, "upper", "prior")});
        }
    } else {
        c.prior = default_prior(c.params);
    }

    if (j.contains("abc")) {
        const Json& a = j.at("abc");
        check_keys(a, {"draws", "accept_fraction"}, "abc");
        c.abc.n_draws = integer_or(a, "draws", c.abc.n_draws, "abc");
        c.abc.accept_fraction = number_or(a, "accept_fraction", c.abc.accept_fraction, "abc");
    }
    c.abc.simulation.dt = 0.5;
    if (j.contains("simulation")) {
        const Json& s = j.at("simulation");
        check_keys(s, {"dt", "integrator"}, "simulation");
        c.abc.simulation.dt = number_or(s, "dt", c.abc.simulation.dt, "simulation");
        if (s.contains("integrator")) {
            c.abc.simulation.integrator = integrator_from_json(s.at("integrator"), "simulation.integrator");
        }
    }
    if (!(c.abc.simulation.dt > 0.0)) {
        throw ConfigError("simulation.dt must be positive");
    }
    c.refine_options.simulation = c.abc.simulation;
    if (j.contains("refine")) {
        const Json& r = j.at("refine");
        check_keys(r, {"enabled", "initial_step", "min_step", "max_evaluations"}, "refine");
        c.refine = boolean_or(r, "enabled", c.refine, "refine");
        c.refine_options.initial_step = number_or(r, "initial_step", c.refine_options.initial_step, "refine");
        c.refine_options.min_step = number_or(r, "min_step", c.refine_options.min_step, "refine");
        c.refine_options.max_evaluations =
            integer_or(r, "max_evaluations", c.refine_options.max_evaluations, "refine");
    }
    if (c.times.empty()) {
        throw ConfigError("calibration needs observation times");
    }
    return c;
}

Json calibration_to_json(const CalibrationConfig& c)
{
    Json params_json = params_to_json(c.params);
    params_json.erase("schema_version");
    params_json.erase("kind");
    Json data;
    if (c.synthetic) {
        data = {{"synthetic", {{"noise_sd", c.noise_sd}, {"times", c.times}}}};
    } else {
        Json rows = Json::array();
        for (Eigen::Index r = 0; r < c.data.values.rows(); ++r) {
            std::vector<double> row;
            for (Eigen::Index k = 0; k < c.data.values.cols(); ++k) {
                row.push_back(c.data.values(r, k));
            }
            rows.push_back(row);
        }
        data = {{"inline", {{"times", c.data.times}, {"species", c.data.species}, {"values", rows}}}};
    }
    Json prior = Json::array();
    for (const auto& b : c.prior) {
        prior.push_back({{"name", b.name}, {"lower", b.lower}, {"upper", b.upper}});
    }
    return Json{{"schema_version", kSchemaVersion},
                {"kind", "calibration"},
                {"params", {{"inline", params_json}}},
                {"seed_fraction", c.seed_fraction},
                {"data", data},
                {"prior", prior},
                {"abc", {{"draws", c.abc.n_draws}, {"accept_fraction", c.abc.accept_fraction}}},
                {"simulation",
                 {{"dt", c.abc.simulation.dt}, {"integrator", integrator_to_json(c.abc.simulation.integrator)}}},
                {"refine",
                 {{"enabled", c.refine},
                  {"initial_step", c.refine_options.initial_step},
                  {"min_step", c.refine_options.min_step},
                  {"max_evaluations", c.refine_options.max_evaluations}}},
                {"seed", c.seed}};
}

CalibrationResult run_calibration(const CalibrationConfig& c)
{
    CalibrationResult out;
    State initial;
    try {
        initial = seeded_dfe2(c.params, c.seed_fraction);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("calibration start state is unavailable: ") + e.what());
    }
    if (c.synthetic) {
        // a separate stream from the ABC draws
        out.data = synth_data(c.params, initial, c.times, c.noise_sd, draw_seed(c.seed, 0xffffffffULL),
                              c.abc.simulation);
    } else {
        out.data = c.data;
    }
    AbcOptions abc = c.abc;
    abc.seed = c.seed;
    out.posterior = abc_rejection(c.prior, out.data, c.params, initial, abc);
    if (c.refine) {
        out.refined = refine_fit(out.posterior.accepted.row(0).transpose(), c.prior, out.data, c.params, initial,
                                 c.refine_options);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Commands and manifests

std::string file_digest(const fs::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw ConfigError("cannot read " + path.string());
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (is.read(buf, sizeof buf) || is.gcount() > 0) {
        for (std::streamsize i = 0; i < is.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return fmt::format("{:016x}", h);
}

Json load_config_file(const fs::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw ConfigError("cannot read config " + path.string());
    }
    Json j;
    try {
        j = Json::parse(is);
    } catch (const Json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("schema_version")) {
        throw ConfigError(path.string() + ": missing schema_version");
    }
    if (!j.at("schema_version").is_number_integer() || j.at("schema_version").get<int>() != kSchemaVersion) {
        throw ConfigError(fmt::format("{}: unsupported schema_version (expected {})", path.string(), kSchemaVersion));
    }
    return j;
}

fs::path preset_dir()
{
    if (const char* env = std::getenv("SCHISTO_PRESET_DIR"); env && *env) {
        return fs::path(env);
    }
    return fs::path(SCHISTO_DEFAULT_PRESET_DIR);
}

fs::path preset_path(const std::string& name)
{
    fs::path path = name;
    if (path.extension() != ".json" && !path.has_parent_path()) {
        path = preset_dir() / (name + ".json");
    }
    if (!fs::exists(path)) {
        std::string known;
        if (fs::is_directory(preset_dir())) {
            std::vector<std::string> names;
            for (const auto& e : fs::directory_iterator(preset_dir())) {
                if (e.path().extension() == ".json") {
                    names.push_back(e.path().stem().string());
                }
            }
            std::sort(names.begin(), names.end());
            for (const auto& n : names) {
                known += (known.empty() ? "" : ", ") + n;
            }
        }
        throw ConfigError(fmt::format("unknown preset '{}' (looked in {}; available: {})", name,
                                      preset_dir().string(), known.empty() ? "none" : known));
    }
    return path;
}

namespace {

ScenarioConfig default_simulation(const ModelParams& params)
{
    ScenarioConfig c;
    c.name = "simulation";
    c.params = params;
    c.initial.mode = InitialMode::kDfe2PlusSeed;
    c.grid = TimeGrid::uniform(0.0, 365.0, 0.1);
    c.weights.a_m = Eigen::VectorXd::Ones(params.num_species());
    c.bounds.active_m.assign(static_cast<std::size_t>(params.num_species()), false);
    c.bounds.u_m_max = Eigen::VectorXd::Zero(params.num_species());
    return c;
}

CalibrationConfig default_calibration()
{
    CalibrationConfig c;
    c.params = default_params();
    for (int k = 1; k <= 24; ++k) {
        c.times.push_back(30.0 * k);
    }
    c.prior = default_prior(c.params);
    c.abc.simulation.dt = 0.5;
    c.refine_options.simulation = c.abc.simulation;
    c.seed = 20261016;
    return c;
}

ScenarioConfig scenario_without_controls(ScenarioConfig c)
{
    c.bounds.active_a = c.bounds.active_s = c.bounds.active_k = false;
    std::fill(c.bounds.active_m.begin(), c.bounds.active_m.end(), false);
    return c;
}

std::string kind_of(const Json& j)
{
    return j.is_object() ? j.value("kind", std::string()) : std::string();
}

ModelParams params_of(const Json& cfg, const fs::path& base_dir)
{
    const std::string kind = kind_of(cfg);
    if (cfg.is_null()) return default_params();
    if (kind == "params") return params_from_json(cfg);
    if (kind == "scenario") return scenario_from_json(cfg, base_dir).params;
    throw ConfigError("expected a params or scenario config, found kind '" + kind + "'");
}

std::string optional_number(const std::optional<double>& v)
{
    return v ? fmt::format("{:.6g}", *v) : std::string("not reached");
}

void write_equilibria(const ModelParams& p, const fs::path& out, CommandReport& rep)
{
    Table t;
    t.header = {"kind", "exists", "stability", "residual", "max_real_eigenvalue"};
    const auto comps = component_names(p);
    t.header.insert(t.header.end(), comps.begin(), comps.end());
    Table eig;
    eig.header = {"kind", "index", "real", "imag"};

    const auto add = [&](EquilibriumKind kind, const auto& compute) {
        try {
            const EquilibriumReport e = compute();
            std::vector<Cell> row{to_string(kind), 1.0, to_string(e.stability), e.residual, e.max_real_eigenvalue};
            for (Eigen::Index i = 0; i < e.state.size(); ++i) {
                row.emplace_back(e.state(i));
            }
            t.rows.push_back(std::move(row));
            for (Eigen::Index i = 0; i < e.eigenvalues.size(); ++i) {
                eig.rows.push_back({to_string(kind), static_cast<double>(i), e.eigenvalues(i).real(),
                                    e.eigenvalues(i).imag()});
            }
            rep.lines.push_back(fmt::format("{}: {} (max Re eigenvalue {:.6g}, residual {:.3g})", to_string(kind),
                                            to_string(e.stability), e.max_real_eigenvalue, e.residual));
        } catch (const EquilibriumError& err) {
            std::vector<Cell> row{to_string(kind), 0.0, std::string("none"), std::string("none"),
                                  std::string("none")};
            row.resize(t.header.size(), std::string("none"));
            t.rows.push_back(std::move(row));
            rep.lines.push_back(fmt::format("{}: does not exist ({})", to_string(kind), err.what()));
        }
    };
    add(EquilibriumKind::kDfe1, [&] { return dfe1(p); });
    add(EquilibriumKind::kDfe2, [&] { return dfe2(p); });
    add(EquilibriumKind::kEndemic, [&] { return endemic_equilibrium(p); });
    write_csv_file(out / "equilibria.csv", t);
    write_csv_file(out / "eigenvalues.csv", eig);
}

void write_r0(const ModelParams& p, const fs::path& out, CommandReport& rep)
{
    const R0Report r = r0(p);
    Table t;
    t.header = {"quantity", "value"};
    t.rows.push_back({std::string("r0"), r.r0});
    t.rows.push_back({std::string("ngm_spectral_radius"), r.ngm_spectral_radius});
    for (Eigen::Index j = 0; j < r.per_species_terms.size(); ++j) {
        t.rows.push_back({"term_" + p.species[static_cast<std::size_t>(j)].name, r.per_species_terms(j)});
    }
    t.rows.push_back({std::string("displayed_r0"), r.displayed_r0});
    t.rows.push_back({std::string("displayed_ngm_spectral_radius"), r.displayed_ngm_spectral_radius});
    for (Eigen::Index j = 0; j < r.displayed_per_species_terms.size(); ++j) {
        t.rows.push_back(
            {"displayed_term_" + p.species[static_cast<std::size_t>(j)].name, r.displayed_per_species_terms(j)});
    }
    write_csv_file(out / "r0.csv", t);

    Table k;
    k.header = {"row"};
    std::vector<std::string> labels{"E", "S_i", "L"};
    for (const auto& s : p.species) {
        labels.push_back("M_i_" + s.name);
    }
    k.header.insert(k.header.end(), labels.begin(), labels.end());
    for (Eigen::Index i = 0; i < r.ngm.rows(); ++i) {
        std::vector<Cell> row{labels[static_cast<std::size_t>(i)]};
        for (Eigen::Index c = 0; c < r.ngm.cols(); ++c) {
            row.emplace_back(r.ngm(i, c));
        }
        k.rows.push_back(std::move(row));
    }
    write_csv_file(out / "ngm.csv", k);
    rep.lines.push_back(fmt::format("r0 = {:.10g} (spectral radius of K = {:.10g})", r.r0, r.ngm_spectral_radius));
    rep.lines.push_back(fmt::format("displayed expression (diagnostic only) = {:.6g}", r.displayed_r0));
}

void write_calibration(const CalibrationResult& r, const CalibrationConfig& c, const fs::path& out,
                       CommandReport& rep)
{
    {
        std::ofstream os(out / "data.csv", std::ios::binary);
        write_prevalence_csv(os, r.data);
    }
    {
        std::ofstream os(out / "posterior.csv", std::ios::binary);
        write_posterior_csv(os, r.posterior);
    }
    {
        std::ofstream os(out / "posterior_summary.csv", std::ios::binary);
        write_posterior_summary_csv(os, r.posterior);
    }
    Table info;
    info.header = {"quantity", "value"};
    info.rows.push_back({std::string("draws"), static_cast<double>(r.posterior.n_draws)});
    info.rows.push_back({std::string("failed_draws"), static_cast<double>(r.posterior.failed_draws)});
    info.rows.push_back({std::string("accepted"), static_cast<double>(r.posterior.accepted.rows())});
    info.rows.push_back({std::string("threshold"), r.posterior.threshold});
    if (r.refined) {
        info.rows.push_back({std::string("refine_start_distance"), r.refined->start_distance});
        info.rows.push_back({std::string("refine_distance"), r.refined->distance});
        info.rows.push_back({std::string("refine_evaluations"), static_cast<double>(r.refined->evaluations)});
    }
    write_csv_file(out / "abc_summary.csv", info);
    rep.lines.push_back(fmt::format("ABC: {} draws, {} failed, {} accepted, threshold {:.6g}", r.posterior.n_draws,
                                    r.posterior.failed_draws, r.posterior.accepted.rows(), r.posterior.threshold));
    if (r.refined) {
        Table t;
        t.header = {"parameter", "start", "refined"};
        for (std::size_t i = 0; i < c.prior.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            t.rows.push_back({c.prior[i].name, r.posterior.accepted(0, k), r.refined->values(k)});
        }
        write_csv_file(out / "refine.csv", t);
        rep.lines.push_back(fmt::format("refine: distance {:.6g} -> {:.6g} in {} evaluations",
                                        r.refined->start_distance, r.refined->distance, r.refined->evaluations));
    }
}

} // namespace

CommandReport run_command(const std::string& command, const Json& config_in, const fs::path& base_dir,
                          const fs::path& out, std::optional<std::uint64_t> seed)
{
    Json config = config_in;
    if (kind_of(config) == "manifest") {
        const std::string recorded = config.value("command", std::string());
        if (recorded != command) {
            throw ConfigError(fmt::format("manifest was written by '{}', not '{}'", recorded, command));
        }
        config = config.at("config");
    }
    fs::create_directories(out);
    CommandReport rep;
    Json resolved;
    Json status = Json::object();

    if (command == "simulate") {
        ScenarioConfig c = kind_of(config) == "scenario" ? scenario_from_json(config, base_dir)
                                                         : default_simulation(params_of(config, base_dir));
        c = scenario_without_controls(c);
        if (seed) c.seed = *seed;
        resolved = scenario_to_json(c);
        const ScenarioResult r = run_scenario(c);
        rep.files = write_scenario_outputs(r, out);
        for (Eigen::Index j = 0; j < c.params.num_species(); ++j) {
            rep.lines.push_back(fmt::format("final M_i_{} = {:.10g}", c.params.species[static_cast<std::size_t>(j)].name,
                                            r.state.final()(layout::infected(j))));
        }
    } else if (command == "equilibria" || command == "r0") {
        const ModelParams p = params_of(config, base_dir);
        resolved = params_to_json(p);
        if (command == "equilibria") {
            write_equilibria(p, out, rep);
            rep.files = {"equilibria.csv", "eigenvalues.csv"};
        } else {
            write_r0(p, out, rep);
            rep.files = {"r0.csv", "ngm.csv"};
        }
    } else if (command == "control") {
        if (kind_of(config) != "scenario") {
            throw ConfigError("control needs a scenario config (--config or --preset)");
        }
        ScenarioConfig c = scenario_from_json(config, base_dir);
        if (seed) c.seed = *seed;
        resolved = scenario_to_json(c);
        const ScenarioResult r = run_scenario(c);
        rep.files = write_scenario_outputs(r, out);
        const auto plots = emit_plot_data(r, out);
        rep.files.insert(rep.files.end(), plots.begin(), plots.end());
        status = {{"converged", r.converged}, {"iterations", r.iterations}, {"objective", r.objective}};
        rep.lines.push_back(fmt::format("{}: converged={} iterations={} J={:.10g}", c.name, r.converged, r.iterations,
                                        r.objective));
        for (Eigen::Index j = 0; j < c.params.num_species(); ++j) {
            rep.lines.push_back(fmt::format(
                "M_i_{}: {:.6g} -> {:.6g}, 90% reduction day {}", c.params.species[static_cast<std::size_t>(j)].name,
                r.state.values(layout::infected(j), 0), r.state.final()(layout::infected(j)),
                optional_number(days_to_reduction(r.state, layout::infected(j), 0.9))));
        }
    } else if (command == "calibrate") {
        CalibrationConfig c = config.is_null() ? default_calibration() : calibration_from_json(config, base_dir);
        if (seed) c.seed = *seed;
        resolved = calibration_to_json(c);
        const CalibrationResult r = run_calibration(c);
        write_calibration(r, c, out, rep);
        rep.files = {"data.csv", "posterior.csv", "posterior_summary.csv", "abc_summary.csv"};
        if (r.refined) {
            rep.files.push_back("refine.csv");
        }
    } else if (command == "sweep") {
        if (kind_of(config) != "sweep") {
            throw ConfigError("sweep needs a sweep config (--config or --preset)");
        }
        SweepSpec s = sweep_from_json(config, base_dir);
        if (seed) s.base.seed = *seed;
        resolved = sweep_to_json(s);
        const SweepOutcome o = run_sweep(s);
        rep.files = write_sweep_outputs(o, out);
        const auto plots = emit_plot_data(o, out);
        rep.files.insert(rep.files.end(), plots.begin(), plots.end());
        rep.ok = o.all_ok();
        Json runs = Json::array();
        for (const auto& run : o.runs) {
            runs.push_back({{"value", run.value},
                            {"ok", run.ok},
                            {"converged", run.ok && run.result.converged},
                            {"error", run.error}});
            rep.lines.push_back(run.ok ? fmt::format("value {:g}: converged={} iterations={}", run.value,
                                                     run.result.converged, run.result.iterations)
                                       : fmt::format("value {:g}: error: {}", run.value, run.error));
        }
        status = {{"runs", runs}};
    } else {
        throw ConfigError("unknown command '" + command + "'");
    }

    Json outputs = Json::object();
    for (const auto& f : rep.files) {
        outputs[f] = file_digest(out / f);
    }
    const Json manifest{{"schema_version", kSchemaVersion},
                        {"kind", "manifest"},
                        {"command", command},
                        {"config", resolved},
                        {"status", status},
                        {"outputs", outputs}};
    write_text_file(out / "manifest.json", manifest.dump(2) + "\n");
    rep.files.push_back("manifest.json");
    return rep;
}

} // namespace schisto
