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
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "schisto/calibration.hpp"
#include "schisto/control.hpp"
#include "schisto/csv.hpp"
#include "schisto/model.hpp"
#include "schisto/ode.hpp"

namespace schisto {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Parameters

/// {"kind": "params", "schema_version": 1, "snail": {...}, "free_stages":
/// {...}, "species": [{...}, ...]}. Missing fields are errors; unknown fields
/// are errors.
ModelParams params_from_json(const Json& j);
Json params_to_json(const ModelParams& params);

/// Resolves a "params" block of a scenario: the string "default", or an object
/// with one of "file" (relative to `base_dir`) or "inline", plus optional
/// "add_species" (list of species objects) and "overrides" (name -> value, see
/// set_parameter).
ModelParams resolve_params(const Json& block, const std::filesystem::path& base_dir);

// ---------------------------------------------------------------------------
// Scenarios

enum class InitialMode { kExplicit, kEndemicEquilibrium, kDfe2PlusSeed };

std::string to_string(InitialMode mode);

struct InitialCondition {
    InitialMode mode = InitialMode::kEndemicEquilibrium;
    /// explicit mode only; layout order
    State state;
    /// dfe2-plus-seed only
    double seed_fraction = 0.01;
    /// Endemic mode: species left out of the equilibrium computation. They
    /// start at their disease-free size alpha/mu with no infection.
    std::vector<std::string> equilibrium_excludes;
    /// Applied last: species total is kept, infected fraction set to the value.
    std::vector<std::pair<std::string, double>> prevalence;
};

struct ScenarioConfig {
    std::string name;
    std::string notes;
    ModelParams params;
    InitialCondition initial;
    TimeGrid grid = TimeGrid::uniform(0.0, 365.0, 0.1);
    ControlWeights weights;
    ControlBounds bounds;
    SweepConfig sweep;
    std::uint64_t seed = 0;

    /// Throws ConfigError when the grid, channels, weights or initial
    /// condition are inconsistent with the parameters.
    void validate() const;
};

/// Scenario tree ("kind": "scenario"). Relative file references resolve
/// against `base_dir`.
ScenarioConfig scenario_from_json(const Json& j, const std::filesystem::path& base_dir);
/// Self-contained tree: parameters inline, every bound as a plain maximum.
Json scenario_to_json(const ScenarioConfig& config);

/// Throws ConfigError with guidance when the endemic state is requested for a
/// system with r0 <= 1.
State resolve_initial_state(const ScenarioConfig& config);

struct ScenarioResult {
    ScenarioConfig config;
    State initial;
    Trajectory state;
    ControlTrajectory controls;
    /// empty (zero rows) for uncontrolled runs
    Trajectory adjoint;
    bool controlled = false;
    bool converged = true;
    int iterations = 0;
    double last_change = 0.0;
    int descent_violations = 0;
    std::vector<double> objective_history;
    double objective = 0.0;
};

/// Plain simulation when no channel is active, forward-backward sweep
/// otherwise. Nonconvergence is reported in the result, not thrown.
ScenarioResult run_scenario(const ScenarioConfig& config);

/// First grid time at which component `index` is at most (1 - fraction) of
/// its initial value, if any.
std::optional<double> days_to_reduction(const Trajectory& traj, Eigen::Index index, double fraction);

/// Time (left-endpoint rule over grid intervals) during which row `row` sits
/// above neutral by more than `fraction` of its box width.
double days_active(const ControlTrajectory& controls, Eigen::Index row, double lower, double upper,
                   double fraction = 0.01);

/// Neutral value and upper bound of a control row.
std::pair<double, double> channel_range(const ScenarioConfig& config, Eigen::Index row);

/// quantity,item,value rows: final_infected, reduction_90pct_day (or
/// not_reached), days_active, mean_control, objective, converged, ...
Table scenario_summary(const ScenarioResult& result);

/// Writes state.csv, controls.csv, adjoint.csv (controlled runs),
/// convergence.csv and summary.csv; returns the file names written.
std::vector<std::string> write_scenario_outputs(const ScenarioResult& result, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepKind { kCompliance, kPrevalence };

struct SweepSpec {
    SweepKind kind = SweepKind::kCompliance;
    /// compliance: control channel names (u_human, ...); prevalence: one species
    std::vector<std::string> targets;
    std::vector<double> values;
    ScenarioConfig base;
    /// grid stride of the long-format table
    int output_stride = 10;

    void validate() const;
};

/// Sweep tree ("kind": "sweep") with the base scenario given inline as
/// "base", or by "base_preset" / "base_file".
SweepSpec sweep_from_json(const Json& j, const std::filesystem::path& base_dir);
Json sweep_to_json(const SweepSpec& spec);

/// The scenario run for values[index].
ScenarioConfig sweep_case(const SweepSpec& spec, std::size_t index);

struct SweepRun {
    double value = 0.0;
    bool ok = false;
    std::string error;
    ScenarioResult result;
};

struct SweepOutcome {
    SweepSpec spec;
    /// ordered by value index
    std::vector<SweepRun> runs;

    bool all_ok() const;
};

/// One scenario per value; failures are recorded and the sweep continues.
SweepOutcome run_sweep(const SweepSpec& spec);

/// value,t,channel,level,<infected per species>
Table sweep_long_table(const SweepOutcome& outcome);
/// One row per value: status, convergence, objective, per-channel active days
/// and mean level, final infected counts.
Table sweep_summary_table(const SweepOutcome& outcome);

/// sweep_long.csv, sweep_summary.csv and run_NNN/ per value.
std::vector<std::string> write_sweep_outputs(const SweepOutcome& outcome, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Plot data

/// fig2_states.csv, fig3_controls.csv, and fig7_integrated.csv when every
/// channel is active; each with a .gp stub.
std::vector<std::string> emit_plot_data(const ScenarioResult& result, const std::filesystem::path& dir);
/// fig4_compliance.csv for compliance sweeps; fig5_rodents_states.csv and
/// fig6_rodents_controls.csv for prevalence sweeps.
std::vector<std::string> emit_plot_data(const SweepOutcome& outcome, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Calibration runs

struct CalibrationConfig {
    ModelParams params;
    double seed_fraction = 0.01;
    std::vector<double> times;
    /// observations; synthesized from `params` when `synthetic` is set
    PrevalenceSeries data;
    bool synthetic = true;
    double noise_sd = 0.0;
    PriorSpec prior;
    AbcOptions abc;
    bool refine = true;
    RefineOptions refine_options;
    std::uint64_t seed = 0;
};

/// "kind": "calibration". "data" is {"synthetic": {"noise_sd", "times"}} or
/// {"file": path} or {"inline": {"times", "species", "values"}}.
CalibrationConfig calibration_from_json(const Json& j, const std::filesystem::path& base_dir);
/// Observations always inline, so the tree does not depend on other files.
Json calibration_to_json(const CalibrationConfig& config);

struct CalibrationResult {
    PrevalenceSeries data;
    PosteriorSample posterior;
    std::optional<RefineResult> refined;
};

CalibrationResult run_calibration(const CalibrationConfig& config);

// ---------------------------------------------------------------------------
// Commands and manifests

/// FNV-1a 64-bit digest of a file, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

/// Reads a JSON file; throws ConfigError on I/O or syntax errors or when
/// schema_version is missing or unsupported.
Json load_config_file(const std::filesystem::path& path);

/// Directory searched for presets: $SCHISTO_PRESET_DIR, else the source tree.
std::filesystem::path preset_dir();
std::filesystem::path preset_path(const std::string& name);

struct CommandReport {
    std::vector<std::string> files;
    /// one line per fact, for the terminal
    std::vector<std::string> lines;
    /// false when any run errored (sweep values, calibration draws do not count)
    bool ok = true;
};

/// Runs simulate, equilibria, r0, control, calibrate or sweep with `config`
/// (which may be a manifest written by an earlier run), writes into `out` and
/// finishes with manifest.json. `base_dir` resolves relative references.
/// A set `seed` replaces the config's seed.
CommandReport run_command(const std::string& command, const Json& config, const std::filesystem::path& base_dir,
                          const std::filesystem::path& out, std::optional<std::uint64_t> seed = std::nullopt);

} // namespace schisto
