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
#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "schisto/scenario.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv)
{
    CLI::App app{"Multi-host schistosomiasis model: simulation, equilibria, optimal control, calibration"};
    app.require_subcommand(1);

    std::string config_path;
    std::string preset;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    auto* config_opt = app.add_option("--config", config_path, "JSON config, or a manifest.json to replay")
                           ->check(CLI::ExistingFile);
    app.add_option("--preset", preset, "preset name (see presets/) or path")->excludes(config_opt);
    app.add_option("--out", out, "output directory")->capture_default_str();
    app.add_option("--seed", seed, "override the config seed");

    const char* commands[][2] = {
        {"simulate", "uncontrolled simulation"},
        {"equilibria", "DFE1, DFE2 and endemic equilibrium with stability"},
        {"r0", "basic reproduction number and next-generation matrix"},
        {"control", "optimal control by forward-backward sweep"},
        {"calibrate", "rejection ABC and local refinement"},
        {"sweep", "compliance or prevalence sweep"},
    };
    for (const auto& c : commands) {
        app.add_subcommand(c[0], c[1])->fallthrough();
    }

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        schisto::Json config;
        fs::path base_dir = ".";
        if (!config_path.empty()) {
            config = schisto::load_config_file(config_path);
            base_dir = fs::path(config_path).parent_path();
        } else if (!preset.empty()) {
            const fs::path path = schisto::preset_path(preset);
            config = schisto::load_config_file(path);
            base_dir = path.parent_path();
        }
        if (base_dir.empty()) {
            base_dir = ".";
        }
        const auto report = schisto::run_command(command, config, base_dir, out, seed);
        for (const auto& line : report.lines) {
            std::cout << line << '\n';
        }
        std::cout << fmt::format("wrote {} files to {}\n", report.files.size(), out);
        return report.ok ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
