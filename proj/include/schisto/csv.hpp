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

#include <filesystem>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

namespace schisto {

/// Shortest text that is not ambiguous: 17 significant digits.
std::string format_real(double value);

using Cell = std::variant<double, std::string>;

/// Header plus rows of numbers or labels. Labels may not contain ',', '"',
/// CR or LF.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<Cell>> rows;

    /// Index of a header entry; throws ConfigError when absent.
    std::size_t column(const std::string& name) const;
    /// Numeric cell; throws ConfigError for a label.
    double number(std::size_t row, std::size_t col) const;
    const std::string& label(std::size_t row, std::size_t col) const;

    bool operator==(const Table& other) const = default;
};

/// ',' delimited, LF line endings, reals via format_real.
void write_csv(std::ostream& os, const Table& table);
void write_csv_file(const std::filesystem::path& path, const Table& table);

/// Cells that parse completely as a real become numbers; everything else is a
/// label. Throws ConfigError on ragged rows.
Table read_csv(std::istream& is);
Table read_csv_file(const std::filesystem::path& path);

} // namespace schisto
