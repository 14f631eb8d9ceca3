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
#include "schisto/csv.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "schisto/error.hpp"

namespace schisto {

namespace {

void check_label(const std::string& s)
{
    if (s.find_first_of(",\"\r\n") != std::string::npos) {
        throw ConfigError("CSV label contains a delimiter or quote: " + s);
    }
}

Cell parse_cell(const std::string& text)
{
    double value = 0.0;
    const char* first = text.data();
    const char* last = first + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (!text.empty() && ec == std::errc() && ptr == last) {
        return value;
    }
    return text;
}

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

} // namespace

std::string format_real(double value)
{
    return fmt::format("{:.17g}", value);
}

std::size_t Table::column(const std::string& name) const
{
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) {
            return i;
        }
    }
    throw ConfigError("CSV has no column '" + name + "'");
}

double Table::number(std::size_t row, std::size_t col) const
{
    const Cell& cell = rows.at(row).at(col);
    if (const double* v = std::get_if<double>(&cell)) {
        return *v;
    }
    throw ConfigError(fmt::format("CSV cell ({}, {}) is not a number: '{}'", row, header.at(col),
                                  std::get<std::string>(cell)));
}

const std::string& Table::label(std::size_t row, std::size_t col) const
{
    const Cell& cell = rows.at(row).at(col);
    if (const std::string* s = std::get_if<std::string>(&cell)) {
        return *s;
    }
    throw ConfigError(fmt::format("CSV cell ({}, {}) is not a label", row, header.at(col)));
}

void write_csv(std::ostream& os, const Table& table)
{
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        check_label(table.header[i]);
        os << (i ? "," : "") << table.header[i];
    }
    os << '\n';
    for (const auto& row : table.rows) {
        if (row.size() != table.header.size()) {
            throw ConfigError("CSV row width differs from the header");
        }
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) {
                os << ',';
            }
            if (const double* v = std::get_if<double>(&row[i])) {
                os << format_real(*v);
            } else {
                const auto& s = std::get<std::string>(row[i]);
                check_label(s);
                os << s;
            }
        }
        os << '\n';
    }
}

void write_csv_file(const std::filesystem::path& path, const Table& table)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw ConfigError("cannot write " + path.string());
    }
    write_csv(os, table);
}

Table read_csv(std::istream& is)
{
    Table table;
    std::string line;
    bool have_header = false;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (!have_header) {
            table.header = split(line);
            have_header = true;
            continue;
        }
        const auto parts = split(line);
        if (parts.size() != table.header.size()) {
            throw ConfigError(fmt::format("CSV row {} has {} fields, header has {}", table.rows.size() + 1,
                                          parts.size(), table.header.size()));
        }
        std::vector<Cell> row;
        row.reserve(parts.size());
        for (const auto& p : parts) {
            row.push_back(parse_cell(p));
        }
        table.rows.push_back(std::move(row));
    }
    if (!have_header) {
        throw ConfigError("CSV input is empty");
    }
    return table;
}

Table read_csv_file(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw ConfigError("cannot read " + path.string());
    }
    return read_csv(is);
}

} // namespace schisto
