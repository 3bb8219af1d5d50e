// Copyright (c) 2026 the emoscene authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "emoscene/util.hpp"

namespace emoscene {

/// Minimal CSV writer. Cells are quoted only when they contain a comma,
/// quote, or newline; doubles use the shortest round-trip form and NaN is
/// written literally as "NaN".
class CsvWriter {
public:
    explicit CsvWriter(std::ostream& out) : out_(out) {}

    CsvWriter& cell(const std::string& s) {
        sep();
        if (s.find_first_of(",\"\n") != std::string::npos) {
            out_ << '"';
            for (char ch : s) {
                if (ch == '"') out_ << '"';
                out_ << ch;
            }
            out_ << '"';
        } else {
            out_ << s;
        }
        return *this;
    }
    CsvWriter& cell(const char* s) { return cell(std::string(s)); }
    CsvWriter& cell(double v) { return cell(std::isnan(v) ? std::string("NaN") : format_double(v)); }
    CsvWriter& cell(int v) { return cell(std::to_string(v)); }
    CsvWriter& cell(std::size_t v) { return cell(std::to_string(v)); }

    template <typename T>
    CsvWriter& row(const std::vector<T>& cells) {
        for (const auto& c : cells) cell(c);
        return endrow();
    }

    CsvWriter& endrow() {
        out_ << '\n';
        first_ = true;
        return *this;
    }

private:
    void sep() {
        if (!first_) out_ << ',';
        first_ = false;
    }
    std::ostream& out_;
    bool first_ = true;
};

/// Splits one CSV line on commas, honoring double-quote escaping.
inline std::vector<std::string> parse_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    cells.push_back(cur);
    return cells;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write file: " + path);
    return out;
}

} // namespace emoscene
