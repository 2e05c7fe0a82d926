#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <charconv>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nusvqr/error.hpp"

namespace nusvqr {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Training or test sample: one row of `features` per observation.
struct Dataset {
    FeatureMatrix features;
    Vector response;
    std::vector<std::string> feature_names;

    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(features.rows()); }
    [[nodiscard]] std::size_t dim() const noexcept { return static_cast<std::size_t>(features.cols()); }

    /// Rows selected by `idx`, in that order.
    [[nodiscard]] Dataset subset(const std::vector<std::size_t>& idx) const {
        Dataset out;
        out.features.resize(static_cast<Eigen::Index>(idx.size()), features.cols());
        out.response.resize(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const auto src = static_cast<Eigen::Index>(idx[r]);
            out.features.row(static_cast<Eigen::Index>(r)) = features.row(src);
            out.response(static_cast<Eigen::Index>(r)) = response(src);
        }
        out.feature_names = feature_names;
        return out;
    }
};

inline void check_consistent(const Dataset& d) {
    if (d.features.rows() != d.response.size()) {
        throw InputError("dataset has " + std::to_string(d.features.rows()) + " feature rows but " +
                         std::to_string(d.response.size()) + " responses");
    }
    if (!d.feature_names.empty() && d.feature_names.size() != d.dim()) {
        throw InputError("feature name count does not match feature columns");
    }
}

// ---------------------------------------------------------------------------
// CSV: comma separated, '.' decimal point, mandatory header, LF line endings.
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    [[nodiscard]] std::optional<std::size_t> column(std::string_view name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) return std::nullopt;
        return static_cast<std::size_t>(it - header.begin());
    }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

}  // namespace detail

inline CsvTable parse_csv(std::istream& in, const std::string& source = "<stream>") {
    CsvTable table;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        const auto view = detail::trim(line);
        if (view.empty()) continue;
        const auto cells = detail::split(view);
        if (!have_header) {
            for (auto c : cells) table.header.emplace_back(c);
            have_header = true;
            continue;
        }
        if (cells.size() != table.header.size()) {
            throw InputError(source + ": row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                             " fields, header has " + std::to_string(table.header.size()));
        }
        std::vector<double> row;
        row.reserve(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const auto v = detail::parse_double(cells[c]);
            if (!v) {
                throw InputError(source + ": row " + std::to_string(line_no) + ", column '" + table.header[c] +
                                 "': cannot parse '" + std::string(cells[c]) + "' as a number");
            }
            row.push_back(*v);
        }
        table.rows.push_back(std::move(row));
    }
    if (!have_header) throw InputError(source + ": empty file, header row is mandatory");
    return table;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "' for reading");
    return parse_csv(in, path);
}

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return {buf.data(), res.ptr};
}

inline void write_csv(std::ostream& out, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
    out << '\n';
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << format_double(row[c]);
        out << '\n';
    }
}

/// Splits a table into features and response.
///
/// `target` names the response column; columns whose name starts with
/// "q_" (true-quantile annotations written by the generator) are skipped.
inline Dataset table_to_dataset(const CsvTable& table, const std::string& target = "y") {
    const auto ty = table.column(target);
    if (!ty) throw InputError("response column '" + target + "' not found in CSV header");
    std::vector<std::size_t> cols;
    Dataset d;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
        if (c == *ty || table.header[c].rfind("q_", 0) == 0) continue;
        cols.push_back(c);
        d.feature_names.push_back(table.header[c]);
    }
    d.features.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(cols.size()));
    d.response.resize(static_cast<Eigen::Index>(table.rows.size()));
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        for (std::size_t k = 0; k < cols.size(); ++k) {
            d.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = table.rows[r][cols[k]];
        }
        d.response(static_cast<Eigen::Index>(r)) = table.rows[r][*ty];
    }
    return d;
}

/// Extracts the named feature columns (in the given order) from a table.
inline FeatureMatrix table_features(const CsvTable& table, const std::vector<std::string>& names) {
    FeatureMatrix x(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(names.size()));
    for (std::size_t k = 0; k < names.size(); ++k) {
        const auto c = table.column(names[k]);
        if (!c) throw InputError("feature column '" + names[k] + "' missing from input CSV");
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = table.rows[r][*c];
        }
    }
    return x;
}

// ---------------------------------------------------------------------------
// Min-max feature scaling (opt-in preprocessing).
// ---------------------------------------------------------------------------

struct MinMaxScaling {
    Eigen::RowVectorXd lo;
    Eigen::RowVectorXd span;

    static MinMaxScaling fit(const FeatureMatrix& x) {
        MinMaxScaling s;
        s.lo = x.colwise().minCoeff();
        s.span = x.colwise().maxCoeff() - s.lo;
        for (Eigen::Index c = 0; c < s.span.size(); ++c) {
            if (s.span(c) <= 0.0) s.span(c) = 1.0;
        }
        return s;
    }

    [[nodiscard]] FeatureMatrix apply(const FeatureMatrix& x) const {
        if (x.cols() != lo.size()) throw InputError("scaling dimension mismatch");
        FeatureMatrix out = x;
        for (Eigen::Index r = 0; r < out.rows(); ++r) {
            out.row(r) = (out.row(r) - lo).cwiseQuotient(span);
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// UCI Servo ingestion.
//
// Encoding "servo-onehot-v1": motor and screw (letters A-E) become five 0/1
// indicator columns each, in alphabetical order; pgain and vgain pass through
// unchanged; the last field ("class", rise time) is the response. Input is
// the raw UCI servo.data layout (no header); a header line starting with
// "motor" is tolerated and skipped.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kServoEncoding = "servo-onehot-v1";

inline Dataset parse_servo(std::istream& in, const std::string& source = "servo.data") {
    static constexpr std::array<char, 5> kLevels{'A', 'B', 'C', 'D', 'E'};
    std::vector<std::array<double, 12>> rows;
    std::vector<double> ys;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto view = detail::trim(line);
        if (view.empty()) continue;
        const auto cells = detail::split(view);
        if (line_no == 1 && !cells.empty() && cells[0] == "motor") continue;
        if (cells.size() != 5) {
            throw InputError(source + ": row " + std::to_string(line_no) +
                             " must have 5 fields (motor,screw,pgain,vgain,class)");
        }
        std::array<double, 12> row{};
        for (int k = 0; k < 2; ++k) {
            const auto cell = cells[static_cast<std::size_t>(k)];
            const auto it = cell.size() == 1 ? std::find(kLevels.begin(), kLevels.end(), cell[0]) : kLevels.end();
            if (it == kLevels.end()) {
                throw InputError(source + ": row " + std::to_string(line_no) + ": categorical level '" +
                                 std::string(cell) + "' is not one of A-E");
            }
            row[static_cast<std::size_t>(5 * k + (it - kLevels.begin()))] = 1.0;
        }
        for (std::size_t k = 2; k < 5; ++k) {
            const auto v = detail::parse_double(cells[k]);
            if (!v) {
                throw InputError(source + ": row " + std::to_string(line_no) + ": cannot parse '" +
                                 std::string(cells[k]) + "'");
            }
            if (k < 4) {
                row[8 + k] = *v;
            } else {
                ys.push_back(*v);
            }
        }
        rows.push_back(row);
    }
    if (rows.empty()) throw InputError(source + ": no data rows");
    Dataset d;
    d.features.resize(static_cast<Eigen::Index>(rows.size()), 12);
    d.response = Eigen::Map<const Vector>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < 12; ++c) {
            d.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
    }
    for (const char* prefix : {"motor_", "screw_"}) {
        for (char lvl : kLevels) d.feature_names.push_back(std::string(prefix) + lvl);
    }
    d.feature_names.emplace_back("pgain");
    d.feature_names.emplace_back("vgain");
    return d;
}

inline Dataset read_servo(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("Servo dataset not found at '" + path +
                         "'. Expected the UCI servo.data file: 167 comma-separated rows "
                         "'motor,screw,pgain,vgain,class' with motor/screw in A-E, no header.");
    }
    return parse_servo(in, path);
}

}  // namespace nusvqr
