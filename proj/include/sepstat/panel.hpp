#ifndef SEPSTAT_PANEL_HPP
#define SEPSTAT_PANEL_HPP

#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <system_error>
#include <vector>

#include "sepstat/errors.hpp"

namespace sepstat {

/// Panel of N functional time series observed on S coordinates at T grid
/// points. Values are stored (n,s,t) row-major; the grid is uniform on
/// [0,1]. Labels are optional per-series tags used for seasonal adjustment.
struct FunctionalPanel {
    std::size_t n_series = 0; // N
    std::size_t n_coords = 0; // S
    std::size_t n_points = 0; // T
    std::vector<double> values;
    std::vector<double> grid;
    std::vector<std::string> labels;

    [[nodiscard]] double& at(std::size_t n, std::size_t s, std::size_t t) {
        return values[(n * n_coords + s) * n_points + t];
    }
    [[nodiscard]] double at(std::size_t n, std::size_t s, std::size_t t) const {
        return values[(n * n_coords + s) * n_points + t];
    }
};

/// Weights of the discrete inner product <f,g> = sum_t w_t f(t) g(t).
struct GridQuadrature {
    std::vector<double> weights;

    /// Uniform rectangle rule, w_t = 1/T. All norms, traces, and scores in
    /// the pipeline use the same weights, so the test statistic only sees
    /// the convention through a common basis scaling.
    [[nodiscard]] static GridQuadrature uniform(std::size_t n_points) {
        GridQuadrature q;
        q.weights.assign(n_points, 1.0 / static_cast<double>(n_points));
        return q;
    }
};

enum class PanelFormat { Long, Wide };

[[nodiscard]] inline std::vector<double> uniform_grid(std::size_t n_points) {
    std::vector<double> grid(n_points);
    for (std::size_t t = 0; t < n_points; ++t) {
        grid[t] = static_cast<double>(t) / static_cast<double>(n_points - 1);
    }
    return grid;
}

inline void validate_panel(const FunctionalPanel& p) {
    if (p.n_series < 2 || p.n_coords < 1 || p.n_points < 2) {
        throw DataError("panel requires N >= 2, S >= 1, T >= 2, got N=" +
                        std::to_string(p.n_series) + " S=" + std::to_string(p.n_coords) +
                        " T=" + std::to_string(p.n_points));
    }
    if (p.values.size() != p.n_series * p.n_coords * p.n_points) {
        throw DimensionError("panel value array does not match N*S*T");
    }
    for (double v : p.values) {
        if (!std::isfinite(v)) throw DataError("panel contains non-finite values");
    }
    if (!p.labels.empty() && p.labels.size() != p.n_series) {
        throw DataError("panel labels must cover every series");
    }
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return fields;
}

inline double parse_value(const std::string& tok, std::size_t line_no) {
    double out = 0.0;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last || tok.empty()) {
        throw ParseError("line " + std::to_string(line_no) + ": expected a number, got \"" + tok +
                         "\"");
    }
    if (!std::isfinite(out)) {
        throw ParseError("line " + std::to_string(line_no) + ": non-finite value \"" + tok + "\"");
    }
    return out;
}

inline std::size_t parse_positive_index(const std::string& tok, const char* what,
                                        std::size_t line_no) {
    std::size_t out = 0;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last || tok.empty() || out == 0) {
        throw ParseError("line " + std::to_string(line_no) + ": " + what +
                         " must be a positive integer, got \"" + tok + "\"");
    }
    return out;
}

inline bool read_csv_line(std::istream& in, std::string& line) {
    if (!std::getline(in, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
}

inline void format_value(double v, std::string& out) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    out.append(buf, ptr);
}

struct LongRow {
    std::size_t n, s, t;
    double value;
};

} // namespace detail

/// Parse a panel from CSV. Long format has the header `n,s,t_index,value`;
/// wide format has `n,s,v1,...,vT`. Indices are 1-based; every (n,s,t)
/// cell must appear exactly once.
[[nodiscard]] inline FunctionalPanel load_panel(std::istream& in, PanelFormat format) {
    std::string line;
    std::size_t line_no = 1;
    if (!detail::read_csv_line(in, line)) {
        throw ParseError("empty input: missing header line");
    }

    FunctionalPanel panel;
    if (format == PanelFormat::Long) {
        if (line != "n,s,t_index,value") {
            throw ParseError("long format requires header \"n,s,t_index,value\", got \"" + line +
                             "\"");
        }
        std::vector<detail::LongRow> rows;
        std::size_t max_n = 0, max_s = 0, max_t = 0;
        while (detail::read_csv_line(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const auto fields = detail::split_csv(line);
            if (fields.size() != 4) {
                throw ParseError("line " + std::to_string(line_no) + ": expected 4 fields, got " +
                                 std::to_string(fields.size()));
            }
            detail::LongRow row{};
            row.n = detail::parse_positive_index(fields[0], "n", line_no);
            row.s = detail::parse_positive_index(fields[1], "s", line_no);
            row.t = detail::parse_positive_index(fields[2], "t_index", line_no);
            row.value = detail::parse_value(fields[3], line_no);
            max_n = std::max(max_n, row.n);
            max_s = std::max(max_s, row.s);
            max_t = std::max(max_t, row.t);
            rows.push_back(row);
        }
        if (rows.empty()) throw ParseError("no data rows");
        panel.n_series = max_n;
        panel.n_coords = max_s;
        panel.n_points = max_t;
        panel.values.assign(max_n * max_s * max_t, 0.0);
        std::vector<char> seen(panel.values.size(), 0);
        for (const auto& row : rows) {
            const std::size_t off =
                ((row.n - 1) * panel.n_coords + (row.s - 1)) * panel.n_points + (row.t - 1);
            if (seen[off]) {
                throw DataError("duplicate cell (n=" + std::to_string(row.n) +
                                ", s=" + std::to_string(row.s) + ", t=" + std::to_string(row.t) +
                                ")");
            }
            seen[off] = 1;
            panel.values[off] = row.value;
        }
        for (std::size_t off = 0; off < seen.size(); ++off) {
            if (!seen[off]) {
                const std::size_t n = off / (panel.n_coords * panel.n_points);
                const std::size_t rem = off % (panel.n_coords * panel.n_points);
                throw DataError("incomplete panel: missing cell (n=" + std::to_string(n + 1) +
                                ", s=" + std::to_string(rem / panel.n_points + 1) +
                                ", t=" + std::to_string(rem % panel.n_points + 1) + ")");
            }
        }
    } else {
        const auto header = detail::split_csv(line);
        if (header.size() < 3 || header[0] != "n" || header[1] != "s") {
            throw ParseError("wide format requires header \"n,s,v1,...,vT\", got \"" + line +
                             "\"");
        }
        const std::size_t T = header.size() - 2;
        for (std::size_t t = 0; t < T; ++t) {
            if (header[t + 2] != "v" + std::to_string(t + 1)) {
                throw ParseError("wide header column " + std::to_string(t + 3) +
                                 " must be v" + std::to_string(t + 1) + ", got \"" +
                                 header[t + 2] + "\"");
            }
        }
        struct WideRow {
            std::size_t n, s;
            std::vector<double> v;
        };
        std::vector<WideRow> rows;
        std::size_t max_n = 0, max_s = 0;
        while (detail::read_csv_line(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const auto fields = detail::split_csv(line);
            if (fields.size() != T + 2) {
                throw ParseError("line " + std::to_string(line_no) + ": expected " +
                                 std::to_string(T + 2) + " fields, got " +
                                 std::to_string(fields.size()));
            }
            WideRow row;
            row.n = detail::parse_positive_index(fields[0], "n", line_no);
            row.s = detail::parse_positive_index(fields[1], "s", line_no);
            row.v.reserve(T);
            for (std::size_t t = 0; t < T; ++t) {
                row.v.push_back(detail::parse_value(fields[t + 2], line_no));
            }
            max_n = std::max(max_n, row.n);
            max_s = std::max(max_s, row.s);
            rows.push_back(std::move(row));
        }
        if (rows.empty()) throw ParseError("no data rows");
        panel.n_series = max_n;
        panel.n_coords = max_s;
        panel.n_points = T;
        panel.values.assign(max_n * max_s * T, 0.0);
        std::vector<char> seen(max_n * max_s, 0);
        for (const auto& row : rows) {
            const std::size_t cell = (row.n - 1) * max_s + (row.s - 1);
            if (seen[cell]) {
                throw DataError("duplicate row (n=" + std::to_string(row.n) +
                                ", s=" + std::to_string(row.s) + ")");
            }
            seen[cell] = 1;
            for (std::size_t t = 0; t < T; ++t) panel.values[cell * T + t] = row.v[t];
        }
        for (std::size_t cell = 0; cell < seen.size(); ++cell) {
            if (!seen[cell]) {
                throw DataError("incomplete panel: missing row (n=" +
                                std::to_string(cell / max_s + 1) +
                                ", s=" + std::to_string(cell % max_s + 1) + ")");
            }
        }
    }

    panel.grid = uniform_grid(panel.n_points);
    validate_panel(panel);
    return panel;
}

/// Serialize to the long CSV format with shortest round-tripping number
/// text; load_panel(write_panel(p)) reproduces p bit-exactly.
inline void write_panel(const FunctionalPanel& p, std::ostream& out) {
    std::string buf;
    buf.reserve(64);
    out << "n,s,t_index,value\n";
    for (std::size_t n = 0; n < p.n_series; ++n) {
        for (std::size_t s = 0; s < p.n_coords; ++s) {
            for (std::size_t t = 0; t < p.n_points; ++t) {
                buf.clear();
                buf.append(std::to_string(n + 1));
                buf.push_back(',');
                buf.append(std::to_string(s + 1));
                buf.push_back(',');
                buf.append(std::to_string(t + 1));
                buf.push_back(',');
                detail::format_value(p.at(n, s, t), buf);
                buf.push_back('\n');
                out << buf;
            }
        }
    }
}

/// Subtract the sample mean curve: out(n,s,t) = x(n,s,t) - mean_n x(.,s,t).
[[nodiscard]] inline FunctionalPanel center(const FunctionalPanel& p) {
    validate_panel(p);
    FunctionalPanel out = p;
    const std::size_t cell_count = p.n_coords * p.n_points;
    for (std::size_t cell = 0; cell < cell_count; ++cell) {
        double mean = 0.0;
        for (std::size_t n = 0; n < p.n_series; ++n) {
            mean += p.values[n * cell_count + cell];
        }
        mean /= static_cast<double>(p.n_series);
        for (std::size_t n = 0; n < p.n_series; ++n) {
            out.values[n * cell_count + cell] -= mean;
        }
    }
    return out;
}

/// Subtract per-season means: within every (label, s, t) group the output
/// averages to zero over n. With a single label this equals center.
[[nodiscard]] inline FunctionalPanel deseasonalize(const FunctionalPanel& p,
                                                   const std::vector<std::string>& season_of) {
    validate_panel(p);
    if (season_of.size() != p.n_series) {
        throw DataError("season map covers " + std::to_string(season_of.size()) +
                        " series, panel has " + std::to_string(p.n_series));
    }
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t n = 0; n < p.n_series; ++n) {
        if (season_of[n].empty()) {
            throw DataError("series n=" + std::to_string(n + 1) + " has no season label");
        }
        groups[season_of[n]].push_back(n);
    }
    FunctionalPanel out = p;
    const std::size_t cell_count = p.n_coords * p.n_points;
    for (const auto& [label, members] : groups) {
        for (std::size_t cell = 0; cell < cell_count; ++cell) {
            double mean = 0.0;
            for (std::size_t n : members) mean += p.values[n * cell_count + cell];
            mean /= static_cast<double>(members.size());
            for (std::size_t n : members) out.values[n * cell_count + cell] -= mean;
        }
    }
    return out;
}

/// Parse a `n,season` CSV covering every series exactly once.
[[nodiscard]] inline std::vector<std::string> load_season_map(std::istream& in,
                                                              std::size_t n_series) {
    std::string line;
    if (!detail::read_csv_line(in, line)) {
        throw ParseError("empty season map: missing header line");
    }
    if (line != "n,season") {
        throw ParseError("season map requires header \"n,season\", got \"" + line + "\"");
    }
    std::vector<std::string> labels(n_series);
    std::vector<char> seen(n_series, 0);
    std::size_t line_no = 1;
    while (detail::read_csv_line(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = detail::split_csv(line);
        if (fields.size() != 2) {
            throw ParseError("line " + std::to_string(line_no) + ": expected 2 fields, got " +
                             std::to_string(fields.size()));
        }
        const std::size_t n = detail::parse_positive_index(fields[0], "n", line_no);
        if (n > n_series) {
            throw DataError("season map lists n=" + std::to_string(n) + " beyond panel N=" +
                            std::to_string(n_series));
        }
        if (seen[n - 1]) {
            throw DataError("season map lists n=" + std::to_string(n) + " twice");
        }
        if (fields[1].empty()) {
            throw DataError("season map gives n=" + std::to_string(n) + " an empty label");
        }
        seen[n - 1] = 1;
        labels[n - 1] = fields[1];
    }
    for (std::size_t n = 0; n < n_series; ++n) {
        if (!seen[n]) {
            throw DataError("season map is missing n=" + std::to_string(n + 1));
        }
    }
    return labels;
}

} // namespace sepstat

#endif // SEPSTAT_PANEL_HPP
