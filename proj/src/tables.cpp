#include "cvqr/tables.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "cvqr/errors.hpp"

namespace cvqr {

namespace {

constexpr const char* kHeader = "x,index,value,lo,hi,kind";

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::optional<double> parse_field(const std::string& text, std::size_t line, const char* column) {
    if (text.empty()) return std::nullopt;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw InvalidInputError("table line " + std::to_string(line) + ": malformed " + column + " '" + text + "'");
    return v;
}

struct Pending {
    StructuralKind kind;
    std::vector<double> xs, index;
    std::map<std::pair<std::size_t, std::size_t>, std::array<std::optional<double>, 3>> cells;
};

std::size_t position(std::vector<double>& values, double v) {
    for (std::size_t k = 0; k < values.size(); ++k)
        if (values[k] == v) return k;
    values.push_back(v);
    return values.size() - 1;
}

}  // namespace

std::string format_number(double value) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);  // shortest exact form
    return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

void write_structural_csv(std::ostream& out, const std::vector<const StructuralFunctionEstimate*>& estimates,
                          const std::vector<std::string>& header) {
    for (const auto& line : header) out << "# " << line << "\n";
    out << kHeader << "\n";
    for (const auto* e : estimates) {
        const bool has_index = e->kind != StructuralKind::ASF;
        for (Eigen::Index i = 0; i < e->values.rows(); ++i) {
            for (Eigen::Index c = 0; c < e->values.cols(); ++c) {
                out << format_number(e->x_grid(i)) << ',';
                if (has_index) out << format_number(e->index_grid(c));
                out << ',' << format_number(e->values(i, c)) << ',';
                if (e->bands) out << format_number(e->bands->lower(i, c)) << ',' << format_number(e->bands->upper(i, c));
                else out << ',';
                out << ',' << to_string(e->kind) << "\n";
            }
        }
    }
}

std::vector<StructuralFunctionEstimate> read_structural_csv(std::istream& in) {
    std::string line;
    std::size_t number = 0;
    bool seen_header = false;
    double band_level = 0.9;
    std::vector<Pending> pending;

    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string key = "# band_level:";
            const auto start = line.find_first_not_of(' ', key.size());
            if (line.rfind(key, 0) == 0 && start != std::string::npos) {
                const auto level = parse_field(line.substr(start), number, "band level");
                if (level) band_level = *level;
            }
            continue;
        }
        if (!seen_header) {
            if (line != kHeader)
                throw InvalidInputError("table line " + std::to_string(number) + ": expected header '" + kHeader + "'");
            seen_header = true;
            continue;
        }
        const auto f = split(line);
        if (f.size() != 6)
            throw InvalidInputError("table line " + std::to_string(number) + ": expected 6 fields, found " +
                                    std::to_string(f.size()));
        StructuralKind kind;
        try {
            kind = structural_kind_from_string(f[5]);
        } catch (const InvalidInputError&) {
            throw InvalidInputError("table line " + std::to_string(number) + ": unknown kind '" + f[5] + "'");
        }
        const auto x = parse_field(f[0], number, "x");
        const auto index = parse_field(f[1], number, "index");
        const auto value = parse_field(f[2], number, "value");
        if (!x || !value) throw InvalidInputError("table line " + std::to_string(number) + ": x and value are required");
        if ((kind == StructuralKind::ASF) != !index)
            throw InvalidInputError("table line " + std::to_string(number) +
                                    ": index must be empty exactly for the ASF");

        auto it = std::find_if(pending.begin(), pending.end(), [&](const Pending& p) { return p.kind == kind; });
        if (it == pending.end()) {
            pending.push_back({kind, {}, {}, {}});
            it = pending.end() - 1;
        }
        const auto key = std::make_pair(position(it->xs, *x), index ? position(it->index, *index) : 0);
        if (it->cells.count(key))
            throw InvalidInputError("table line " + std::to_string(number) + ": duplicate cell");
        it->cells[key] = {value, parse_field(f[3], number, "lo"), parse_field(f[4], number, "hi")};
    }
    if (!seen_header) throw InvalidInputError("table is empty (no header)");

    std::vector<StructuralFunctionEstimate> out;
    for (const auto& p : pending) {
        StructuralFunctionEstimate e;
        e.kind = p.kind;
        const auto rows = static_cast<Eigen::Index>(p.xs.size());
        const auto cols = static_cast<Eigen::Index>(p.kind == StructuralKind::ASF ? 1 : p.index.size());
        e.x_grid = Eigen::Map<const Eigen::VectorXd>(p.xs.data(), rows);
        if (p.kind != StructuralKind::ASF) e.index_grid = Eigen::Map<const Eigen::VectorXd>(p.index.data(), cols);
        if (static_cast<Eigen::Index>(p.cells.size()) != rows * cols)
            throw InvalidInputError("table for " + to_string(p.kind) + " is incomplete");
        e.values.resize(rows, cols);
        Eigen::MatrixXd lo(rows, cols), hi(rows, cols);
        std::size_t banded = 0;
        for (const auto& [key, cell] : p.cells) {
            const auto i = static_cast<Eigen::Index>(key.first), c = static_cast<Eigen::Index>(key.second);
            e.values(i, c) = *cell[0];
            if (cell[1] && cell[2]) {
                lo(i, c) = *cell[1];
                hi(i, c) = *cell[2];
                ++banded;
            } else if (cell[1] || cell[2]) {
                throw InvalidInputError("table for " + to_string(p.kind) + " has a one-sided band");
            }
        }
        if (banded == p.cells.size()) {
            e.bands = Bands{lo, hi, band_level};
        } else if (banded != 0) {
            throw InvalidInputError("table for " + to_string(p.kind) + " has bands on some rows only");
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<StructuralFunctionEstimate> read_structural_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInputError("cannot open table '" + path + "'");
    return read_structural_csv(in);
}

void write_file_atomically(const std::string& path, const std::string& contents) {
    const std::string partial = path + ".partial";
    {
        std::ofstream out(partial, std::ios::binary | std::ios::trunc);
        if (!out) throw InvalidInputError("cannot write '" + partial + "'");
        out << contents;
        out.flush();
        if (!out) throw InvalidInputError("write to '" + partial + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(partial, path, ec);
    if (ec) throw InvalidInputError("cannot rename '" + partial + "' to '" + path + "': " + ec.message());
}

}  // namespace cvqr
