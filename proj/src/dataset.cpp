#include "clintraj/dataset.hpp"

#include "clintraj/error.hpp"
#include "format.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace clintraj {

namespace {

std::optional<double> parse_number(const std::string& token) {
    if (token.empty()) return std::nullopt;
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (end != token.c_str() + token.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

bool needs_quoting(const std::string& field) {
    return field.find_first_of(",\"\r\n") != std::string::npos;
}

}  // namespace

std::string to_string(VariableKind kind) {
    switch (kind) {
        case VariableKind::continuous: return "continuous";
        case VariableKind::binary: return "binary";
        case VariableKind::ordinal: return "ordinal";
        case VariableKind::categorical: return "categorical";
    }
    return "continuous";
}

VariableKind parse_variable_kind(const std::string& text) {
    if (text == "continuous") return VariableKind::continuous;
    if (text == "binary") return VariableKind::binary;
    if (text == "ordinal") return VariableKind::ordinal;
    if (text == "categorical") return VariableKind::categorical;
    throw ConfigError("unknown variable kind '" + text + "'");
}

// ---------------------------------------------------------------------------
// CSV

std::vector<std::vector<std::string>> read_csv(std::istream& in) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    char c = 0;

    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        // A bare newline (including a trailing one) is not a record.
        if (!(row.size() == 1 && row.front().empty())) rows.push_back(std::move(row));
        row.clear();
    };

    while (in.get(c)) {
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field.push_back('"');
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                if (field_started || !field.empty()) throw DataError("CSV: stray quote inside unquoted field");
                in_quotes = true;
                field_started = true;
                break;
            case ',':
                end_field();
                break;
            case '\r':
                if (in.peek() == '\n') in.get(c);
                end_row();
                break;
            case '\n':
                end_row();
                break;
            default:
                field.push_back(c);
                field_started = true;
        }
    }
    if (in_quotes) throw DataError("CSV: unterminated quoted field");
    if (field_started || !field.empty() || !row.empty()) end_row();
    return rows;
}

std::vector<std::vector<std::string>> read_csv_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open CSV file " + path.string());
    return read_csv(in);
}

void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        const auto& f = fields[i];
        if (needs_quoting(f)) {
            out << '"';
            for (char c : f) {
                if (c == '"') out << '"';
                out << c;
            }
            out << '"';
        } else {
            out << f;
        }
    }
    out << '\n';
}

// ---------------------------------------------------------------------------
// Schema

std::vector<VariableSchema> parse_schema_json(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("schema: invalid JSON: ") + e.what());
    }
    if (!doc.is_array()) throw ConfigError("schema: top level must be an array");

    std::vector<VariableSchema> schema;
    std::set<std::string> seen;
    for (const auto& entry : doc) {
        VariableSchema v;
        try {
            v.name = entry.at("name").get<std::string>();
            v.kind = parse_variable_kind(entry.at("kind").get<std::string>());
            if (entry.contains("levels")) {
                for (const auto& l : entry["levels"]) {
                    v.levels.push_back(l.is_string() ? l.get<std::string>() : l.dump());
                }
            }
            if (entry.contains("missing_tokens")) {
                v.missing_tokens.clear();
                for (const auto& t : entry["missing_tokens"]) v.missing_tokens.insert(t.get<std::string>());
            }
            if (entry.contains("source")) v.source = entry["source"].get<std::string>();
            if (entry.contains("recode")) {
                for (const auto& [from, to] : entry["recode"].items()) {
                    v.recode[from] = to.is_string() ? to.get<std::string>() : to.dump();
                }
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("schema: malformed entry: ") + e.what());
        }
        if (!seen.insert(v.name).second) throw ConfigError("schema: duplicate variable '" + v.name + "'");
        if (v.kind == VariableKind::ordinal && v.levels.empty()) {
            throw ConfigError("schema: ordinal variable '" + v.name + "' needs levels");
        }
        std::set<std::string> distinct(v.levels.begin(), v.levels.end());
        if (distinct.size() != v.levels.size()) {
            throw ConfigError("schema: duplicate levels for '" + v.name + "'");
        }
        if (v.kind == VariableKind::binary && v.levels.size() > 2) {
            throw ConfigError("schema: binary variable '" + v.name + "' declares more than two levels");
        }
        schema.push_back(std::move(v));
    }
    return schema;
}

std::vector<VariableSchema> load_schema(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open schema file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_schema_json(ss.str());
}

std::string schema_to_json(const std::vector<VariableSchema>& schema) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& v : schema) {
        nlohmann::json e;
        e["name"] = v.name;
        e["kind"] = to_string(v.kind);
        if (!v.levels.empty()) e["levels"] = v.levels;
        e["missing_tokens"] = std::vector<std::string>(v.missing_tokens.begin(), v.missing_tokens.end());
        if (!v.source.empty()) e["source"] = v.source;
        if (!v.recode.empty()) e["recode"] = v.recode;
        doc.push_back(std::move(e));
    }
    return doc.dump(2);
}

// ---------------------------------------------------------------------------
// MixedDataTable

MixedDataTable::MixedDataTable(std::vector<VariableSchema> schema, std::vector<std::vector<std::string>> cells)
    : schema_(std::move(schema)), cells_(std::move(cells)) {
    missing_ = BoolMatrix::Constant(static_cast<Eigen::Index>(cells_.size()),
                                    static_cast<Eigen::Index>(schema_.size()), false);
    for (std::size_t r = 0; r < cells_.size(); ++r) {
        if (cells_[r].size() != schema_.size()) {
            throw DataError("row " + std::to_string(r) + " has " + std::to_string(cells_[r].size()) +
                            " cells, expected " + std::to_string(schema_.size()));
        }
        for (std::size_t c = 0; c < schema_.size(); ++c) {
            missing_(r, c) = schema_[c].missing_tokens.count(cells_[r][c]) > 0;
        }
    }
    validate();
}

void MixedDataTable::validate() const {
    for (std::size_t c = 0; c < schema_.size(); ++c) {
        const auto& v = schema_[c];
        std::set<std::string> declared(v.levels.begin(), v.levels.end());
        std::set<std::string> observed;
        for (std::size_t r = 0; r < cells_.size(); ++r) {
            if (missing_(r, c)) continue;
            const auto& tok = cells_[r][c];
            switch (v.kind) {
                case VariableKind::continuous:
                    if (!parse_number(tok)) {
                        throw DataError("row " + std::to_string(r) + ", column '" + v.name +
                                        "': non-numeric token '" + tok + "' in continuous column");
                    }
                    break;
                case VariableKind::ordinal:
                case VariableKind::binary:
                case VariableKind::categorical:
                    if (!declared.empty() && !declared.count(tok)) {
                        throw DataError("row " + std::to_string(r) + ", column '" + v.name + "': token '" + tok +
                                        "' is not a declared level");
                    }
                    observed.insert(tok);
                    break;
            }
        }
        if (v.kind == VariableKind::binary && observed.size() > 2) {
            throw DataError("column '" + v.name + "' is binary but has " + std::to_string(observed.size()) +
                            " distinct tokens");
        }
    }
}

std::size_t MixedDataTable::column_index(const std::string& name) const {
    for (std::size_t c = 0; c < schema_.size(); ++c) {
        if (schema_[c].name == name) return c;
    }
    throw DataError("unknown column '" + name + "'");
}

std::vector<std::string> MixedDataTable::levels(std::size_t col) const {
    const auto& v = schema_.at(col);
    if (!v.levels.empty()) return v.levels;
    std::set<std::string> observed;
    for (std::size_t r = 0; r < rows(); ++r) {
        if (!missing_(r, col)) observed.insert(cells_[r][col]);
    }
    std::vector<std::string> out(observed.begin(), observed.end());
    const bool numeric = std::all_of(out.begin(), out.end(), [](const std::string& s) { return parse_number(s); });
    if (numeric) {
        std::stable_sort(out.begin(), out.end(),
                         [](const std::string& a, const std::string& b) { return *parse_number(a) < *parse_number(b); });
    }
    return out;
}

MixedDataTable MixedDataTable::select_rows(const std::vector<std::size_t>& rows) const {
    std::vector<std::vector<std::string>> cells;
    cells.reserve(rows.size());
    for (auto r : rows) cells.push_back(cells_.at(r));
    return MixedDataTable(schema_, std::move(cells));
}

MixedDataTable MixedDataTable::select_columns(const std::vector<std::size_t>& cols) const {
    std::vector<VariableSchema> schema;
    for (auto c : cols) schema.push_back(schema_.at(c));
    std::vector<std::vector<std::string>> cells(cells_.size());
    for (std::size_t r = 0; r < cells_.size(); ++r) {
        for (auto c : cols) cells[r].push_back(cells_[r][c]);
    }
    return MixedDataTable(std::move(schema), std::move(cells));
}

MixedDataTable make_table(const std::vector<std::vector<std::string>>& csv_rows, std::vector<VariableSchema> schema) {
    if (csv_rows.empty()) throw DataError("CSV has no header row");
    const auto& header = csv_rows.front();
    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < header.size(); ++i) position.emplace(header[i], i);

    std::vector<std::size_t> source(schema.size());
    for (std::size_t c = 0; c < schema.size(); ++c) {
        auto it = position.find(schema[c].source_column());
        if (it == position.end()) {
            throw DataError("schema column '" + schema[c].source_column() + "' not present in CSV header");
        }
        source[c] = it->second;
    }

    std::vector<std::vector<std::string>> cells;
    cells.reserve(csv_rows.size() - 1);
    for (std::size_t r = 1; r < csv_rows.size(); ++r) {
        const auto& row = csv_rows[r];
        if (row.size() != header.size()) {
            throw DataError("ragged CSV: data row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                            " fields, header has " + std::to_string(header.size()));
        }
        std::vector<std::string> out(schema.size());
        for (std::size_t c = 0; c < schema.size(); ++c) {
            const auto& tok = row[source[c]];
            auto rc = schema[c].recode.find(tok);
            out[c] = rc == schema[c].recode.end() ? tok : rc->second;
        }
        cells.push_back(std::move(out));
    }
    return MixedDataTable(std::move(schema), std::move(cells));
}

MixedDataTable load_table(const std::filesystem::path& csv_path, const std::filesystem::path& schema_path) {
    return make_table(read_csv_file(csv_path), load_schema(schema_path));
}

void write_table(std::ostream& out, const MixedDataTable& table) {
    std::vector<std::string> header;
    for (const auto& v : table.schema()) header.push_back(v.name);
    write_csv_row(out, header);
    for (const auto& row : table.cells()) write_csv_row(out, row);
}

// ---------------------------------------------------------------------------
// NumericMatrix

NumericMatrix::NumericMatrix(Eigen::MatrixXd v, std::vector<std::string> names)
    : values(std::move(v)), column_names(std::move(names)) {
    missing = values.array().isNaN();
    if (column_names.size() != cols()) throw DataError("column name count does not match matrix width");
}

NumericMatrix::NumericMatrix(Eigen::MatrixXd v, BoolMatrix mask, std::vector<std::string> names)
    : values(std::move(v)), missing(std::move(mask)), column_names(std::move(names)) {
    if (missing.rows() != values.rows() || missing.cols() != values.cols()) {
        throw DataError("mask shape does not match matrix shape");
    }
    if (column_names.size() != cols()) throw DataError("column name count does not match matrix width");
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        for (Eigen::Index c = 0; c < values.cols(); ++c) {
            if (missing(r, c)) {
                values(r, c) = std::numeric_limits<double>::quiet_NaN();
            } else if (!std::isfinite(values(r, c))) {
                throw DataError("non-finite value at observed cell (" + std::to_string(r) + ", " +
                                std::to_string(c) + ")");
            }
        }
    }
}

std::size_t NumericMatrix::column_index(const std::string& name) const {
    for (std::size_t c = 0; c < column_names.size(); ++c) {
        if (column_names[c] == name) return c;
    }
    throw DataError("unknown column '" + name + "'");
}

std::vector<std::size_t> NumericMatrix::complete_rows() const {
    std::vector<std::size_t> out;
    for (Eigen::Index r = 0; r < missing.rows(); ++r) {
        if (!missing.row(r).any()) out.push_back(static_cast<std::size_t>(r));
    }
    return out;
}

void write_matrix_csv(const std::filesystem::path& path, const NumericMatrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    write_csv_row(out, m.column_names);
    std::vector<std::string> fields(m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            fields[c] = m.missing(r, c) ? std::string() : detail::format_exact(m.values(r, c));
        }
        write_csv_row(out, fields);
    }
}

void write_mask_csv(const std::filesystem::path& path, const NumericMatrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    write_csv_row(out, m.column_names);
    std::vector<std::string> fields(m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) fields[c] = m.missing(r, c) ? "1" : "0";
        write_csv_row(out, fields);
    }
}

NumericMatrix read_matrix_csv(const std::filesystem::path& path, const std::optional<std::filesystem::path>& mask_path) {
    auto rows = read_csv_file(path);
    if (rows.empty()) throw DataError(path.string() + ": empty matrix file");
    const auto names = rows.front();
    const auto n = static_cast<Eigen::Index>(rows.size() - 1);
    const auto m = static_cast<Eigen::Index>(names.size());
    Eigen::MatrixXd values(n, m);
    BoolMatrix mask = BoolMatrix::Constant(n, m, false);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto& row = rows[static_cast<std::size_t>(r) + 1];
        if (static_cast<Eigen::Index>(row.size()) != m) throw DataError(path.string() + ": ragged row");
        for (Eigen::Index c = 0; c < m; ++c) {
            const auto& tok = row[static_cast<std::size_t>(c)];
            if (tok.empty() || tok == "NA" || tok == "nan") {
                mask(r, c) = true;
                values(r, c) = std::numeric_limits<double>::quiet_NaN();
            } else {
                auto v = parse_number(tok);
                if (!v) throw DataError(path.string() + ": non-numeric token '" + tok + "'");
                values(r, c) = *v;
            }
        }
    }
    if (mask_path) {
        auto mrows = read_csv_file(*mask_path);
        if (static_cast<Eigen::Index>(mrows.size()) != n + 1) throw DataError("mask file row count mismatch");
        for (Eigen::Index r = 0; r < n; ++r) {
            for (Eigen::Index c = 0; c < m; ++c) {
                if (mrows[static_cast<std::size_t>(r) + 1].at(static_cast<std::size_t>(c)) == "1") {
                    mask(r, c) = true;
                    values(r, c) = std::numeric_limits<double>::quiet_NaN();
                }
            }
        }
    }
    return NumericMatrix(std::move(values), std::move(mask), names);
}

NumericMatrix standardize(const NumericMatrix& m) {
    NumericMatrix out = m;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            if (!m.missing(r, c)) {
                sum += m.values(r, c);
                ++n;
            }
        }
        const double mean = n ? sum / static_cast<double>(n) : 0.0;
        double ss = 0.0;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            if (!m.missing(r, c)) ss += (m.values(r, c) - mean) * (m.values(r, c) - mean);
        }
        if (n < 2 || ss <= 0.0) throw DataError("cannot standardize constant column '" + m.column_names[c] + "'");
        const double sd = std::sqrt(ss / static_cast<double>(n - 1));
        for (std::size_t r = 0; r < m.rows(); ++r) {
            if (!m.missing(r, c)) out.values(r, c) = (m.values(r, c) - mean) / sd;
        }
    }
    return out;
}

Eigen::VectorXd covariance_spectrum(const Eigen::MatrixXd& x) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().reverse();
}

std::size_t estimate_dimension_pca(const NumericMatrix& m, double ratio) {
    if (m.rows() < 2) throw PreconditionError("estimate_dimension_pca needs at least 2 rows");
    if (!m.complete()) throw PreconditionError("estimate_dimension_pca needs a complete matrix");
    if (!(ratio > 1.0)) throw PreconditionError("estimate_dimension_pca ratio must exceed 1");
    const Eigen::VectorXd ev = covariance_spectrum(m.values);
    if (ev.size() == 0 || ev(0) <= 0.0) return 0;
    const double cut = ev(0) / ratio;
    return static_cast<std::size_t>((ev.array() > cut).count());
}

}  // namespace clintraj
