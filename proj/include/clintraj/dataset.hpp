#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace clintraj {

enum class VariableKind { continuous, binary, ordinal, categorical };

std::string to_string(VariableKind kind);
VariableKind parse_variable_kind(const std::string& text);

struct VariableSchema {
    std::string name;
    VariableKind kind = VariableKind::continuous;
    // Ordered level tokens. Required for ordinal columns; optional for binary
    // and categorical columns, where an empty list means "sorted observed tokens".
    std::vector<std::string> levels;
    std::set<std::string> missing_tokens{""};
    // CSV column the values are read from; defaults to `name`. Lets one source
    // column feed several derived variables.
    std::string source;
    // Token rewrite applied before missingness and level checks.
    std::map<std::string, std::string> recode;

    const std::string& source_column() const { return source.empty() ? name : source; }
};

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Raw tokens plus missingness for a table with an explicit schema.
class MixedDataTable {
public:
    MixedDataTable() = default;
    MixedDataTable(std::vector<VariableSchema> schema, std::vector<std::vector<std::string>> cells);

    std::size_t rows() const { return cells_.size(); }
    std::size_t cols() const { return schema_.size(); }

    const std::vector<VariableSchema>& schema() const { return schema_; }
    const VariableSchema& variable(std::size_t col) const { return schema_.at(col); }
    std::size_t column_index(const std::string& name) const;

    const std::string& cell(std::size_t row, std::size_t col) const { return cells_[row][col]; }
    bool missing(std::size_t row, std::size_t col) const { return missing_(row, col); }
    const BoolMatrix& missing_mask() const { return missing_; }
    const std::vector<std::vector<std::string>>& cells() const { return cells_; }

    /// Distinct non-missing tokens of a column in level order: declared levels
    /// when present (including unobserved ones), otherwise observed tokens in
    /// numeric order when all parse as numbers, else lexicographic.
    std::vector<std::string> levels(std::size_t col) const;

    MixedDataTable select_rows(const std::vector<std::size_t>& rows) const;
    MixedDataTable select_columns(const std::vector<std::size_t>& cols) const;

private:
    void validate() const;

    std::vector<VariableSchema> schema_;
    std::vector<std::vector<std::string>> cells_;
    BoolMatrix missing_;
};

/// Dense real matrix with a missingness mask. Values under the mask are NaN.
struct NumericMatrix {
    Eigen::MatrixXd values;
    BoolMatrix missing;
    std::vector<std::string> column_names;

    NumericMatrix() = default;
    NumericMatrix(Eigen::MatrixXd v, std::vector<std::string> names);
    NumericMatrix(Eigen::MatrixXd v, BoolMatrix mask, std::vector<std::string> names);

    std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
    std::size_t missing_count() const { return static_cast<std::size_t>(missing.count()); }
    bool complete() const { return missing_count() == 0; }
    std::size_t column_index(const std::string& name) const;
    std::vector<std::size_t> complete_rows() const;
};

std::vector<std::vector<std::string>> read_csv(std::istream& in);
std::vector<std::vector<std::string>> read_csv_file(const std::filesystem::path& path);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

std::vector<VariableSchema> parse_schema_json(const std::string& text);
std::vector<VariableSchema> load_schema(const std::filesystem::path& path);
std::string schema_to_json(const std::vector<VariableSchema>& schema);

MixedDataTable load_table(const std::filesystem::path& csv_path, const std::filesystem::path& schema_path);
MixedDataTable make_table(const std::vector<std::vector<std::string>>& csv_rows,
                          std::vector<VariableSchema> schema);

/// Writes the table as CSV (header = variable names, missing cells as their
/// stored token).
void write_table(std::ostream& out, const MixedDataTable& table);

void write_matrix_csv(const std::filesystem::path& path, const NumericMatrix& m);
void write_mask_csv(const std::filesystem::path& path, const NumericMatrix& m);
NumericMatrix read_matrix_csv(const std::filesystem::path& path,
                              const std::optional<std::filesystem::path>& mask_path = std::nullopt);

/// Column-wise z-scores over non-missing entries (sample standard deviation,
/// divisor N-1). Throws DataError naming the first constant column.
NumericMatrix standardize(const NumericMatrix& m);

/// Number of covariance eigenvalues strictly greater than lambda_max / ratio.
std::size_t estimate_dimension_pca(const NumericMatrix& m, double ratio = 10.0);

/// Covariance eigenvalues in decreasing order.
Eigen::VectorXd covariance_spectrum(const Eigen::MatrixXd& x);

}  // namespace clintraj
