#include "clintraj/dataset.hpp"
#include "clintraj/error.hpp"

#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace clintraj;

namespace {

std::vector<VariableSchema> two_column_schema() {
    return parse_schema_json(R"([
        {"name": "a", "kind": "continuous", "missing_tokens": ["?"]},
        {"name": "b", "kind": "ordinal", "levels": ["0", "1", "2", "3", "4"], "missing_tokens": ["?"]}
    ])");
}

std::vector<std::vector<std::string>> rows(const std::string& text) {
    std::istringstream in(text);
    return read_csv(in);
}

}  // namespace

TEST(Csv, ParsesQuotedFieldsAndEmbeddedSeparators) {
    const auto r = rows("x,y\n\"a,b\",\"say \"\"hi\"\"\"\n1,\n");
    ASSERT_EQ(r.size(), 3u);
    EXPECT_EQ(r[1][0], "a,b");
    EXPECT_EQ(r[1][1], "say \"hi\"");
    EXPECT_EQ(r[2][1], "");
}

TEST(Csv, WriteThenReadRoundTrips) {
    const std::vector<std::string> fields{"plain", "with,comma", "with \"quote\"", ""};
    std::ostringstream out;
    write_csv_row(out, fields);
    std::istringstream in(out.str());
    const auto back = read_csv(in);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0], fields);
}

TEST(LoadTable, MaskMarksDeclaredMissingToken) {
    const auto t = make_table(rows("a,b\n1,0\n?,2\n3,4\n"), two_column_schema());
    EXPECT_EQ(t.rows(), 3u);
    EXPECT_EQ(t.cols(), 2u);
    EXPECT_EQ(t.missing_mask().count(), 1);
    EXPECT_TRUE(t.missing(1, 0));
}

TEST(LoadTable, RejectsOrdinalTokenOutsideLevels) {
    EXPECT_THROW(make_table(rows("a,b\n1,5\n"), two_column_schema()), DataError);
}

TEST(LoadTable, RejectsRaggedRows) {
    EXPECT_THROW(make_table(rows("a,b\n1,2,3\n"), two_column_schema()), DataError);
}

TEST(LoadTable, RejectsUnknownSchemaColumn) {
    EXPECT_THROW(make_table(rows("a,c\n1,2\n"), two_column_schema()), DataError);
}

TEST(LoadTable, RejectsNonNumericContinuousCell) {
    EXPECT_THROW(make_table(rows("a,b\nabc,2\n"), two_column_schema()), DataError);
}

TEST(LoadTable, BinaryColumnWithThreeTokensIsAnError) {
    const auto schema = parse_schema_json(R"([{"name": "s", "kind": "binary"}])");
    EXPECT_THROW(make_table(rows("s\nm\nf\nx\n"), schema), DataError);
}

TEST(LoadTable, SourceAndRecodeDeriveColumns) {
    const auto schema = parse_schema_json(R"([
        {"name": "a1c_measured", "kind": "binary", "source": "A1C", "recode": {"None": "0", ">7": "1", ">8": "1", "Norm": "1"}},
        {"name": "a1c_high", "kind": "binary", "source": "A1C", "recode": {"None": "", ">7": "1", ">8": "1", "Norm": "0"}}
    ])");
    const auto t = make_table(rows("A1C\nNone\n>7\nNorm\n"), schema);
    EXPECT_EQ(t.cell(0, 0), "0");
    EXPECT_TRUE(t.missing(0, 1));
    EXPECT_EQ(t.cell(1, 1), "1");
    EXPECT_EQ(t.cell(2, 1), "0");
}

TEST(LoadTable, SerializeAndReloadIsIdentical) {
    const auto t = make_table(rows("a,b\n1.5,0\n?,2\n\"3\",?\n"), two_column_schema());
    std::ostringstream out;
    write_table(out, t);
    const auto back = make_table(rows(out.str()), parse_schema_json(schema_to_json(t.schema())));
    EXPECT_EQ(back.cells(), t.cells());
    EXPECT_TRUE((back.missing_mask() == t.missing_mask()).all());
}

TEST(LoadTable, LevelsFallBackToSortedObservedTokens) {
    const auto schema = parse_schema_json(R"([{"name": "c", "kind": "categorical"}])");
    const auto t = make_table(rows("c\n10\n2\n\n7\n2\n"), schema);
    EXPECT_EQ(t.levels(0), (std::vector<std::string>{"2", "7", "10"}));
}

TEST(Schema, OrdinalWithoutLevelsIsAnError) {
    EXPECT_THROW(parse_schema_json(R"([{"name": "o", "kind": "ordinal"}])"), ConfigError);
}

TEST(Schema, DuplicateNamesAreAnError) {
    EXPECT_THROW(parse_schema_json(R"([{"name": "o", "kind": "continuous"}, {"name": "o", "kind": "binary"}])"),
                 ConfigError);
}

TEST(Standardize, UnitSampleSd) {
    Eigen::MatrixXd v(3, 1);
    v << 1, 2, 3;
    const auto z = standardize(NumericMatrix(v, {"x"}));
    EXPECT_NEAR(z.values.col(0).mean(), 0.0, 1e-15);
    EXPECT_NEAR(z.values(0, 0), -1.0, 1e-15);
    EXPECT_NEAR(z.values(2, 0), 1.0, 1e-15);
}

TEST(Standardize, TwoPointColumn) {
    Eigen::MatrixXd v(2, 1);
    v << 0, 10;
    const auto z = standardize(NumericMatrix(v, {"x"}));
    EXPECT_NEAR(z.values(0, 0), -0.70710678118654752, 1e-12);
    EXPECT_NEAR(z.values(1, 0), 0.70710678118654752, 1e-12);
}

TEST(Standardize, ConstantColumnNamed) {
    Eigen::MatrixXd v(3, 2);
    v << 1, 5, 2, 5, 3, 5;
    try {
        standardize(NumericMatrix(v, {"ok", "flat"}));
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("flat"), std::string::npos);
    }
}

TEST(Standardize, IgnoresMissingAndIsIdempotent) {
    Eigen::MatrixXd v(4, 1);
    v << 1, std::numeric_limits<double>::quiet_NaN(), 4, 10;
    const auto once = standardize(NumericMatrix(v, {"x"}));
    EXPECT_TRUE(once.missing(1, 0));
    const auto twice = standardize(once);
    for (Eigen::Index r : {0, 2, 3}) EXPECT_NEAR(once.values(r, 0), twice.values(r, 0), 1e-12);
}

TEST(DimensionEstimate, IsotropicGaussianIsFull) {
    std::mt19937_64 rng(3);
    const auto x = synth::gaussian(2000, 3, rng);
    const Eigen::MatrixXd values = x;
    EXPECT_EQ(estimate_dimension_pca(NumericMatrix(values, {"a", "b", "c"})), 3u);
}

TEST(DimensionEstimate, NoisyLineIsOne) {
    std::mt19937_64 rng(4);
    Eigen::MatrixXd x(500, 3);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double t = synth::normal(rng);
        x.row(i) << t, 2 * t, -t;
        for (Eigen::Index j = 0; j < 3; ++j) x(i, j) += 0.01 * synth::normal(rng);
    }
    EXPECT_EQ(estimate_dimension_pca(NumericMatrix(x, {"a", "b", "c"})), 1u);
}

TEST(DimensionEstimate, MatchesExplicitEigenDecompositionAndRotation) {
    std::mt19937_64 rng(5);
    Eigen::MatrixXd x(800, 4);
    const double scales[] = {3.0, 2.0, 0.8, 0.2};
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < 4; ++j) x(i, j) = scales[j] * synth::normal(rng);
    }
    // Oracle: eigenvalues of the sample covariance from a plain SVD.
    const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
    const Eigen::VectorXd ev = svd.singularValues().array().square() / static_cast<double>(x.rows() - 1);
    const auto expected = static_cast<std::size_t>((ev.array() > ev(0) / 10.0).count());
    const NumericMatrix m(x, {"a", "b", "c", "d"});
    EXPECT_EQ(estimate_dimension_pca(m), expected);

    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(Eigen::MatrixXd::Random(4, 4)).householderQ();
    EXPECT_EQ(estimate_dimension_pca(NumericMatrix(x * q, {"a", "b", "c", "d"})), expected);
}

TEST(DimensionEstimate, Preconditions) {
    EXPECT_THROW(estimate_dimension_pca(NumericMatrix(Eigen::MatrixXd::Ones(1, 2), {"a", "b"})), PreconditionError);
    Eigen::MatrixXd v = Eigen::MatrixXd::Ones(3, 1);
    v(1, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(estimate_dimension_pca(NumericMatrix(v, {"a"})), PreconditionError);
}

TEST(MatrixIo, RoundTripsValuesAndMask) {
    Eigen::MatrixXd v(2, 2);
    v << 0.1, std::numeric_limits<double>::quiet_NaN(), -1.0 / 3.0, 1e300;
    const NumericMatrix m(v, {"p", "q"});
    const auto dir = std::filesystem::temp_directory_path() / "clintraj_matrix_io";
    std::filesystem::create_directories(dir);
    write_matrix_csv(dir / "m.csv", m);
    write_mask_csv(dir / "mask.csv", m);
    const auto back = read_matrix_csv(dir / "m.csv", dir / "mask.csv");
    EXPECT_EQ(back.column_names, m.column_names);
    EXPECT_TRUE((back.missing == m.missing).all());
    EXPECT_EQ(back.values(0, 0), 0.1);
    EXPECT_EQ(back.values(1, 0), -1.0 / 3.0);
    EXPECT_EQ(back.values(1, 1), 1e300);
    std::filesystem::remove_all(dir);
}
