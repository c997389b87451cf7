#include "clintraj/pipeline.hpp"

#include "clintraj/dataset.hpp"
#include "clintraj/error.hpp"
#include "clintraj/layout.hpp"
#include "clintraj/quantify.hpp"
#include "clintraj/stats.hpp"
#include "clintraj/survival.hpp"
#include "format.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace clintraj {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kFormatVersion = 1;

}  // namespace

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::quantify: return "quantify";
        case Stage::impute: return "impute";
        case Stage::reduce: return "reduce";
        case Stage::fit: return "fit";
        case Stage::segment: return "segment";
        case Stage::pseudotime: return "pseudotime";
        case Stage::associate: return "associate";
        case Stage::survival: return "survival";
        case Stage::layout: return "layout";
    }
    return "quantify";
}

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> stages{Stage::quantify,   Stage::impute,    Stage::reduce,
                                           Stage::fit,        Stage::segment,   Stage::pseudotime,
                                           Stage::associate,  Stage::survival,  Stage::layout};
    return stages;
}

Stage parse_stage(const std::string& name) {
    for (auto s : all_stages()) {
        if (to_string(s) == name) return s;
    }
    throw ConfigError("unknown stage '" + name + "'");
}

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::validate() const {
    if (data.empty()) throw ConfigError("config field 'data' is required");
    if (schema.empty()) throw ConfigError("config field 'schema' is required");
    if (output_dir.empty()) throw ConfigError("config field 'output_dir' is required (or pass --out)");
    if (pca_components < 1) throw ConfigError("config field 'pca_components' must be >= 1");
    if (!(r2_threshold >= 0.0 && r2_threshold <= 1.0)) throw ConfigError("config field 'thresholds.r2' must be in [0, 1]");
    if (!(p_value > 0.0 && p_value <= 1.0)) throw ConfigError("config field 'thresholds.p_value' must be in (0, 1]");
    if (layout.scattering && !(*layout.scattering >= 0.0)) {
        throw ConfigError("config field 'layout.scattering' must be non-negative");
    }
    try {
        policy.validate();
    } catch (const UserError& e) {
        throw ConfigError(std::string("config field 'policy': ") + e.what());
    }
    try {
        elastic.validate();
    } catch (const UserError& e) {
        throw ConfigError(std::string("config field 'elastic': ") + e.what());
    }
}

namespace {

// Typed access to one JSON object with unknown-key detection.
class Section {
public:
    Section(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
        if (!obj_.is_object()) throw ConfigError("config field '" + label() + "' must be an object");
    }

    void allow(std::initializer_list<const char*> keys) const {
        for (const auto& [key, value] : obj_.items()) {
            bool known = false;
            for (const char* k : keys) known = known || key == k;
            if (!known) throw ConfigError("config: unknown field '" + field(key) + "'");
        }
    }

    bool has(const std::string& key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }
    bool is_null(const std::string& key) const { return obj_.contains(key) && obj_.at(key).is_null(); }

    template <typename T>
    T get(const std::string& key) const {
        try {
            return obj_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config field '" + field(key) + "' has the wrong type");
        }
    }

    double number(const std::string& key) const {
        if (!obj_.at(key).is_number()) throw ConfigError("config field '" + field(key) + "' must be a number");
        return obj_.at(key).get<double>();
    }

    std::size_t count(const std::string& key) const {
        const auto& v = obj_.at(key);
        if (!v.is_number_integer() || v.get<long long>() < 0) {
            throw ConfigError("config field '" + field(key) + "' must be a non-negative integer");
        }
        return v.get<std::size_t>();
    }

    Section sub(const std::string& key) const { return Section(obj_.at(key), field(key)); }
    const json& raw(const std::string& key) const { return obj_.at(key); }
    std::string field(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

private:
    std::string label() const { return prefix_.empty() ? "<root>" : prefix_; }

    const json& obj_;
    std::string prefix_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

PipelineConfig parse_config(const std::string& json_text, const fs::path& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    const Section top(doc, "");
    top.allow({"data", "schema", "output_dir", "seed", "policy", "optimal_scaling", "pca_components", "elastic", "grow",
               "root", "pseudotime_metric", "thresholds", "survival", "layout"});

    PipelineConfig cfg;
    if (top.has("data")) cfg.data = resolve(base_dir, top.get<std::string>("data"));
    if (top.has("schema")) cfg.schema = resolve(base_dir, top.get<std::string>("schema"));
    if (top.has("output_dir")) cfg.output_dir = resolve(base_dir, top.get<std::string>("output_dir"));
    if (top.has("seed")) cfg.seed = top.count("seed");
    if (top.has("optimal_scaling")) cfg.optimal_scaling = top.get<bool>("optimal_scaling");
    if (top.has("pca_components")) cfg.pca_components = top.count("pca_components");

    if (top.has("policy")) {
        const auto s = top.sub("policy");
        s.allow({"delta_row", "delta_column", "imputer", "svd_order", "round_discrete"});
        if (s.has("delta_row")) cfg.policy.delta_row = s.number("delta_row");
        if (s.has("delta_column")) cfg.policy.delta_column = s.number("delta_column");
        if (s.has("svd_order")) cfg.policy.svd_order = s.count("svd_order");
        if (s.has("round_discrete")) cfg.policy.round_discrete = s.get<bool>("round_discrete");
        if (s.has("imputer")) {
            const auto name = s.get<std::string>("imputer");
            if (name == "svd_complete") {
                cfg.policy.imputer = ImputerKind::svd_complete;
            } else if (name == "svd_full") {
                cfg.policy.imputer = ImputerKind::svd_full;
            } else {
                throw ConfigError("config field 'policy.imputer' must be 'svd_complete' or 'svd_full'");
            }
        }
    }
    if (top.has("elastic")) {
        const auto s = top.sub("elastic");
        s.allow({"lambda", "mu", "alpha", "r0", "n_nodes"});
        if (s.has("lambda")) cfg.elastic.lambda = s.number("lambda");
        if (s.has("mu")) cfg.elastic.mu = s.number("mu");
        if (s.has("alpha")) cfg.elastic.alpha = s.number("alpha");
        if (s.has("r0")) cfg.elastic.r0 = s.number("r0");
        if (s.has("n_nodes")) cfg.elastic.n_nodes_target = s.count("n_nodes");
    }
    if (top.has("grow")) {
        const auto s = top.sub("grow");
        s.allow({"candidate_epochs", "candidate_tol", "final_epochs", "final_tol"});
        if (s.has("candidate_epochs")) cfg.grow.candidate_epochs = s.count("candidate_epochs");
        if (s.has("candidate_tol")) cfg.grow.candidate_tol = s.number("candidate_tol");
        if (s.has("final_epochs")) cfg.grow.final_epochs = s.count("final_epochs");
        if (s.has("final_tol")) cfg.grow.final_tol = s.number("final_tol");
    }
    if (top.has("root")) {
        const auto s = top.sub("root");
        s.allow({"node", "target"});
        if (s.has("node")) cfg.root.node = s.count("node");
        if (s.has("target")) {
            const auto t = s.sub("target");
            for (const auto& [key, value] : s.raw("target").items()) {
                (void)value;
                cfg.root.target[key] = t.get<std::string>(key);
            }
        }
        if (cfg.root.node && !cfg.root.target.empty()) {
            throw ConfigError("config field 'root' must set either 'node' or 'target', not both");
        }
    }
    if (top.has("pseudotime_metric")) {
        const auto name = top.get<std::string>("pseudotime_metric");
        if (name == "edge_count") {
            cfg.metric = PseudotimeMetric::edge_count;
        } else if (name == "euclidean") {
            cfg.metric = PseudotimeMetric::euclidean;
        } else {
            throw ConfigError("config field 'pseudotime_metric' must be 'edge_count' or 'euclidean'");
        }
    }
    if (top.has("thresholds")) {
        const auto s = top.sub("thresholds");
        s.allow({"r2", "p_value"});
        if (s.has("r2")) cfg.r2_threshold = s.number("r2");
        if (s.has("p_value")) cfg.p_value = s.number("p_value");
    }
    if (top.has("survival")) {
        const auto s = top.sub("survival");
        s.allow({"event", "censor_values", "covariates"});
        if (s.has("event")) cfg.survival.event_variable = s.get<std::string>("event");
        if (s.has("censor_values")) cfg.survival.censor_values = s.get<std::vector<std::string>>("censor_values");
        if (s.has("covariates")) cfg.survival.covariates = s.get<std::vector<std::string>>("covariates");
    }
    if (top.has("layout")) {
        const auto s = top.sub("layout");
        s.allow({"scattering", "color_by", "width_by"});
        if (s.has("scattering")) cfg.layout.scattering = s.number("scattering");
        if (s.has("color_by")) cfg.layout.color_by = s.get<std::string>("color_by");
        if (s.has("width_by")) cfg.layout.width_by = s.get<std::string>("width_by");
    }
    // The output directory may still come from --out or CLINTRAJ_OUT.
    auto check = cfg;
    if (check.output_dir.empty()) check.output_dir = ".";
    check.validate();
    return cfg;
}

PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path.parent_path());
}

namespace {

// Parameters only; paths are recorded separately so that manifests do not
// depend on where the output directory lives.
json parameters_json(const PipelineConfig& cfg) {
    json doc;
    doc["seed"] = cfg.seed;
    doc["policy"] = {{"delta_row", cfg.policy.delta_row},
                     {"delta_column", cfg.policy.delta_column},
                     {"imputer", cfg.policy.imputer == ImputerKind::svd_complete ? "svd_complete" : "svd_full"},
                     {"svd_order", cfg.policy.svd_order ? json(*cfg.policy.svd_order) : json(nullptr)},
                     {"round_discrete", cfg.policy.round_discrete}};
    doc["optimal_scaling"] = cfg.optimal_scaling;
    doc["pca_components"] = cfg.pca_components;
    doc["elastic"] = {{"lambda", cfg.elastic.lambda},
                      {"mu", cfg.elastic.mu},
                      {"alpha", cfg.elastic.alpha},
                      {"r0", std::isinf(cfg.elastic.r0) ? json(nullptr) : json(cfg.elastic.r0)},
                      {"n_nodes", cfg.elastic.n_nodes_target}};
    doc["grow"] = {{"candidate_epochs", cfg.grow.candidate_epochs},
                   {"candidate_tol", cfg.grow.candidate_tol},
                   {"final_epochs", cfg.grow.final_epochs},
                   {"final_tol", cfg.grow.final_tol}};
    json root;
    if (cfg.root.node) root["node"] = *cfg.root.node;
    if (!cfg.root.target.empty()) {
        root["target"] = json::object();
        for (const auto& [k, v] : cfg.root.target) root["target"][k] = v;
    }
    doc["root"] = root.is_null() ? json::object() : root;
    doc["pseudotime_metric"] = cfg.metric == PseudotimeMetric::edge_count ? "edge_count" : "euclidean";
    doc["thresholds"] = {{"r2", cfg.r2_threshold}, {"p_value", cfg.p_value}};
    doc["survival"] = {{"event", cfg.survival.event_variable},
                       {"censor_values", cfg.survival.censor_values},
                       {"covariates", cfg.survival.covariates}};
    doc["layout"] = {{"scattering", cfg.layout.scattering ? json(*cfg.layout.scattering) : json(nullptr)},
                     {"color_by", cfg.layout.color_by},
                     {"width_by", cfg.layout.width_by}};
    return doc;
}

}  // namespace

std::string config_to_json(const PipelineConfig& cfg) {
    json doc;
    doc["data"] = cfg.data.string();
    doc["schema"] = cfg.schema.string();
    doc["output_dir"] = cfg.output_dir.string();
    const json params = parameters_json(cfg);
    for (const auto& [k, v] : params.items()) doc[k] = v;
    return doc.dump(2);
}

// ---------------------------------------------------------------------------
// Artifact plumbing

namespace {

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

class StageContext {
public:
    StageContext(Stage stage, const PipelineConfig& cfg) : stage_(stage), cfg_(cfg) {
        fs::create_directories(dir());
    }

    fs::path dir() const { return cfg_.output_dir / to_string(stage_); }
    fs::path out(const std::string& name) const { return dir() / name; }

    /// Upstream artifact path; throws naming it when absent.
    fs::path input(Stage from, const std::string& name) {
        const auto path = cfg_.output_dir / to_string(from) / name;
        if (!fs::exists(path)) {
            throw PreconditionError(to_string(stage_) + ": missing upstream artifact " + to_string(from) + "/" + name +
                                    " (run `clintraj " + to_string(from) + "` first)");
        }
        inputs_[to_string(from) + "/" + name] = detail::hex64(detail::fnv1a(read_bytes(path)));
        return path;
    }

    bool has_input(Stage from, const std::string& name) const {
        return fs::exists(cfg_.output_dir / to_string(from) / name);
    }

    void external_input(const std::string& key, const fs::path& path) {
        inputs_[key] = path.filename().string() + ":" + detail::hex64(detail::fnv1a(read_bytes(path)));
    }

    void write(const std::string& name, const std::string& bytes) {
        std::ofstream o(out(name), std::ios::binary);
        if (!o) throw DataError("cannot write " + out(name).string());
        o << bytes;
        outputs_.push_back(name);
    }

    void record(const std::string& name) { outputs_.push_back(name); }

    void finish() {
        json manifest;
        manifest["stage"] = to_string(stage_);
        manifest["format_version"] = kFormatVersion;
        manifest["seed"] = cfg_.seed;
        manifest["parameters"] = parameters_json(cfg_);
        manifest["inputs"] = json::object();
        for (const auto& [k, v] : inputs_) manifest["inputs"][k] = v;
        manifest["outputs"] = json::object();
        std::sort(outputs_.begin(), outputs_.end());
        for (const auto& name : outputs_) {
            manifest["outputs"][name] = detail::hex64(detail::fnv1a(read_bytes(out(name))));
        }
        std::ofstream o(out("manifest.json"), std::ios::binary);
        o << manifest.dump(2) << '\n';
    }

private:
    Stage stage_;
    const PipelineConfig& cfg_;
    std::map<std::string, std::string> inputs_;
    std::vector<std::string> outputs_;
};

std::string csv_line(const std::vector<std::string>& fields) {
    std::ostringstream o;
    write_csv_row(o, fields);
    return o.str();
}

std::string num(double v) { return detail::format_exact(v); }

std::vector<ColumnInfo> columns_from_json(const std::string& text) {
    std::vector<ColumnInfo> cols;
    for (const auto& c : json::parse(text)) {
        ColumnInfo info;
        info.name = c.at("name").get<std::string>();
        info.source = c.at("source").get<std::string>();
        info.kind = parse_variable_kind(c.at("kind").get<std::string>());
        info.legal_values = c.at("legal_values").get<std::vector<double>>();
        info.exclusive_group = c.at("exclusive_group").get<int>();
        cols.push_back(std::move(info));
    }
    return cols;
}

std::string columns_to_json(const std::vector<ColumnInfo>& cols) {
    json doc = json::array();
    for (const auto& c : cols) {
        doc.push_back({{"name", c.name},
                       {"source", c.source},
                       {"kind", to_string(c.kind)},
                       {"legal_values", c.legal_values},
                       {"exclusive_group", c.exclusive_group}});
    }
    return doc.dump(2);
}

// The filtered raw table, reloaded with the resolved schema written by quantify.
MixedDataTable load_filtered_table(StageContext& ctx) {
    const auto schema = load_schema(ctx.input(Stage::quantify, "schema.json"));
    return make_table(read_csv_file(ctx.input(Stage::quantify, "table.csv")), schema);
}

// Complete matrix the tree is built from (before PCA): the imputed matrix, or
// the quantified one when it has no missing cells.
NumericMatrix load_complete_matrix(StageContext& ctx, const std::string& stage_name) {
    if (ctx.has_input(Stage::impute, "matrix.csv")) return read_matrix_csv(ctx.input(Stage::impute, "matrix.csv"));
    const auto quantified =
        read_matrix_csv(ctx.input(Stage::quantify, "matrix.csv"), ctx.input(Stage::quantify, "mask.csv"));
    if (quantified.missing_count() > 0) {
        throw PreconditionError(stage_name + ": data has " + std::to_string(quantified.missing_count()) +
                                " missing cells and the upstream artifact impute/matrix.csv is missing (run `clintraj "
                                "impute` first)");
    }
    return quantified;
}

Points load_points(StageContext& ctx) {
    const auto m = read_matrix_csv(ctx.input(Stage::reduce, "pcs.csv"));
    return Points(m.values);
}

PrincipalGraph load_tree(StageContext& ctx) { return graph_from_json(read_bytes(ctx.input(Stage::fit, "tree.json"))); }

std::vector<std::size_t> load_row_ids(StageContext& ctx) {
    const auto rows = read_csv_file(ctx.input(Stage::quantify, "rows.csv"));
    std::vector<std::size_t> ids;
    for (std::size_t r = 1; r < rows.size(); ++r) ids.push_back(std::stoul(rows[r].at(0)));
    return ids;
}

std::size_t load_root(StageContext& ctx) {
    const auto doc = json::parse(read_bytes(ctx.input(Stage::pseudotime, "trajectories.json")));
    return doc.at("root").get<std::size_t>();
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
    return out.empty() ? "_" : out;
}

// ---------------------------------------------------------------------------
// Stages

void stage_quantify(const PipelineConfig& cfg) {
    StageContext ctx(Stage::quantify, cfg);
    ctx.external_input("data", cfg.data);
    ctx.external_input("schema", cfg.schema);
    const auto table = load_table(cfg.data, cfg.schema);
    const auto report = filter_missing_mask(table.missing_mask(), cfg.policy.delta_row, cfg.policy.delta_column);
    if (report.kept_rows.empty() || report.kept_columns.empty()) {
        throw DataError("quantify: missingness filter removed every row or column");
    }
    const auto filtered = table.select_rows(report.kept_rows).select_columns(report.kept_columns);
    const auto q = quantify_table(filtered);

    std::size_t complete = 0;
    for (Eigen::Index r = 0; r < filtered.missing_mask().rows(); ++r) complete += filtered.missing_mask().row(r).any() ? 0 : 1;
    const double cells = static_cast<double>(filtered.rows() * filtered.cols());
    json filter;
    filter["input_rows"] = table.rows();
    filter["input_columns"] = table.cols();
    filter["dropped_columns"] = json::array();
    for (auto c : report.dropped_columns) filter["dropped_columns"].push_back(table.variable(c).name);
    filter["dropped_rows"] = report.dropped_rows;
    filter["kept_rows"] = report.kept_rows.size();
    filter["kept_columns"] = report.kept_columns.size();
    filter["complete_rows"] = complete;
    filter["missing_fraction"] = static_cast<double>(filtered.missing_mask().count()) / cells;
    ctx.write("filter.json", filter.dump(2) + "\n");

    auto schema = filtered.schema();
    for (auto& v : schema) {
        v.source.clear();
        v.recode.clear();
    }
    ctx.write("schema.json", schema_to_json(schema) + "\n");
    {
        std::ostringstream o;
        write_table(o, filtered);
        ctx.write("table.csv", o.str());
    }
    {
        std::string rows = "row\n";
        for (auto r : report.kept_rows) rows += std::to_string(r) + "\n";
        ctx.write("rows.csv", rows);
    }
    write_matrix_csv(ctx.out("matrix.csv"), q.matrix);
    ctx.record("matrix.csv");
    write_mask_csv(ctx.out("mask.csv"), q.matrix);
    ctx.record("mask.csv");
    ctx.write("columns.json", columns_to_json(q.columns) + "\n");
    ctx.write("quantification.json", quantification_to_json(q.variables) + "\n");
    ctx.finish();
}

void stage_impute(const PipelineConfig& cfg) {
    StageContext ctx(Stage::impute, cfg);
    const auto m = read_matrix_csv(ctx.input(Stage::quantify, "matrix.csv"), ctx.input(Stage::quantify, "mask.csv"));
    const auto columns = columns_from_json(read_bytes(ctx.input(Stage::quantify, "columns.json")));

    DiscreteColumns discrete;
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        discrete.legal_values.push_back(columns[c].legal_values);
        if (columns[c].exclusive_group >= 0) groups[columns[c].exclusive_group].push_back(c);
    }
    for (auto& [g, cols] : groups) discrete.exclusive_groups.push_back(cols);

    ImputationResult imputed;
    if (m.missing_count() == 0) {
        imputed.matrix = m;
    } else {
        imputed = impute(m, cfg.policy, discrete);
    }
    ctx.write("report.json", imputation_report_json(imputed, m.column_names) + "\n");

    NumericMatrix out = imputed.matrix;
    std::vector<std::size_t> ordinal;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (columns[c].kind == VariableKind::ordinal) ordinal.push_back(c);
    }
    json scaling;
    if (cfg.optimal_scaling && !ordinal.empty()) {
        const auto s = optimal_scale(out, ordinal);
        out = s.scaled;
        scaling["iterations"] = s.iterations;
        scaling["converged"] = s.converged;
        scaling["objective_trace"] = s.objective_trace;
        scaling["levels"] = json::parse(quantification_to_json({}, s.columns, m.column_names));
    } else {
        scaling["iterations"] = 0;
        scaling["converged"] = true;
        scaling["objective_trace"] = json::array();
        scaling["levels"] = json::object();
    }
    ctx.write("scaling.json", scaling.dump(2) + "\n");
    write_matrix_csv(ctx.out("matrix.csv"), out);
    ctx.record("matrix.csv");
    ctx.finish();
}

void stage_reduce(const PipelineConfig& cfg) {
    StageContext ctx(Stage::reduce, cfg);
    const auto m = load_complete_matrix(ctx, "reduce");
    const auto n = m.values.rows();
    if (n < 2) throw DataError("reduce: needs at least 2 rows");
    const Eigen::RowVectorXd mean = m.values.colwise().mean();
    const Eigen::MatrixXd centered = m.values.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const auto dims = cov.rows();
    const auto k = std::min<Eigen::Index>(static_cast<Eigen::Index>(cfg.pca_components), dims);

    std::vector<double> eigenvalues;
    Eigen::MatrixXd components(dims, k);
    for (Eigen::Index j = 0; j < dims; ++j) eigenvalues.push_back(std::max(0.0, eig.eigenvalues()(dims - 1 - j)));
    for (Eigen::Index j = 0; j < k; ++j) {
        Eigen::VectorXd v = eig.eigenvectors().col(dims - 1 - j);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        components.col(j) = v;
    }
    const double total = std::accumulate(eigenvalues.begin(), eigenvalues.end(), 0.0);
    std::vector<double> ratio;
    for (double e : eigenvalues) ratio.push_back(total > 0.0 ? e / total : 0.0);

    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < k; ++j) names.push_back("PC" + std::to_string(j + 1));
    const NumericMatrix scores(centered * components, names);
    write_matrix_csv(ctx.out("pcs.csv"), scores);
    ctx.record("pcs.csv");

    json doc;
    doc["components"] = k;
    doc["rows"] = n;
    doc["columns"] = m.column_names;
    doc["eigenvalues"] = eigenvalues;
    doc["variance_ratio"] = ratio;
    double cum = 0.0;
    std::vector<double> cumulative;
    for (double r : ratio) cumulative.push_back(cum += r);
    doc["cumulative_variance_ratio"] = cumulative;
    doc["total_variance"] = total;
    doc["mean"] = std::vector<double>(mean.begin(), mean.end());
    doc["loadings"] = json::array();
    for (Eigen::Index j = 0; j < k; ++j) {
        doc["loadings"].push_back(std::vector<double>(components.col(j).begin(), components.col(j).end()));
    }
    ctx.write("pca.json", doc.dump(2) + "\n");
    ctx.finish();
}

void stage_fit(const PipelineConfig& cfg) {
    StageContext ctx(Stage::fit, cfg);
    if (!ctx.has_input(Stage::reduce, "pcs.csv") && !ctx.has_input(Stage::impute, "matrix.csv") &&
        ctx.has_input(Stage::quantify, "mask.csv")) {
        // Reports the missing imputation rather than the missing reduction.
        (void)load_complete_matrix(ctx, "fit");
    }
    const Points x = load_points(ctx);
    const auto pca = json::parse(read_bytes(ctx.input(Stage::reduce, "pca.json")));

    const auto grown = grow_tree(x, cfg.elastic, cfg.grow);
    const auto pruned = prune_tree(grown.graph);
    const auto tree = extend_leaves(x, pruned);

    const auto projections = project_points(x, tree);
    double residual = 0.0;
    for (const auto& p : projections) residual += p.squared_distance;
    const double n = static_cast<double>(x.rows());
    const auto eigenvalues = pca.at("eigenvalues").get<std::vector<double>>();
    const double total_ss = pca.at("total_variance").get<double>() * (n - 1.0);
    double kept = 0.0;
    for (std::size_t j = 0; j < static_cast<std::size_t>(x.cols()); ++j) kept += eigenvalues[j];
    const double discarded_ss = (pca.at("total_variance").get<double>() - kept) * (n - 1.0);

    ctx.write("tree.json", graph_to_json(tree, cfg.seed, grown.final_epochs, grown.energy.total) + "\n");

    json doc;
    doc["nodes"] = tree.node_count();
    doc["edges"] = tree.edges.size();
    std::size_t leaves = 0, branching = 0;
    for (auto d : tree.degrees()) {
        leaves += d == 1 ? 1 : 0;
        branching += d > 2 ? 1 : 0;
    }
    doc["leaves"] = leaves;
    doc["branching_nodes"] = branching;
    doc["energy"] = {{"total", grown.energy.total}, {"msd", grown.energy.msd}, {"u_e", grown.energy.u_e},
                     {"u_r", grown.energy.u_r}};
    doc["explained_variance_reduced"] = explained_variance(x, tree);
    doc["explained_variance"] = total_ss > 0.0 ? 1.0 - (residual + discarded_ss) / total_ss : 0.0;
    const auto ratio = pca.at("variance_ratio").get<std::vector<double>>();
    doc["pc2_explained_variance"] = ratio.size() >= 2 ? ratio[0] + ratio[1] : (ratio.empty() ? 0.0 : ratio[0]);
    doc["growth"] = json::array();
    for (const auto& step : grown.history) {
        doc["growth"].push_back({{"op", step.op == GrammarOp::add_node_to_node ? "add_node" : "bisect_edge"},
                                 {"site", step.site},
                                 {"candidates", step.candidates},
                                 {"energy", step.energy}});
    }
    doc["pruned_nodes"] = grown.graph.node_count() - pruned.node_count();
    ctx.write("fit.json", doc.dump(2) + "\n");
    ctx.finish();
}

void stage_segment(const PipelineConfig& cfg) {
    StageContext ctx(Stage::segment, cfg);
    const auto g = load_tree(ctx);
    const Points x = load_points(ctx);
    const auto rows = load_row_ids(ctx);
    const auto seg = decompose_segments(g);
    const auto labels = partition_by_segments(x, g, seg);
    const auto partition = partition_points(x, g);

    json doc = json::array();
    for (std::size_t s = 0; s < seg.segments.size(); ++s) {
        doc.push_back({{"id", s}, {"kind", to_string(seg.kinds[s])}, {"nodes", seg.segments[s]}});
    }
    ctx.write("segments.json", doc.dump(2) + "\n");
    std::string csv = "row,segment,node\n";
    for (std::size_t i = 0; i < labels.size(); ++i) {
        csv += csv_line({std::to_string(rows.at(i)), std::to_string(labels[i]), std::to_string(partition.node[i])});
    }
    ctx.write("points.csv", csv);
    ctx.finish();
}

std::vector<int> root_labels(const MixedDataTable& table, const std::map<std::string, std::string>& target) {
    std::vector<std::pair<std::size_t, std::string>> checks;
    for (const auto& [var, token] : target) {
        try {
            checks.emplace_back(table.column_index(var), token);
        } catch (const UserError&) {
            throw ConfigError("config field 'root.target': variable '" + var + "' is not in the filtered table");
        }
    }
    std::vector<int> labels(table.rows(), 0);
    for (std::size_t r = 0; r < table.rows(); ++r) {
        bool all = true;
        for (const auto& [c, token] : checks) all = all && !table.missing(r, c) && table.cell(r, c) == token;
        labels[r] = all ? 1 : 0;
    }
    return labels;
}

void stage_pseudotime(const PipelineConfig& cfg) {
    StageContext ctx(Stage::pseudotime, cfg);
    const Points x = load_points(ctx);
    const auto g = load_tree(ctx);
    const auto rows = load_row_ids(ctx);
    std::size_t root = 0;
    std::string how;
    if (cfg.root.node) {
        if (*cfg.root.node >= g.node_count()) throw ConfigError("config field 'root.node' is not a node of the tree");
        root = *cfg.root.node;
        how = "manual";
    } else if (!cfg.root.target.empty()) {
        const auto table = load_filtered_table(ctx);
        root = select_root(g, partition_points(x, g), root_labels(table, cfg.root.target), 1);
        how = "auto";
    } else {
        throw ConfigError("config field 'root' must set 'node' or 'target' for the pseudotime stage");
    }
    const auto pt = compute_pseudotime(x, g, root, cfg.metric);

    json doc;
    doc["root"] = root;
    doc["selection"] = how;
    doc["metric"] = cfg.metric == PseudotimeMetric::edge_count ? "edge_count" : "euclidean";
    doc["trajectories"] = json::array();
    for (const auto& t : pt.trajectories) {
        doc["trajectories"].push_back(
            {{"id", t.id}, {"leaf", t.path.back()}, {"path", t.path}, {"points", pt.points_on(t.id).size()}});
    }
    ctx.write("trajectories.json", doc.dump(2) + "\n");

    std::string csv = "row,edge,epsilon,pseudotime,trajectories\n";
    for (std::size_t i = 0; i < pt.pseudotime.size(); ++i) {
        std::string ids;
        for (auto t : pt.trajectories_of_point[i]) ids += (ids.empty() ? "" : ";") + std::to_string(t);
        const auto& p = pt.projections[i];
        csv += csv_line({std::to_string(rows.at(i)), p.edge == Projection::no_edge ? "" : std::to_string(p.edge),
                         num(p.epsilon), num(pt.pseudotime[i]), ids});
    }
    ctx.write("pseudotime.csv", csv);
    ctx.finish();
}

void stage_associate(const PipelineConfig& cfg) {
    StageContext ctx(Stage::associate, cfg);
    const auto table = load_filtered_table(ctx);
    const auto seg_rows = read_csv_file(ctx.input(Stage::segment, "points.csv"));
    std::vector<std::size_t> segment;
    for (std::size_t r = 1; r < seg_rows.size(); ++r) segment.push_back(std::stoul(seg_rows[r].at(1)));
    if (segment.size() != table.rows()) throw DataError("associate: segment labels do not match the table rows");
    const auto n_segments = json::parse(read_bytes(ctx.input(Stage::segment, "segments.json"))).size();

    std::vector<AssociationResult> results;
    std::vector<std::pair<std::string, std::string>> skipped;
    for (std::size_t c = 0; c < table.cols(); ++c) {
        const auto& var = table.variable(c);
        std::vector<std::size_t> segs;
        try {
            if (var.kind == VariableKind::continuous) {
                std::vector<double> values;
                for (std::size_t r = 0; r < table.rows(); ++r) {
                    if (table.missing(r, c)) continue;
                    segs.push_back(segment[r]);
                    values.push_back(std::stod(table.cell(r, c)));
                }
                results.push_back(anova_association(segs, values, var.name, n_segments));
            } else {
                const auto levels = table.levels(c);
                std::vector<int> values;
                for (std::size_t r = 0; r < table.rows(); ++r) {
                    if (table.missing(r, c)) continue;
                    segs.push_back(segment[r]);
                    values.push_back(static_cast<int>(std::find(levels.begin(), levels.end(), table.cell(r, c)) -
                                                      levels.begin()));
                }
                results.push_back(chi2_association(segs, values, var.name));
            }
        } catch (const UserError& e) {
            skipped.emplace_back(var.name, e.what());
        }
    }
    std::vector<double> p;
    for (const auto& r : results) p.push_back(r.p_value);
    const auto adjusted = benjamini_hochberg(p);

    std::string summary = "variable,test,statistic,dof,p_value,p_adjusted,significant\n";
    std::string cells = "variable,test,segment,value,observed,expected,score,p_value\n";
    for (std::size_t k = 0; k < results.size(); ++k) {
        const auto& r = results[k];
        const bool chi2 = r.test == AssociationTest::chi2;
        summary += csv_line({r.variable, chi2 ? "chi2" : "anova", num(r.statistic), num(r.dof), num(r.p_value),
                             num(adjusted[k]), adjusted[k] < cfg.p_value ? "1" : "0"});
        const auto col = table.column_index(r.variable);
        const auto levels = chi2 ? table.levels(col) : std::vector<std::string>{};
        for (const auto& e : r.per_segment) {
            cells += csv_line({r.variable, chi2 ? "chi2" : "anova", std::to_string(e.segment),
                               chi2 ? levels.at(static_cast<std::size_t>(e.value)) : "", num(e.observed),
                               chi2 ? num(e.expected) : "", num(e.score), num(e.p_value)});
        }
    }
    ctx.write("segments.csv", summary);
    ctx.write("cells.csv", cells);

    // Pseudotime regression screen over the columns of the fitted matrix.
    const Points x = load_points(ctx);
    const auto g = load_tree(ctx);
    const auto assignment = compute_pseudotime(x, g, load_root(ctx), cfg.metric);
    const auto matrix = load_complete_matrix(ctx, "associate");
    const auto screen = screen_trajectory_associations(assignment, matrix, cfg.r2_threshold);
    std::vector<std::string> header{"variable", "kind"};
    for (const auto& t : assignment.trajectories) header.push_back("trajectory_" + std::to_string(t.id));
    std::string r2 = csv_line(header);
    json passing = json::array();
    for (std::size_t v = 0; v < screen.variables.size(); ++v) {
        std::vector<std::string> row{screen.variables[v], to_string(screen.kinds[v])};
        for (Eigen::Index t = 0; t < screen.r_squared.cols(); ++t) {
            const double val = screen.r_squared(static_cast<Eigen::Index>(v), t);
            row.push_back(std::isnan(val) ? "" : num(val));
        }
        r2 += csv_line(row);
        if (screen.passed.row(static_cast<Eigen::Index>(v)).any()) passing.push_back(screen.variables[v]);
    }
    ctx.write("pseudotime_r2.csv", r2);

    json doc;
    doc["tests"] = results.size();
    doc["significant"] = std::count_if(adjusted.begin(), adjusted.end(), [&](double q) { return q < cfg.p_value; });
    doc["skipped"] = json::array();
    for (const auto& [name, why] : skipped) doc["skipped"].push_back({{"variable", name}, {"reason", why}});
    doc["r2_threshold"] = cfg.r2_threshold;
    doc["variables_passing"] = screen.variables_passing();
    doc["passing"] = passing;
    ctx.write("summary.json", doc.dump(2) + "\n");
    ctx.finish();
}

void stage_survival(const PipelineConfig& cfg) {
    StageContext ctx(Stage::survival, cfg);
    if (cfg.survival.event_variable.empty()) {
        throw ConfigError("config field 'survival.event' is required for the survival stage");
    }
    const auto table = load_filtered_table(ctx);
    std::size_t col = 0;
    try {
        col = table.column_index(cfg.survival.event_variable);
    } catch (const UserError&) {
        throw ConfigError("config field 'survival.event': variable '" + cfg.survival.event_variable +
                          "' is not in the filtered table");
    }
    const std::set<std::string> censor(cfg.survival.censor_values.begin(), cfg.survival.censor_values.end());
    std::set<std::string> cause_set;
    for (std::size_t r = 0; r < table.rows(); ++r) {
        if (!table.missing(r, col) && !censor.count(table.cell(r, col))) cause_set.insert(table.cell(r, col));
    }
    const std::vector<std::string> causes(cause_set.begin(), cause_set.end());

    const Points x = load_points(ctx);
    const auto g = load_tree(ctx);
    const auto assignment = compute_pseudotime(x, g, load_root(ctx), cfg.metric);

    NumericMatrix matrix;
    std::vector<std::size_t> cov_cols;
    if (!cfg.survival.covariates.empty()) {
        matrix = load_complete_matrix(ctx, "survival");
        for (const auto& name : cfg.survival.covariates) {
            try {
                cov_cols.push_back(matrix.column_index(name));
            } catch (const UserError&) {
                throw ConfigError("config field 'survival.covariates': unknown column '" + name + "'");
            }
        }
    }

    json summary = json::array();
    for (const auto& traj : assignment.trajectories) {
        std::vector<std::size_t> members;
        for (auto i : assignment.points_on(traj.id)) {
            if (!table.missing(i, col)) members.push_back(i);
        }
        json entry;
        entry["trajectory"] = traj.id;
        entry["leaf"] = traj.path.back();
        entry["subjects"] = members.size();
        if (members.empty()) {
            entry["warnings"] = json::array({"no subjects on this trajectory"});
            summary.push_back(entry);
            continue;
        }
        EventTable ev;
        ev.cause_names = causes;
        ev.covariates.resize(static_cast<Eigen::Index>(members.size()), static_cast<Eigen::Index>(cov_cols.size()));
        for (std::size_t k = 0; k < members.size(); ++k) {
            const auto i = members[k];
            const auto& token = table.cell(i, col);
            const bool event = !censor.count(token);
            ev.time.push_back(assignment.pseudotime[i]);
            ev.event.push_back(event ? 1 : 0);
            ev.cause.push_back(event ? static_cast<int>(std::find(causes.begin(), causes.end(), token) - causes.begin())
                                     : -1);
            for (std::size_t j = 0; j < cov_cols.size(); ++j) {
                ev.covariates(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
                    matrix.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(cov_cols[j]));
            }
        }
        ev.covariate_names = cfg.survival.covariates;

        const auto prefix = "trajectory_" + std::to_string(traj.id);
        const auto total = nelson_aalen(ev);
        {
            std::ostringstream o;
            write_hazard_csv(o, total);
            ctx.write(prefix + "_total.csv", o.str());
        }
        entry["events"] = std::accumulate(ev.event.begin(), ev.event.end(), 0);
        entry["final_hazard"] = total.cumulative_hazard.empty() ? 0.0 : total.cumulative_hazard.back();
        json by_cause = json::object();
        for (const auto& [name, curve] : cause_specific_hazards(ev)) {
            std::ostringstream o;
            write_hazard_csv(o, curve);
            ctx.write(prefix + "_cause_" + sanitize(name) + ".csv", o.str());
            by_cause[name] = curve.cumulative_hazard.empty() ? 0.0 : curve.cumulative_hazard.back();
        }
        entry["final_hazard_by_cause"] = by_cause;
        if (!cov_cols.empty()) {
            // Covariates standardized within the trajectory.
            for (Eigen::Index j = 0; j < ev.covariates.cols(); ++j) {
                auto c = ev.covariates.col(j);
                const double mean = c.mean();
                const double sd = ev.covariates.rows() > 1
                                      ? std::sqrt((c.array() - mean).square().sum() / static_cast<double>(c.size() - 1))
                                      : 0.0;
                c.array() -= mean;
                if (sd > 0.0) c /= sd;
            }
            try {
                const auto fit = cox_fit(ev);
                ctx.write(prefix + "_cox.json", cox_to_json(fit) + "\n");
                entry["cox"] = "fitted";
            } catch (const UserError& e) {
                entry["cox"] = std::string("skipped: ") + e.what();
            }
        }
        summary.push_back(entry);
    }
    json doc;
    doc["event_variable"] = cfg.survival.event_variable;
    doc["causes"] = causes;
    doc["trajectories"] = summary;
    ctx.write("summary.json", doc.dump(2) + "\n");
    ctx.finish();
}

void stage_layout(const PipelineConfig& cfg) {
    StageContext ctx(Stage::layout, cfg);
    const Points x = load_points(ctx);
    const auto g = load_tree(ctx);
    const auto graph_layout = layout_graph(g);
    const auto points = layout_points(x, g, graph_layout.node_xy, cfg.layout.scattering, cfg.seed);
    const auto partition = partition_points(x, g);

    Layout2D layout;
    layout.edges = g.edges;
    layout.node_xy = graph_layout.node_xy;
    layout.point_xy = points.point_xy;
    layout.scattering = points.scattering;
    if (ctx.has_input(Stage::pseudotime, "trajectories.json")) layout.root = load_root(ctx);
    if (!cfg.layout.width_by.empty()) {
        const auto matrix = load_complete_matrix(ctx, "layout");
        std::size_t c = 0;
        try {
            c = matrix.column_index(cfg.layout.width_by);
        } catch (const UserError&) {
            throw ConfigError("config field 'layout.width_by': unknown column '" + cfg.layout.width_by + "'");
        }
        std::vector<double> values(matrix.rows());
        for (std::size_t i = 0; i < matrix.rows(); ++i) {
            values[i] = matrix.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
        }
        layout.widths = edge_widths(g, values, partition);
    }
    if (!cfg.layout.color_by.empty()) {
        const auto table = load_filtered_table(ctx);
        std::size_t c = 0;
        try {
            c = table.column_index(cfg.layout.color_by);
        } catch (const UserError&) {
            throw ConfigError("config field 'layout.color_by': variable '" + cfg.layout.color_by +
                              "' is not in the filtered table");
        }
        for (std::size_t r = 0; r < table.rows(); ++r) {
            layout.point_classes.push_back(table.missing(r, c) ? "NA" : table.cell(r, c));
        }
        layout.composition = node_composition(g, layout.point_classes, partition);
    }
    SvgStyle style;
    style.title = "principal tree";
    ctx.write("tree.svg", render_svg(layout, style));
    ctx.write("layout.json", layout_to_json(layout) + "\n");
    ctx.finish();
}

}  // namespace

void run_stage(Stage stage, const PipelineConfig& config) {
    config.validate();
    switch (stage) {
        case Stage::quantify: return stage_quantify(config);
        case Stage::impute: return stage_impute(config);
        case Stage::reduce: return stage_reduce(config);
        case Stage::fit: return stage_fit(config);
        case Stage::segment: return stage_segment(config);
        case Stage::pseudotime: return stage_pseudotime(config);
        case Stage::associate: return stage_associate(config);
        case Stage::survival: return stage_survival(config);
        case Stage::layout: return stage_layout(config);
    }
}

void run_all(const PipelineConfig& config) {
    for (auto stage : all_stages()) {
        if (stage == Stage::survival && config.survival.event_variable.empty()) continue;
        run_stage(stage, config);
    }
}

}  // namespace clintraj
