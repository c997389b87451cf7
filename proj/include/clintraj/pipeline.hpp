#pragma once

#include "clintraj/elpigraph.hpp"
#include "clintraj/impute.hpp"
#include "clintraj/treeanalysis.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace clintraj {

enum class Stage { quantify, impute, reduce, fit, segment, pseudotime, associate, survival, layout };

std::string to_string(Stage stage);
Stage parse_stage(const std::string& name);
const std::vector<Stage>& all_stages();

struct RootConfig {
    std::optional<std::size_t> node;                 // manual root
    std::map<std::string, std::string> target;       // auto: rows where every variable equals its token
};

struct SurvivalConfig {
    std::string event_variable;                      // empty disables the stage's analyses
    std::vector<std::string> censor_values{"0"};     // tokens meaning "no event"
    std::vector<std::string> covariates;             // fit-matrix columns for Cox regression
};

struct LayoutConfig {
    std::optional<double> scattering;
    std::string color_by;                            // table variable for point classes and node pies
    std::string width_by;                            // fit-matrix column for edge widths
};

struct PipelineConfig {
    std::filesystem::path data;
    std::filesystem::path schema;
    std::filesystem::path output_dir;
    std::uint64_t seed = 0;
    MissingnessPolicy policy;
    bool optimal_scaling = true;
    std::size_t pca_components = 12;
    ElasticParams elastic;
    GrowOptions grow;
    RootConfig root;
    PseudotimeMetric metric = PseudotimeMetric::edge_count;
    double r2_threshold = 0.3;
    double p_value = 0.05;
    SurvivalConfig survival;
    LayoutConfig layout;

    void validate() const;
};

/// Parses a JSON config. Relative paths resolve against `base_dir`. Unknown
/// keys and invalid values raise ConfigError naming the field.
PipelineConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& config);

/// Runs one stage, reading upstream artifacts from and writing its own into
/// config.output_dir/<stage>/. Throws PreconditionError naming a missing
/// upstream artifact.
void run_stage(Stage stage, const PipelineConfig& config);

void run_all(const PipelineConfig& config);

}  // namespace clintraj
