#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "regisforge/date.hpp"
#include "regisforge/estimate.hpp"
#include "regisforge/linkage.hpp"
#include "regisforge/quality.hpp"
#include "regisforge/registry.hpp"

namespace regisforge::config {

namespace fs = std::filesystem;

struct SourceConfig {
    std::string tag;
    fs::path file;
    std::string key_field;
    std::string date_field;
    /// Core sources seed the entity register.
    bool core = true;
    std::string entity_type = "person";
    /// Optional fields folded into a namespaced source key.
    std::optional<std::string> institution_field;
    std::optional<std::string> period_field;
    /// Overrides the project-wide birth rules when set.
    std::optional<registry::RuleSet> birth_rules;
    quality::SourceProfile profile;
};

struct LinkageConfig {
    std::string name;
    std::string left;
    std::string right;
    linkage::Method method;
};

struct FrameConfig {
    std::string id;
    Date as_of;
    registry::RuleSet rules;
    std::vector<std::string> strata;
};

struct CalibrationConfig {
    estimate::Mode mode = estimate::Mode::full_cross;
    double tol = 1e-6;
    std::size_t max_iter = 100;
    /// Core source whose integrated column reaches the frame.
    std::string anchor_source;
};

struct EstimateConfig {
    std::string name;
    /// `count`, or a `SOURCE.field` study variable.
    std::string y;
    std::vector<std::string> domains{"all"};

    bool is_count() const { return y == "count"; }
    std::string y_source() const;
    std::string y_field() const;
};

struct SynthStratum {
    std::map<std::string, std::string> categories;
    std::size_t size = 0;
    double y_mean = 0.0;
    double y_sd = 0.0;
};

struct SynthSource {
    std::string tag;
    /// Inclusion probability per stratum, in stratum order.
    std::vector<double> inclusion;
};

/// Synthetic population: strata first, then independent per-source
/// inclusion draws for every entity.
struct SynthConfig {
    std::uint64_t seed = 1;
    std::vector<SynthStratum> strata;
    std::vector<SynthSource> sources;
    Date start = Date::from_ymd(2020, 1, 1);
    int days = 365;
    fs::path output;

    std::vector<std::string> dimensions() const;
    /// Throws Error(config_invalid) for probabilities outside [0, 1],
    /// mismatched lengths or strata not sharing one set of dimensions.
    void validate() const;
};

struct ProjectConfig {
    fs::path path;
    fs::path dir;
    std::string sha256;
    fs::path workspace;

    std::vector<SourceConfig> sources;
    registry::RuleSet birth_rules;
    std::optional<fs::path> duplicates;
    std::optional<fs::path> entity_links;
    registry::Hierarchy hierarchy;
    std::optional<fs::path> hierarchy_links;
    std::optional<FrameConfig> frame;
    std::vector<LinkageConfig> linkages;
    std::vector<std::string> path_order;
    std::optional<CalibrationConfig> calibration;
    std::vector<EstimateConfig> estimates;
    std::optional<SynthConfig> synth;

    /// Parses and cross-checks a JSON config. Relative paths resolve against
    /// the config's directory; a leading `${workspace}` against the
    /// workspace. Throws Error(config_invalid).
    static ProjectConfig load(const fs::path& path, const std::optional<fs::path>& workspace_override = {});
    static ProjectConfig parse(const nlohmann::json& j, const fs::path& dir, std::string sha256,
                               const std::optional<fs::path>& workspace_override = {});

    /// Throws Error(unknown_source).
    const SourceConfig& source(const std::string& tag) const;
    const LinkageConfig& linkage(const std::string& name) const;
    std::map<std::string, quality::SourceProfile> profiles() const;

    /// Checks that every field the config refers to exists in the source
    /// file headers. Throws Error(config_invalid) or Error(io_error).
    void validate_schemas() const;

    fs::path resolve(const std::string& p) const;
};

registry::RuleSet parse_rules(const nlohmann::json& rules, std::optional<int> retention_years = std::nullopt);

}  // namespace regisforge::config
