#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "regisforge/config.hpp"

namespace regisforge::pipeline {

namespace fs = std::filesystem;

/// Pipeline commands in dependency order.
const std::vector<std::string>& commands();

/// Stages that must have run before `command`.
const std::vector<std::string>& prerequisites(const std::string& command);

struct Options {
    std::optional<std::uint64_t> seed;
};

struct StageResult {
    std::string stage;
    std::vector<std::string> outputs;  // workspace-relative
    std::vector<std::string> warnings;
    std::string summary;
};

/// Runs one stage against the workspace named by the config. Stages read
/// only persisted artifacts of earlier stages and record their inputs and
/// outputs in `.stages/<stage>.json`. Holds an exclusive advisory lock on
/// the workspace while running.
///
/// Throws Error(config_invalid) for an unknown command and
/// Error(missing_prerequisite) naming the first absent stage.
StageResult run_command(const std::string& command, const config::ProjectConfig& cfg, const Options& opts = {});

struct AuditEntry {
    std::string path;
    std::string stage;
    /// current | stale | modified | missing | orphaned | corrupt
    std::string status;
    std::string sha256;
    std::string config_sha256;
    std::map<std::string, std::string> inputs;
    std::string detail;
};

struct Manifest {
    std::vector<AuditEntry> entries;

    bool all_current() const;
    nlohmann::json to_json() const;
    std::string render_text() const;
};

/// Lists every artifact of the workspace with its stage, input digests and
/// config revision. An artifact is stale when an input digest, the config
/// revision (if `config_sha256` is given) or an upstream stage changed since
/// it was built. Unreadable stage records are listed as corrupt and the
/// audit continues.
Manifest workspace_audit(const fs::path& workspace, const std::optional<std::string>& config_sha256 = {});

}  // namespace regisforge::pipeline
