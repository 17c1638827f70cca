#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "regisforge/config.hpp"
#include "regisforge/error.hpp"
#include "regisforge/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using regisforge::Errc;
using regisforge::Error;

int run(int argc, char** argv) {
    CLI::App app{"regisforge: registers, linkage and frame-calibrated estimation over administrative sources"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::optional<std::string> workspace;
    std::optional<std::uint64_t> seed;
    bool as_json = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "project config (JSON)")->required();
        sub->add_option("--workspace", workspace, "workspace directory (overrides the config)");
        sub->add_option("--seed", seed, "random seed for synth");
    };
    for (const auto& name : regisforge::pipeline::commands()) {
        add_common(app.add_subcommand(name, "run the " + name + " stage"));
    }
    auto* audit = app.add_subcommand("audit", "list workspace artifacts and flag stale or orphaned ones");
    add_common(audit);
    audit->add_flag("--json", as_json, "print the manifest as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    const auto* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();
    std::optional<fs::path> ws;
    if (workspace) ws = fs::path(*workspace);
    const auto cfg = regisforge::config::ProjectConfig::load(config_path, ws);

    if (command == "audit") {
        const auto manifest = regisforge::pipeline::workspace_audit(cfg.workspace, cfg.sha256);
        if (as_json) {
            std::cout << manifest.to_json().dump(2) << '\n';
        } else {
            std::cout << manifest.render_text();
        }
        return 0;
    }

    const auto result = regisforge::pipeline::run_command(command, cfg, {seed});
    std::cout << command << ": " << result.summary << '\n';
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::cerr << "regisforge: " << e.what() << '\n';
        return regisforge::exit_status(e.code());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "regisforge: corrupt-artifact: " << e.what() << '\n';
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "regisforge: io-error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "regisforge: internal error: " << e.what() << '\n';
        return 2;
    }
}
