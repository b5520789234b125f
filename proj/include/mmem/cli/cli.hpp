#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmem/agent/agent.hpp"
#include "mmem/backends/recording.hpp"
#include "mmem/error.hpp"
#include "mmem/memories.hpp"

namespace mmem::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kConfigError = 2,
    kInputError = 3,
    kBackendError = 4,
    kInternalError = 5,
};

int exit_code_for(ErrorCode code);

// "30s", "3m", "3min", "10min", "1h", or a bare millisecond count.
std::int64_t parse_duration_ms(const nlohmann::json& value);

// Resolved configuration. Precedence: command-line flags, then environment
// (secrets only, via api_key_env), then the config file, then defaults.
struct CliConfig {
    std::filesystem::path base_dir;  // relative paths in the file resolve here
    TimescaleConfig timescales = TimescaleConfig::egocentric_defaults();
    AgentConfig agent;
    std::size_t parallelism = 1;
    std::map<std::string, nlohmann::json> backends;  // name -> backend spec
    std::map<std::string, std::string> roles;        // role -> backend name
    std::optional<std::filesystem::path> prompt_dir;
    std::optional<std::filesystem::path> dispatch_journal;

    void validate() const;
};

CliConfig load_cli_config(const std::optional<std::filesystem::path>& path);
// "role=backend" overrides from --backend-role.
void apply_role_overrides(CliConfig& config, const std::vector<std::string>& overrides);

struct ResolvedBackends {
    BackendSet set;
    std::shared_ptr<DispatchJournal> journal;
};

ResolvedBackends make_backends(const CliConfig& config);

// Entry point shared by the binary and tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mmem::cli
