#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cloudrm::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitInput = 3, kExitRuntime = 4 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Built-in defaults of a command's resolved configuration.
nlohmann::json default_config(const std::string& command);

/// Name of the config key holding a command's output location.
std::string output_key(const std::string& command);

struct CommandResult {
  nlohmann::json manifest;
  std::filesystem::path manifest_path;
};

/// Runs one command on a fully resolved configuration and writes its manifest.
/// Manifests hold {command, config, inputs, outputs, seed, wall_time_seconds, metrics};
/// inputs and outputs map a role to {path, sha256}.
CommandResult execute(const std::string& command, const nlohmann::json& config, std::ostream& log);

/// Where a command writes its manifest, given its resolved configuration.
std::filesystem::path manifest_path(const std::string& command, const nlohmann::json& config);

/// True when every output recorded in the manifest exists with the recorded hash.
bool verify_manifest(const nlohmann::json& manifest);

nlohmann::json read_json_file(const std::filesystem::path& path);

/// Parses "a..b" ranges and comma lists ("1,2,4") into integers.
std::vector<int> parse_int_grid(const std::string& text);
std::vector<double> parse_double_list(const std::string& text);

/// Entry point; returns the process exit code (0 ok, 2 usage, 3 input, 4 runtime).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cloudrm::cli
