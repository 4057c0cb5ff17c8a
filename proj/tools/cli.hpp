#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "adderkernel/hardware_model.hpp"

namespace adderkernel::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Runs one command line. Normal output goes to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_file(const std::filesystem::path& path);

// Flat key=value lines; '#' starts a comment. Throws std::invalid_argument on
// a malformed line.
std::map<std::string, std::string> parse_config(const std::string& text);

struct RunManifest {
  std::string command;
  nlohmann::ordered_json config;
  std::map<std::string, std::string> input_digests;  // path -> sha256
  std::uint64_t seed = 0;
  std::string version;
  std::string timestamp;  // UTC, ISO 8601

  nlohmann::ordered_json to_json() const;
};

// `<output>.manifest.json`
std::filesystem::path manifest_path(const std::filesystem::path& output);

nlohmann::ordered_json to_json(const DatapathConfig& cfg);
nlohmann::ordered_json to_json(const LayerCost& layer);
nlohmann::ordered_json to_json(const CostReport& report);

}  // namespace adderkernel::cli
