#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

namespace tokerase {

inline constexpr const char* kToolVersion = "tokerase 0.1.0";

/// Record of one pipeline stage: enough to locate every artifact it produced
/// and to re-run it byte-identically. Stages chain by reading the manifest of
/// the upstream run directory.
struct RunManifest {
  std::string stage;
  std::string version = kToolVersion;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::string> inputs;     // upstream name -> run dir
  std::map<std::string, std::string> artifacts;  // artifact name -> file path

  std::filesystem::path artifact_path(const std::filesystem::path& run_dir,
                                      const std::string& name) const;
};

void save_manifest(const RunManifest& m, const std::filesystem::path& run_dir);
RunManifest load_manifest(const std::filesystem::path& run_dir);

/// Loads the manifest of an upstream run and checks its stage; a missing or
/// mismatched run is reported by the stage name the caller needs.
RunManifest require_stage(const std::filesystem::path& run_dir,
                          const std::string& expected_stage);

}  // namespace tokerase
