#include "tokerase/manifest.hpp"

#include <fstream>
#include <stdexcept>

namespace tokerase {

std::filesystem::path RunManifest::artifact_path(const std::filesystem::path& run_dir,
                                                 const std::string& name) const {
  const auto it = artifacts.find(name);
  if (it == artifacts.end())
    throw std::runtime_error("manifest for stage '" + stage + "' lists no artifact '" +
                             name + "'");
  return run_dir / it->second;
}

void save_manifest(const RunManifest& m, const std::filesystem::path& run_dir) {
  nlohmann::json j;
  j["stage"] = m.stage;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["config"] = m.config;
  j["inputs"] = m.inputs;
  j["artifacts"] = m.artifacts;
  std::ofstream out(run_dir / "manifest.json", std::ios::binary);
  if (!out)
    throw std::runtime_error("manifest: cannot write " + (run_dir / "manifest.json").string());
  out << j.dump(2) << "\n";
}

RunManifest load_manifest(const std::filesystem::path& run_dir) {
  const auto path = run_dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("manifest: " + path.string() + ": " + e.what());
  }
  RunManifest m;
  m.stage = j.at("stage").get<std::string>();
  m.version = j.at("version").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.config = j.at("config");
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  return m;
}

RunManifest require_stage(const std::filesystem::path& run_dir,
                          const std::string& expected_stage) {
  if (!std::filesystem::exists(run_dir / "manifest.json"))
    throw std::runtime_error("missing upstream stage '" + expected_stage +
                             "': no manifest at " + run_dir.string());
  RunManifest m = load_manifest(run_dir);
  if (m.stage != expected_stage)
    throw std::runtime_error("missing upstream stage '" + expected_stage + "': " +
                             run_dir.string() + " holds a '" + m.stage + "' run");
  return m;
}

}  // namespace tokerase
