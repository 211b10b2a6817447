#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <json.hpp>

namespace recgen::cli {

// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

// CPU model, core count, OS and compiler of the current process.
nlohmann::json machine_info();

// Sidecar written next to every command output: `<output>.manifest.json`.
std::filesystem::path manifest_path_for(const std::filesystem::path& output);

class Manifest {
 public:
  Manifest(std::string command, const nlohmann::json& config);

  // Records the path and digest of an input file.
  void add_input(const std::string& role, const std::filesystem::path& path);
  void add_output(const std::string& role, const std::filesystem::path& path);
  nlohmann::json& results() { return j_["results"]; }
  nlohmann::json& extra() { return j_; }
  const nlohmann::json& json() const { return j_; }

  std::string input_digest(const std::string& role) const;

  void write(const std::filesystem::path& output) const;

 private:
  nlohmann::json j_;
};

// The manifest beside `output`, if one exists and parses.
std::optional<nlohmann::json> read_manifest(const std::filesystem::path& output);

// Digest recorded for input `role` in a manifest, or empty.
std::string recorded_digest(const nlohmann::json& manifest, const std::string& role);

// Writes through `writer` into a private temporary file next to `target` and
// renames it into place, so readers never see a partial file.
void write_atomically(const std::filesystem::path& target,
                      const std::function<void(const std::filesystem::path&)>& writer);

}  // namespace recgen::cli
