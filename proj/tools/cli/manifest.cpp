#include "cli/manifest.hpp"

#include <sys/utsname.h>
#include <unistd.h>

#include <array>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "recgen/error.hpp"

namespace recgen::cli {

using nlohmann::json;

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "' for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("SHA-256 init failed");
  std::array<char, 1 << 16> buffer{};
  while (in) {
    in.read(buffer.data(), buffer.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buffer.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return hex.str();
}

json machine_info() {
  json m;
  std::string cpu = "unknown";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  }
  m["cpu"] = cpu;
  m["hardware_threads"] = std::thread::hardware_concurrency();
  utsname u{};
  if (uname(&u) == 0) m["os"] = std::string(u.sysname) + " " + u.release + " " + u.machine;
#if defined(__clang__)
  m["compiler"] = "clang " __clang_version__;
#elif defined(__GNUC__)
  m["compiler"] = "gcc " __VERSION__;
#endif
  return m;
}

std::filesystem::path manifest_path_for(const std::filesystem::path& output) {
  return std::filesystem::path(output.string() + ".manifest.json");
}

Manifest::Manifest(std::string command, const nlohmann::json& config) {
  j_["command"] = std::move(command);
  j_["tool_version"] = "0.1.0";
  j_["config"] = config;
  j_["inputs"] = nlohmann::json::object();
  j_["outputs"] = nlohmann::json::object();
  j_["results"] = nlohmann::json::object();
}

void Manifest::add_input(const std::string& role, const std::filesystem::path& path) {
  j_["inputs"][role] = {{"path", path.string()}, {"sha256", sha256_file(path)}};
}

void Manifest::add_output(const std::string& role, const std::filesystem::path& path) {
  j_["outputs"][role] = path.string();
}

std::string Manifest::input_digest(const std::string& role) const { return recorded_digest(j_, role); }

void Manifest::write(const std::filesystem::path& output) const {
  write_atomically(manifest_path_for(output), [&](const std::filesystem::path& tmp) {
    std::ofstream out(tmp, std::ios::trunc);
    out << j_.dump(2) << '\n';
    if (!out) throw DataError("failed writing manifest for '" + output.string() + "'");
  });
}

std::optional<json> read_manifest(const std::filesystem::path& output) {
  const auto path = manifest_path_for(output);
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::parse_error&) {
    return std::nullopt;
  }
}

std::string recorded_digest(const json& manifest, const std::string& role) {
  const auto inputs = manifest.find("inputs");
  if (inputs == manifest.end() || !inputs->contains(role)) return {};
  const auto& entry = (*inputs)[role];
  return entry.contains("sha256") ? entry["sha256"].get<std::string>() : std::string{};
}

void write_atomically(const std::filesystem::path& target,
                      const std::function<void(const std::filesystem::path&)>& writer) {
  if (target.has_parent_path() && !std::filesystem::exists(target.parent_path())) {
    throw DataError("output directory '" + target.parent_path().string() + "' does not exist");
  }
  const auto tmp = std::filesystem::path(target.string() + ".tmp." + std::to_string(::getpid()));
  try {
    writer(tmp);
    std::filesystem::rename(tmp, target);
  } catch (...) {
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw;
  }
}

}  // namespace recgen::cli
