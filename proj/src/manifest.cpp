#include "cost/manifest.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "cost/errors.hpp"

namespace cost {

std::string sha256_hex(const void* data, size_t len) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data, len) != 1 ||
      EVP_DigestFinal_ex(ctx, digest, &digest_len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256 failed");
  }
  EVP_MD_CTX_free(ctx);
  std::string hex(digest_len * 2, '0');
  static const char* k = "0123456789abcdef";
  for (unsigned int i = 0; i < digest_len; ++i) {
    hex[2 * i] = k[digest[i] >> 4];
    hex[2 * i + 1] = k[digest[i] & 0xf];
  }
  return hex;
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot hash missing file " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(content);
}

std::string canonical_json_hash(const std::string& json_text) {
  try {
    // nlohmann objects keep keys sorted; dump() with no indent is canonical
    return sha256_hex(nlohmann::json::parse(json_text).dump());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("cannot canonicalize config: ") + e.what());
  }
}

void RunManifest::add_output(const std::filesystem::path& base,
                             const std::filesystem::path& file) {
  outputs.emplace_back(std::filesystem::relative(file, base).generic_string(),
                       sha256_file(file));
}

void RunManifest::add_output_tree(const std::filesystem::path& base,
                                  const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) add_output(base, f);
}

void RunManifest::write(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["command"] = command;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["version"] = version;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  j["outputs"] = nlohmann::json::array();
  for (const auto& [file, hash] : outputs)
    j["outputs"].push_back({{"file", file}, {"sha256", hash}});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write run manifest " + path.string());
  out << j.dump(2) << "\n";
}

std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace cost
