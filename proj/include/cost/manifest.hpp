#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cost/tensor.hpp"

namespace cost {

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::filesystem::path& path);

/// SHA-256 of the canonical form (sorted keys, no whitespace) of a JSON text.
std::string canonical_json_hash(const std::string& json_text);

/// Provenance record every CLI subcommand writes next to its outputs.
struct RunManifest {
  std::string command;
  std::string config_hash;
  u64 seed = 0;
  std::string version;
  std::string started_at, finished_at;  // ISO-8601 UTC
  std::vector<std::pair<std::string, std::string>> outputs;  // path -> sha256

  void add_output(const std::filesystem::path& base, const std::filesystem::path& file);
  /// Hashes every regular file under dir (relative paths, sorted).
  void add_output_tree(const std::filesystem::path& base, const std::filesystem::path& dir);
  void write(const std::filesystem::path& path) const;
};

std::string iso8601_now();

}  // namespace cost
