#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace turnwise {

std::string sha256_hex(std::string_view data);
// Throws InvalidInput if the file cannot be read.
std::string file_sha256(const std::filesystem::path& path);

// On-disk memo for model calls. Records live at <root>/<h[0:2]>/<h>.json.
//
// Distinct keys may be read and written concurrently. Writing the same key
// twice is idempotent: each write goes to a private temp file that is then
// renamed over the destination.
class ContentCache {
 public:
  explicit ContentCache(std::filesystem::path root);

  // Content hash of (model id, payload). Used for every cached call so that
  // judge and generator records share one keyspace.
  static std::string key(std::string_view model_id, std::string_view payload);

  std::optional<nlohmann::json> get(const std::string& hash) const;
  void put(const std::string& hash, const nlohmann::json& record) const;

  std::filesystem::path path_for(const std::string& hash) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

}  // namespace turnwise
