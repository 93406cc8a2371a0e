#include "turnwise/content_cache.hpp"

#include <openssl/evp.h>

#include <array>
#include <atomic>
#include <fstream>
#include <memory>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "turnwise/errors.hpp"

namespace turnwise {

namespace fs = std::filesystem;

namespace {

std::string to_hex(const unsigned char* data, unsigned len) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(len * 2, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = kDigits[data[i] >> 4];
    out[2 * i + 1] = kDigits[data[i] & 0xF];
  }
  return out;
}

struct MdCtxDeleter {
  void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
  }
  void update(const void* data, std::size_t len) { EVP_DigestUpdate(ctx_.get(), data, len); }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned len = 0;
    EVP_DigestFinal_ex(ctx_.get(), digest.data(), &len);
    return to_hex(digest.data(), len);
  }

 private:
  std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view data) {
  Sha256 h;
  h.update(data.data(), data.size());
  return h.hex();
}

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

ContentCache::ContentCache(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

std::string ContentCache::key(std::string_view model_id, std::string_view payload) {
  Sha256 h;
  h.update(model_id.data(), model_id.size());
  const char sep = '\0';
  h.update(&sep, 1);
  h.update(payload.data(), payload.size());
  return h.hex();
}

fs::path ContentCache::path_for(const std::string& hash) const {
  if (hash.size() < 3) throw InvalidInput("cache key too short");
  return root_ / hash.substr(0, 2) / (hash + ".json");
}

std::optional<nlohmann::json> ContentCache::get(const std::string& hash) const {
  std::ifstream in(path_for(hash));
  if (!in) return std::nullopt;
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error&) {
    return std::nullopt;  // torn or foreign file; treated as a miss
  }
}

void ContentCache::put(const std::string& hash, const nlohmann::json& record) const {
  static std::atomic<unsigned long> counter{0};
  const fs::path dest = path_for(hash);
  fs::create_directories(dest.parent_path());
  std::ostringstream suffix;
  suffix << ".tmp." << ::getpid() << '.' << std::this_thread::get_id() << '.' << counter.fetch_add(1);
  const fs::path tmp = dest.string() + suffix.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << record.dump(2) << '\n';
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw std::runtime_error("cache write failed: " + tmp.string());
    }
  }
  fs::rename(tmp, dest);
}

}  // namespace turnwise
