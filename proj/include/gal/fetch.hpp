#pragma once

// Dataset downloader. Requires OpenSSL (SHA-256, HTTPS) and zlib (gunzip);
// include only from targets that link gal::fetch.

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif

#include <openssl/evp.h>
#include <zlib.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "httplib.h"

#include "gal/error.hpp"

namespace gal {

struct ManifestEntry {
  std::string url;
  std::string sha256;    // hex digest of the stored (decompressed) file
  std::string filename;  // stored name; defaults to the URL basename without .gz
};

// Built-in manifest for the standard MNIST splits.
inline std::vector<ManifestEntry> default_mnist_manifest() {
  const std::string base = "https://ossci-datasets.s3.amazonaws.com/mnist/";
  return {
      {base + "train-images-idx3-ubyte.gz",
       "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
       "train-images-idx3-ubyte"},
      {base + "train-labels-idx1-ubyte.gz",
       "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
       "train-labels-idx1-ubyte"},
      {base + "t10k-images-idx3-ubyte.gz",
       "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
       "t10k-images-idx3-ubyte"},
      {base + "t10k-labels-idx1-ubyte.gz",
       "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
       "t10k-labels-idx1-ubyte"},
  };
}

// Manifest text: one entry per line, "URL SHA256 [FILENAME]"; '#' starts a comment.
inline std::vector<ManifestEntry> parse_manifest(std::string_view text) {
  std::vector<ManifestEntry> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    ManifestEntry e;
    if (!(fields >> e.url)) continue;
    if (!(fields >> e.sha256) || e.sha256.size() != 64) {
      throw Error(ErrorKind::config,
                  "manifest line " + std::to_string(lineno) + ": expected URL and SHA-256");
    }
    fields >> e.filename;
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::integrity, "SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

inline std::string gunzip(std::string_view compressed) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) {
    throw Error(ErrorKind::integrity, "zlib init failed");
  }
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(compressed.data()));
  zs.avail_in = static_cast<uInt>(compressed.size());
  std::string out;
  char buf[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof(buf);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw Error(ErrorKind::integrity, "gunzip failed at input byte offset " +
                                            std::to_string(zs.total_in));
    }
    out.append(buf, sizeof(buf) - zs.avail_out);
  }
  inflateEnd(&zs);
  return out;
}

struct FetchStats {
  std::size_t downloaded = 0;
  std::size_t cached = 0;
};

namespace detail {

inline std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string http_get(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorKind::config, "malformed URL " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
  httplib::Client client(origin);
  client.set_follow_location(true);
  client.set_connection_timeout(30);
  client.set_read_timeout(120);
  auto res = client.Get(path);
  if (!res) {
    throw Error(ErrorKind::transport,
                "GET " + url + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error(ErrorKind::transport,
                "GET " + url + " returned HTTP " + std::to_string(res->status));
  }
  return std::move(res->body);
}

inline std::string stored_name(const ManifestEntry& e) {
  if (!e.filename.empty()) return e.filename;
  std::string name = e.url.substr(e.url.find_last_of('/') + 1);
  if (name.size() > 3 && name.ends_with(".gz")) name.resize(name.size() - 3);
  return name;
}

}  // namespace detail

// Downloads every manifest entry into dest_dir unless a file with the expected
// digest is already there. Payloads ending in .gz are decompressed first.
inline std::vector<std::filesystem::path> fetch_dataset(
    const std::vector<ManifestEntry>& manifest, const std::filesystem::path& dest_dir,
    FetchStats* stats = nullptr) {
  std::filesystem::create_directories(dest_dir);
  std::vector<std::filesystem::path> paths;
  for (const auto& entry : manifest) {
    const auto target = dest_dir / detail::stored_name(entry);
    if (std::filesystem::exists(target) &&
        sha256_hex(detail::read_all(target)) == entry.sha256) {
      if (stats) ++stats->cached;
      paths.push_back(target);
      continue;
    }
    std::string body = detail::http_get(entry.url);
    if (entry.url.ends_with(".gz")) body = gunzip(body);
    const auto digest = sha256_hex(body);
    if (digest != entry.sha256) {
      throw Error(ErrorKind::integrity, "checksum mismatch for " + entry.url +
                                            ": expected " + entry.sha256 + ", got " + digest);
    }
    const auto tmp = target.string() + ".part";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out.write(body.data(), static_cast<std::streamsize>(body.size()));
      if (!out) throw Error(ErrorKind::io, "cannot write " + tmp);
    }
    std::filesystem::rename(tmp, target);
    if (stats) ++stats->downloaded;
    paths.push_back(target);
  }
  return paths;
}

}  // namespace gal
