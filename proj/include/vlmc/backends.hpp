#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "vlmc/core.hpp"

namespace vlmc {

// Network failure or transient server failure; retried.
class TransportError : public Error {
 public:
  using Error::Error;
};

// A backend that fails its health check. Fatal for the whole run.
class BackendUnavailable : public TransportError {
 public:
  using TransportError::TransportError;
};

// Response delivered but malformed, or a 4xx error body. Never retried.
class ProtocolError : public Error {
 public:
  ProtocolError(std::string code, const std::string& message)
      : Error(code + ": " + message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

enum class Role { expert, coordinator, embedder };

std::string_view to_string(Role role);
Role parse_role(std::string_view text);

// base_url "builtin:fallback" selects the in-process trigram embedder.
inline constexpr std::string_view kBuiltinFallbackUrl = "builtin:fallback";

struct BackendHandle {
  std::string name;
  std::string base_url;
  Role role = Role::expert;
  int timeout_ms = 30000;
  int max_retries = 2;

  bool operator==(const BackendHandle&) const = default;
};

void to_json(nlohmann::json& j, const BackendHandle& h);
// Role is supplied by the slot the handle occupies in a config.
BackendHandle backend_from_json(const nlohmann::json& j, Role role);

struct CompletionText {
  std::string value;
  std::string backend;
};

struct EmbeddingVector {
  std::vector<double> values;
  std::size_t dim() const { return values.size(); }
  bool operator==(const EmbeddingVector&) const = default;
};

struct CacheKey {
  std::string backend_name;
  std::string operation;
  std::string payload_digest;  // sha256 hex of the canonical request body

  // Stable identifier used as the cache file name.
  std::string digest() const;
};

// Canonical form is nlohmann's dump(), which emits object keys sorted.
CacheKey make_cache_key(std::string_view backend_name, std::string_view operation,
                        const nlohmann::json& body);

// Content-addressed on-disk response cache, one JSON file per key. Writes
// for a key are serialized and the compute callback runs at most once per
// key while the entry is absent.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path root);

  std::optional<nlohmann::json> get(const CacheKey& key) const;
  void put(const CacheKey& key, const nlohmann::json& response);
  nlohmann::json get_or_compute(const CacheKey& key, const std::function<nlohmann::json()>& compute);

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path path_for(const CacheKey& key) const;
  std::mutex& lock_for(const std::string& digest);

  std::filesystem::path root_;
  std::mutex locks_guard_;
  std::unordered_map<std::string, std::unique_ptr<std::mutex>> locks_;
};

class Transport {
 public:
  virtual ~Transport() = default;
  // POSTs body to path ("/v1/caption", ...). Throws TransportError on
  // connection failure, timeout or 5xx; ProtocolError on other error bodies
  // or a non-JSON payload.
  virtual nlohmann::json post(std::string_view path, const nlohmann::json& body,
                              std::chrono::milliseconds timeout) = 0;
};

// JSON over HTTP via cpp-httplib. base_url may carry a path prefix
// ("http://host:port/OFA"), prepended to every endpoint path.
class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(std::string base_url);
  nlohmann::json post(std::string_view path, const nlohmann::json& body,
                      std::chrono::milliseconds timeout) override;

 private:
  std::string origin_;
  std::string prefix_;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  // One vector per text, order preserved, single batch. Throws UsageError on
  // an empty batch.
  virtual std::vector<EmbeddingVector> embed(std::span<const std::string> texts) = 0;
  virtual std::string name() const = 0;
};

// Deterministic offline embedder: L2-normalized counts of hashed character
// trigrams of normalize_text(text), 1024 buckets.
EmbeddingVector fallback_embed(std::string_view text);

class FallbackEmbedder final : public Embedder {
 public:
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;
  std::string name() const override { return "fallback"; }
};

// Client for one backend. Safe for concurrent use. Every data call goes
// through the cache (when present), then a lazy one-time health check, then
// up to 1 + max_retries transport attempts.
class BackendClient final : public Embedder {
 public:
  BackendClient(BackendHandle handle, std::shared_ptr<Transport> transport,
                std::shared_ptr<ResponseCache> cache = nullptr);

  // Convenience: HttpTransport over handle.base_url.
  static std::shared_ptr<BackendClient> connect(BackendHandle handle,
                                                std::shared_ptr<ResponseCache> cache = nullptr);

  std::string caption(const ImageRef& image);
  std::string plausible_answer(const ImageRef& image, std::string_view query);
  CompletionText complete(std::string_view prompt, int max_new_tokens = 30);
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;
  std::string name() const override { return handle_.name; }

  // Roles the server reports. Throws BackendUnavailable when unreachable or
  // when this client's role is not served.
  void check_health();

  const BackendHandle& handle() const { return handle_; }
  // Transport attempts on data endpoints (health checks excluded).
  std::size_t transport_calls() const { return transport_calls_.load(); }

 private:
  void require_role(Role role, std::string_view op) const;
  nlohmann::json call(std::string_view operation, std::string_view path, const nlohmann::json& body);
  nlohmann::json call_uncached(std::string_view path, const nlohmann::json& body);
  void ensure_healthy();

  BackendHandle handle_;
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<ResponseCache> cache_;
  std::atomic<std::size_t> transport_calls_{0};
  std::once_flag health_once_;
  std::exception_ptr health_error_;
};

// Embedder for a handle: the builtin fallback or a remote client.
std::shared_ptr<Embedder> make_embedder(const BackendHandle& handle,
                                        std::shared_ptr<ResponseCache> cache = nullptr);

}  // namespace vlmc
