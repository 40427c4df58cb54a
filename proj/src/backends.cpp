#include "vlmc/backends.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "vlmc/hashing.hpp"
#include "vlmc/kernels.hpp"

namespace vlmc {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::expert: return "expert";
    case Role::coordinator: return "coordinator";
    case Role::embedder: return "embedder";
  }
  return "expert";
}

Role parse_role(std::string_view text) {
  if (text == "expert") return Role::expert;
  if (text == "coordinator") return Role::coordinator;
  if (text == "embedder") return Role::embedder;
  throw UsageError("unknown backend role: " + std::string(text));
}

void to_json(nlohmann::json& j, const BackendHandle& h) {
  j = nlohmann::json{{"name", h.name},
                     {"base_url", h.base_url},
                     {"timeout_ms", h.timeout_ms},
                     {"max_retries", h.max_retries}};
}

BackendHandle backend_from_json(const nlohmann::json& j, Role role) {
  BackendHandle h;
  h.name = j.at("name").get<std::string>();
  h.base_url = j.at("base_url").get<std::string>();
  h.role = role;
  h.timeout_ms = j.value("timeout_ms", 30000);
  h.max_retries = j.value("max_retries", 2);
  if (h.name.empty()) throw UsageError("backend name must be non-empty");
  if (h.timeout_ms <= 0) throw UsageError("backend " + h.name + ": timeout_ms must be > 0");
  if (h.max_retries < 0) throw UsageError("backend " + h.name + ": max_retries must be >= 0");
  return h;
}

std::string CacheKey::digest() const {
  return sha256_hex(backend_name + '\n' + operation + '\n' + payload_digest);
}

CacheKey make_cache_key(std::string_view backend_name, std::string_view operation,
                        const nlohmann::json& body) {
  return CacheKey{std::string(backend_name), std::string(operation), sha256_hex(body.dump())};
}

// ---------------------------------------------------------------------------
// ResponseCache

ResponseCache::ResponseCache(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
}

std::filesystem::path ResponseCache::path_for(const CacheKey& key) const {
  const std::string d = key.digest();
  return root_ / d.substr(0, 2) / (d + ".json");
}

std::mutex& ResponseCache::lock_for(const std::string& digest) {
  std::lock_guard guard(locks_guard_);
  auto& slot = locks_[digest];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

std::optional<nlohmann::json> ResponseCache::get(const CacheKey& key) const {
  std::ifstream in(path_for(key));
  if (!in) return std::nullopt;
  auto doc = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.contains("response")) return std::nullopt;
  return doc.at("response");
}

void ResponseCache::put(const CacheKey& key, const nlohmann::json& response) {
  const auto path = path_for(key);
  std::filesystem::create_directories(path.parent_path());
  const nlohmann::json doc{{"backend", key.backend_name},
                           {"operation", key.operation},
                           {"payload_digest", key.payload_digest},
                           {"response", response}};
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << doc.dump();
    if (!out) throw Error("cache write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json ResponseCache::get_or_compute(const CacheKey& key,
                                             const std::function<nlohmann::json()>& compute) {
  std::lock_guard guard(lock_for(key.digest()));
  if (auto hit = get(key)) return *hit;
  auto fresh = compute();
  put(key, fresh);
  return fresh;
}

// ---------------------------------------------------------------------------
// HttpTransport

HttpTransport::HttpTransport(std::string base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw UsageError("base_url lacks a scheme: " + base_url);
  const auto path_start = base_url.find('/', scheme_end + 3);
  origin_ = base_url.substr(0, path_start);
  if (path_start != std::string::npos) prefix_ = base_url.substr(path_start);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
}

nlohmann::json HttpTransport::post(std::string_view path, const nlohmann::json& body,
                                   std::chrono::milliseconds timeout) {
  httplib::Client client(origin_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  const std::string target = prefix_ + std::string(path);
  auto res = client.Post(target, body.dump(), "application/json");
  if (!res) {
    throw TransportError("POST " + origin_ + target + " failed: " + httplib::to_string(res.error()));
  }
  auto doc = nlohmann::json::parse(res->body, nullptr, /*allow_exceptions=*/false);
  if (res->status >= 200 && res->status < 300) {
    if (doc.is_discarded() || !doc.is_object()) {
      throw ProtocolError("malformed_response", "non-JSON body from " + origin_ + target);
    }
    return doc;
  }
  std::string code = "http_" + std::to_string(res->status);
  std::string message = res->body;
  if (!doc.is_discarded() && doc.contains("error") && doc["error"].is_object()) {
    code = doc["error"].value("code", code);
    message = doc["error"].value("message", message);
  }
  if (res->status >= 500 || res->status == 408 || res->status == 429) {
    throw TransportError("POST " + target + " -> " + std::to_string(res->status) + " " + code + ": " +
                         message);
  }
  throw ProtocolError(code, message);
}

// ---------------------------------------------------------------------------
// Fallback embedder

EmbeddingVector fallback_embed(std::string_view text) {
  EmbeddingVector v;
  v.values.resize(kernels::kTrigramDim);
  kernels::trigram_embed_one(normalize_text(text).value(), v.values);
  return v;
}

std::vector<EmbeddingVector> FallbackEmbedder::embed(std::span<const std::string> texts) {
  if (texts.empty()) throw UsageError("embed requires at least one text");
  std::vector<double> flat(texts.size() * kernels::kTrigramDim);
  kernels::trigram_embed_parallel(texts, flat);
  std::vector<EmbeddingVector> out(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto first = flat.begin() + static_cast<std::ptrdiff_t>(i * kernels::kTrigramDim);
    out[i].values.assign(first, first + static_cast<std::ptrdiff_t>(kernels::kTrigramDim));
  }
  return out;
}

// ---------------------------------------------------------------------------
// BackendClient

namespace {

std::string require_string(const nlohmann::json& doc, const char* field) {
  auto it = doc.find(field);
  if (it == doc.end() || !it->is_string()) {
    throw ProtocolError("malformed_response", std::string("missing string field '") + field + "'");
  }
  return it->get<std::string>();
}

}  // namespace

BackendClient::BackendClient(BackendHandle handle, std::shared_ptr<Transport> transport,
                             std::shared_ptr<ResponseCache> cache)
    : handle_(std::move(handle)), transport_(std::move(transport)), cache_(std::move(cache)) {}

std::shared_ptr<BackendClient> BackendClient::connect(BackendHandle handle,
                                                      std::shared_ptr<ResponseCache> cache) {
  auto transport = std::make_shared<HttpTransport>(handle.base_url);
  return std::make_shared<BackendClient>(std::move(handle), std::move(transport), std::move(cache));
}

void BackendClient::require_role(Role role, std::string_view op) const {
  if (handle_.role != role) {
    throw UsageError(std::string(op) + " needs a " + std::string(to_string(role)) + " backend; " +
                     handle_.name + " is " + std::string(to_string(handle_.role)));
  }
}

void BackendClient::check_health() {
  nlohmann::json res;
  try {
    res = transport_->post("/v1/health", nlohmann::json::object(),
                           std::chrono::milliseconds(handle_.timeout_ms));
  } catch (const Error& e) {
    throw BackendUnavailable("backend " + handle_.name + " failed health check: " + e.what());
  }
  if (!res.value("ok", false)) throw BackendUnavailable("backend " + handle_.name + " reports not ok");
  const auto roles = res.value("roles", std::vector<std::string>{});
  if (std::find(roles.begin(), roles.end(), to_string(handle_.role)) == roles.end()) {
    throw BackendUnavailable("backend " + handle_.name + " does not serve role " +
                             std::string(to_string(handle_.role)));
  }
}

void BackendClient::ensure_healthy() {
  std::call_once(health_once_, [this] {
    try {
      check_health();
    } catch (...) {
      health_error_ = std::current_exception();
    }
  });
  if (health_error_) std::rethrow_exception(health_error_);
}

nlohmann::json BackendClient::call_uncached(std::string_view path, const nlohmann::json& body) {
  ensure_healthy();
  const int attempts = 1 + handle_.max_retries;
  for (int attempt = 1;; ++attempt) {
    ++transport_calls_;
    try {
      return transport_->post(path, body, std::chrono::milliseconds(handle_.timeout_ms));
    } catch (const TransportError& e) {
      if (attempt >= attempts) {
        throw TransportError(handle_.name + ": " + std::string(path) + " failed after " +
                             std::to_string(attempts) + " attempt(s): " + e.what());
      }
      log(LogLevel::info, handle_.name + ": retrying " + std::string(path) + " after: " + e.what());
    }
  }
}

nlohmann::json BackendClient::call(std::string_view operation, std::string_view path,
                                   const nlohmann::json& body) {
  if (!cache_) return call_uncached(path, body);
  return cache_->get_or_compute(make_cache_key(handle_.name, operation, body),
                                [&] { return call_uncached(path, body); });
}

std::string BackendClient::caption(const ImageRef& image) {
  require_role(Role::expert, "caption");
  const nlohmann::json body{{"image", image}};
  return require_string(call("caption", "/v1/caption", body), "caption");
}

std::string BackendClient::plausible_answer(const ImageRef& image, std::string_view query) {
  require_role(Role::expert, "plausible_answer");
  const nlohmann::json body{{"image", image}, {"question", query}};
  return require_string(call("answer", "/v1/answer", body), "answer");
}

CompletionText BackendClient::complete(std::string_view prompt, int max_new_tokens) {
  require_role(Role::coordinator, "complete");
  const nlohmann::json body{{"prompt", prompt}, {"max_new_tokens", max_new_tokens}, {"greedy", true}};
  return CompletionText{require_string(call("complete", "/v1/complete", body), "completion"), handle_.name};
}

std::vector<EmbeddingVector> BackendClient::embed(std::span<const std::string> texts) {
  require_role(Role::embedder, "embed");
  if (texts.empty()) throw UsageError("embed requires at least one text");
  const nlohmann::json body{{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
  const auto res = call("embed", "/v1/embed", body);

  const auto vit = res.find("vectors");
  if (vit == res.end() || !vit->is_array() || vit->size() != texts.size()) {
    throw ProtocolError("malformed_response", "embed: expected " + std::to_string(texts.size()) + " vectors");
  }
  const auto dim = res.value("dim", std::size_t{0});
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& row : *vit) {
    if (!row.is_array() || row.size() != dim || dim == 0) {
      throw ProtocolError("malformed_response", "embed: vector length does not match dim");
    }
    EmbeddingVector v;
    v.values.reserve(dim);
    for (const auto& x : row) {
      if (!x.is_number() || !std::isfinite(x.get<double>())) {
        throw ProtocolError("malformed_response", "embed: non-finite entry");
      }
      v.values.push_back(x.get<double>());
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::shared_ptr<Embedder> make_embedder(const BackendHandle& handle, std::shared_ptr<ResponseCache> cache) {
  if (handle.base_url == kBuiltinFallbackUrl) return std::make_shared<FallbackEmbedder>();
  return BackendClient::connect(handle, std::move(cache));
}

}  // namespace vlmc
