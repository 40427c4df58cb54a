#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "vlmc/core.hpp"

namespace httplib {
class Server;
}

namespace vlmc {

// How the mock answers /v1/complete.
struct CoordinatorMode {
  enum class Kind { fixtures, oracle, echo_expert, fixed };
  Kind kind = Kind::fixtures;
  std::string argument;  // expert name for echo_expert, text for fixed

  // "fixtures" | "oracle" | "echo-expert:<name>" | "fixed:<text>"
  static CoordinatorMode parse(std::string_view text);
  std::string to_string() const;
};

// Fixture tables keyed by expert name. Image keys are ImageRef values.
struct MockFixtures {
  std::map<std::string, std::map<std::string, std::string>> captions;
  // expert -> (image, question) -> answer. An empty question is the
  // per-image default used when no exact question row exists.
  std::map<std::string, std::map<std::pair<std::string, std::string>, std::string>> answers;
  std::map<std::string, std::string> completions;  // exact prompt -> completion
  std::vector<InstanceRecord> sidecar;             // oracle gold source

  // Reads captions.jsonl, answers.jsonl and (optional) completions.jsonl.
  // Throws ParseError on malformed rows.
  static MockFixtures load(const std::filesystem::path& dir);
};

struct LoggedRequest {
  std::string endpoint;  // "caption", "answer", "complete", "embed", "health"
  std::string prefix;    // path prefix before /v1, e.g. "OFA"
  std::string body;
};

// Deterministic fixture-backed implementation of the backend wire protocol.
// Routes "/<name>/v1/<endpoint>": the prefix selects the expert for caption
// and answer; "/v1/<endpoint>" works when the fixtures hold one expert.
class MockServer {
 public:
  MockServer(MockFixtures fixtures, CoordinatorMode mode);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  // Binds host:port (port 0 picks a free port) and serves on a background
  // thread. Returns the bound port.
  int start(int port = 0, const std::string& host = "127.0.0.1");
  void stop();
  // Blocks until stop() is called from elsewhere.
  void wait();

  int port() const { return port_; }
  std::string base_url() const;
  std::string url_for(const std::string& prefix) const { return base_url() + "/" + prefix; }

  std::vector<LoggedRequest> requests() const;
  std::size_t request_count(const std::string& endpoint) const;
  // Data-endpoint requests (caption, answer, complete, embed).
  std::size_t data_request_count() const;
  void clear_log();

  // Test hooks: artificial latency and injected 503s on data endpoints.
  void set_delay(std::chrono::milliseconds delay);
  void inject_failures(std::size_t count);

 private:
  struct Reply {
    int status = 200;
    std::string body;
  };
  Reply handle(const std::string& prefix, const std::string& endpoint, const std::string& body);
  Reply complete(const std::string& prompt) const;
  std::string resolve_expert(const std::string& prefix) const;

  MockFixtures fixtures_;
  CoordinatorMode mode_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;

  mutable std::mutex mu_;
  std::vector<LoggedRequest> log_;
  std::chrono::milliseconds delay_{0};
  std::size_t failures_ = 0;
};

// Loads fixture_dir (plus the mode and sidecar named in fixture_dir/mock.json
// unless given explicitly) and starts serving on port.
std::unique_ptr<MockServer> serve_mock(const std::filesystem::path& fixture_dir, int port,
                                       std::optional<CoordinatorMode> mode = std::nullopt,
                                       std::optional<std::filesystem::path> sidecar = std::nullopt);

}  // namespace vlmc
