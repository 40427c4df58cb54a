#include "vlmc/mock_server.hpp"

#include <fstream>
#include <set>

#include <httplib.h>
#include <json.hpp>

#include "vlmc/backends.hpp"
#include "vlmc/datasets.hpp"
#include "vlmc/kernels.hpp"
#include "vlmc/promptkit.hpp"

namespace vlmc {

namespace {

using nlohmann::json;

std::string error_body(std::string_view code, std::string_view message) {
  return json{{"error", {{"code", code}, {"message", message}}}}.dump();
}

// Reads a JSONL file into objects, reporting file:line on malformed rows.
std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open");
  std::vector<json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto row = json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.is_object()) throw ParseError(path.string(), line_no, "not a JSON object");
    row["__line"] = line_no;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string field(const json& row, const char* name, const std::filesystem::path& file) {
  auto it = row.find(name);
  if (it == row.end() || !it->is_string()) {
    throw ParseError(file.string(), row.value("__line", std::size_t{0}), std::string("missing string field '") + name + "'");
  }
  return it->get<std::string>();
}

std::string_view ltrim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

// Text of the last line starting with marker, or nullopt.
std::optional<std::string> last_line_with(const std::string& text, std::string_view marker) {
  std::size_t pos = std::string::npos;
  if (text.rfind(marker, 0) == 0) pos = 0;
  const auto nl = text.rfind("\n" + std::string(marker));
  if (nl != std::string::npos) pos = nl + 1;
  if (pos == std::string::npos) return std::nullopt;
  const auto start = pos + marker.size();
  const auto end = text.find('\n', start);
  return text.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

}  // namespace

CoordinatorMode CoordinatorMode::parse(std::string_view text) {
  if (text == "fixtures") return {Kind::fixtures, {}};
  if (text == "oracle") return {Kind::oracle, {}};
  constexpr std::string_view echo = "echo-expert:";
  constexpr std::string_view fixed = "fixed:";
  if (text.substr(0, echo.size()) == echo && text.size() > echo.size()) {
    return {Kind::echo_expert, std::string(text.substr(echo.size()))};
  }
  if (text.substr(0, fixed.size()) == fixed) {
    auto arg = std::string(text.substr(fixed.size()));
    if (arg.size() >= 2 && arg.front() == '"' && arg.back() == '"') arg = arg.substr(1, arg.size() - 2);
    return {Kind::fixed, arg};
  }
  throw UsageError("unknown mock coordinator mode: " + std::string(text));
}

std::string CoordinatorMode::to_string() const {
  switch (kind) {
    case Kind::fixtures: return "fixtures";
    case Kind::oracle: return "oracle";
    case Kind::echo_expert: return "echo-expert:" + argument;
    case Kind::fixed: return "fixed:" + argument;
  }
  return "fixtures";
}

MockFixtures MockFixtures::load(const std::filesystem::path& dir) {
  MockFixtures fx;
  const auto captions = dir / "captions.jsonl";
  for (const auto& row : read_jsonl(captions)) {
    fx.captions[field(row, "expert", captions)][field(row, "image", captions)] = field(row, "caption", captions);
  }
  const auto answers = dir / "answers.jsonl";
  for (const auto& row : read_jsonl(answers)) {
    const std::string question = row.contains("question") ? field(row, "question", answers) : std::string{};
    fx.answers[field(row, "expert", answers)][{field(row, "image", answers), question}] =
        field(row, "answer", answers);
  }
  const auto completions = dir / "completions.jsonl";
  if (std::filesystem::exists(completions)) {
    for (const auto& row : read_jsonl(completions)) {
      fx.completions[field(row, "prompt", completions)] = field(row, "completion", completions);
    }
  }
  return fx;
}

MockServer::MockServer(MockFixtures fixtures, CoordinatorMode mode)
    : fixtures_(std::move(fixtures)), mode_(std::move(mode)), server_(std::make_unique<httplib::Server>()) {
  if (mode_.kind == CoordinatorMode::Kind::oracle && fixtures_.sidecar.empty()) {
    throw UsageError("oracle mode needs a dataset sidecar");
  }
  server_->Post(R"((?:/([^/]+))?/v1/(caption|answer|complete|embed|health))",
                [this](const httplib::Request& req, httplib::Response& res) {
                  const auto reply = handle(req.matches[1].str(), req.matches[2].str(), req.body);
                  res.status = reply.status;
                  res.set_content(reply.body, "application/json");
                });
}

MockServer::~MockServer() { stop(); }

int MockServer::start(int port, const std::string& host) {
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
  } else {
    if (!server_->bind_to_port(host, port)) throw Error("mock server cannot bind " + host + ":" + std::to_string(port));
    port_ = port;
  }
  if (port_ <= 0) throw Error("mock server failed to bind");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void MockServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void MockServer::wait() {
  if (thread_.joinable()) thread_.join();
}

std::string MockServer::base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

std::vector<LoggedRequest> MockServer::requests() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::size_t MockServer::request_count(const std::string& endpoint) const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& r : log_) n += (r.endpoint == endpoint);
  return n;
}

std::size_t MockServer::data_request_count() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& r : log_) n += (r.endpoint != "health");
  return n;
}

void MockServer::clear_log() {
  std::lock_guard lock(mu_);
  log_.clear();
}

void MockServer::set_delay(std::chrono::milliseconds delay) {
  std::lock_guard lock(mu_);
  delay_ = delay;
}

void MockServer::inject_failures(std::size_t count) {
  std::lock_guard lock(mu_);
  failures_ = count;
}

std::string MockServer::resolve_expert(const std::string& prefix) const {
  if (!prefix.empty()) return prefix;
  if (fixtures_.captions.size() == 1) return fixtures_.captions.begin()->first;
  return {};
}

MockServer::Reply MockServer::handle(const std::string& prefix, const std::string& endpoint,
                                     const std::string& body) {
  std::chrono::milliseconds delay{0};
  bool fail = false;
  {
    std::lock_guard lock(mu_);
    log_.push_back({endpoint, prefix, body});
    if (endpoint != "health") {
      delay = delay_;
      if (failures_ > 0) {
        --failures_;
        fail = true;
      }
    }
  }
  if (delay.count() > 0) std::this_thread::sleep_for(delay);
  if (fail) return {503, error_body("unavailable", "injected failure")};

  const auto req = json::parse(body, nullptr, false);
  if (req.is_discarded() || !req.is_object()) return {400, error_body("bad_request", "body is not a JSON object")};

  if (endpoint == "health") {
    json roles = json::array();
    if (!fixtures_.captions.empty()) roles.push_back("expert");
    roles.push_back("coordinator");
    roles.push_back("embedder");
    return {200, json{{"ok", true}, {"roles", roles}}.dump()};
  }

  try {
    if (endpoint == "caption" || endpoint == "answer") {
      const auto expert = resolve_expert(prefix);
      const auto image = req.at("image").get<ImageRef>();
      if (endpoint == "caption") {
        auto it = fixtures_.captions.find(expert);
        if (it == fixtures_.captions.end()) return {404, error_body("unknown_expert", "unknown expert '" + expert + "'")};
        auto img = it->second.find(image.value);
        if (img == it->second.end()) return {404, error_body("unknown_image", "unknown image")};
        return {200, json{{"caption", img->second}}.dump()};
      }
      const auto question = req.at("question").get<std::string>();
      auto it = fixtures_.answers.find(expert);
      if (it == fixtures_.answers.end()) return {404, error_body("unknown_expert", "unknown expert '" + expert + "'")};
      auto exact = it->second.find({image.value, question});
      if (exact == it->second.end()) exact = it->second.find({image.value, std::string{}});
      if (exact == it->second.end()) {
        const bool known_image = fixtures_.captions.count(expert) && fixtures_.captions.at(expert).count(image.value);
        return {404, known_image ? error_body("unknown_question", "no answer for question")
                                 : error_body("unknown_image", "unknown image")};
      }
      return {200, json{{"answer", exact->second}}.dump()};
    }
    if (endpoint == "complete") {
      return complete(req.at("prompt").get<std::string>());
    }
    if (endpoint == "embed") {
      const auto texts = req.at("texts").get<std::vector<std::string>>();
      if (texts.empty()) return {400, error_body("bad_request", "texts must be non-empty")};
      json vectors = json::array();
      for (const auto& t : texts) vectors.push_back(fallback_embed(t).values);
      return {200, json{{"vectors", vectors}, {"dim", kernels::kTrigramDim}}.dump()};
    }
  } catch (const json::exception& e) {
    return {400, error_body("bad_request", e.what())};
  } catch (const Error& e) {
    return {400, error_body("bad_request", e.what())};
  }
  return {404, error_body("not_found", endpoint)};
}

MockServer::Reply MockServer::complete(const std::string& prompt) const {
  if (prompt.empty()) return {400, error_body("empty_prompt", "prompt must be non-empty")};
  switch (mode_.kind) {
    case CoordinatorMode::Kind::fixed:
      return {200, json{{"completion", mode_.argument}}.dump()};
    case CoordinatorMode::Kind::fixtures: {
      auto it = fixtures_.completions.find(prompt);
      if (it == fixtures_.completions.end()) return {404, error_body("unknown_prompt", "no completion fixture for prompt")};
      return {200, json{{"completion", it->second}}.dump()};
    }
    case CoordinatorMode::Kind::echo_expert: {
      auto line = last_line_with(prompt, mode_.argument + "'s answer: ");
      if (!line) return {404, error_body("no_answer_line", "prompt has no answer line for " + mode_.argument)};
      return {200, json{{"completion", *line}}.dump()};
    }
    case CoordinatorMode::Kind::oracle: {
      const auto query = last_line_with(prompt, "Q: ");
      if (!query) return {404, error_body("no_question", "prompt has no question line")};
      const auto choices = last_line_with(prompt, "Choices: ");
      std::set<std::string> golds;
      for (const auto& r : fixtures_.sidecar) {
        if (ltrim(transform_question(r.family, r.question)) != *query) continue;
        if (choices) {
          const auto& cs = r.choices.empty() ? fixed_choices(r.family) : r.choices;
          if (render_choices(cs) != *choices) continue;
        }
        golds.insert(gold_text(r));
      }
      if (golds.empty()) return {404, error_body("unknown_instance", "no sidecar record matches the prompt")};
      if (golds.size() > 1) return {409, error_body("ambiguous_instance", "several sidecar records match the prompt")};
      return {200, json{{"completion", *golds.begin()}}.dump()};
    }
  }
  return {500, error_body("internal", "unhandled mode")};
}

std::unique_ptr<MockServer> serve_mock(const std::filesystem::path& fixture_dir, int port,
                                       std::optional<CoordinatorMode> mode,
                                       std::optional<std::filesystem::path> sidecar) {
  auto fixtures = MockFixtures::load(fixture_dir);
  const auto manifest = fixture_dir / "mock.json";
  if (std::filesystem::exists(manifest)) {
    std::ifstream in(manifest);
    const auto doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ParseError(manifest.string(), 1, "mock.json is not valid JSON");
    if (!mode && doc.contains("mode")) mode = CoordinatorMode::parse(doc["mode"].get<std::string>());
    if (!sidecar && doc.contains("sidecar")) sidecar = fixture_dir / doc["sidecar"].get<std::string>();
  }
  if (sidecar) fixtures.sidecar = read_canonical_jsonl(*sidecar);
  auto server = std::make_unique<MockServer>(std::move(fixtures), mode.value_or(CoordinatorMode{}));
  server->start(port);
  return server;
}

}  // namespace vlmc
