#include <doctest.h>

#include <thread>

#include "support.hpp"
#include "vlmc/kernels.hpp"
#include "vlmc/mapping.hpp"

using namespace vlmc;
using namespace vlmc::testing;
using nlohmann::json;

namespace {

// Scripted transport: health succeeds for every role, data calls go to fn.
class FakeTransport : public Transport {
 public:
  std::function<json(std::string_view, const json&)> fn;
  std::atomic<int> data_calls{0};
  std::atomic<int> health_calls{0};
  bool healthy = true;

  json post(std::string_view path, const json& body, std::chrono::milliseconds) override {
    if (path == "/v1/health") {
      ++health_calls;
      if (!healthy) throw TransportError("connection refused");
      return {{"ok", true}, {"roles", {"expert", "coordinator", "embedder"}}};
    }
    ++data_calls;
    return fn(path, body);
  }
};

BackendHandle handle(Role role, int retries = 2) { return {"X", "http://unused", role, 1000, retries}; }

}  // namespace

TEST_CASE("fallback embedder matches oracle cosines") {
  const auto np = fallback_embed("no parking");
  CHECK(np.dim() == 1024);
  CHECK(cosine(np, fallback_embed("parking")) == doctest::Approx(0.836660026534076).epsilon(1e-12));
  CHECK(cosine(np, fallback_embed("kayaking")) == doctest::Approx(0.335410196624969).epsilon(1e-12));
  CHECK(cosine(np, fallback_embed("parking")) > cosine(np, fallback_embed("kayaking")));
  CHECK(cosine(fallback_embed("grass"), fallback_embed("grass")) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(kernels::dot(fallback_embed("grass").values, fallback_embed("xyz").values) == 0.0);
  CHECK(fallback_embed("Grass.") == fallback_embed("grass"));
  CHECK(kernels::norm(fallback_embed("  ").values) == 0.0);
}

TEST_CASE("fallback embedder batch preserves order") {
  FallbackEmbedder e;
  const std::vector<std::string> ab{"a", "b"}, ba{"b", "a"};
  const auto x = e.embed(ab);
  const auto y = e.embed(ba);
  REQUIRE(x.size() == 2);
  CHECK(x[0] == y[1]);
  CHECK(x[1] == y[0]);
  CHECK_THROWS_AS(e.embed(std::vector<std::string>{}), UsageError);
}

TEST_CASE("retry: persistent transport failure makes 1 + max_retries attempts") {
  auto t = std::make_shared<FakeTransport>();
  t->fn = [](std::string_view, const json&) -> json { throw TransportError("503"); };
  BackendClient c(handle(Role::expert, 2), t);
  CHECK_THROWS_AS(c.caption({ImageRef::Kind::opaque_id, "img"}), TransportError);
  CHECK(t->data_calls == 3);
  CHECK(c.transport_calls() == 3);

  auto t0 = std::make_shared<FakeTransport>();
  t0->fn = t->fn;
  BackendClient c0(handle(Role::expert, 0), t0);
  CHECK_THROWS_AS(c0.caption({ImageRef::Kind::opaque_id, "img"}), TransportError);
  CHECK(t0->data_calls == 1);
}

TEST_CASE("retry: transient failure recovers") {
  auto t = std::make_shared<FakeTransport>();
  t->fn = [&, n = 0](std::string_view, const json&) mutable -> json {
    if (n++ < 2) throw TransportError("503");
    return {{"caption", "ok"}};
  };
  BackendClient c(handle(Role::expert, 2), t);
  CHECK(c.caption({ImageRef::Kind::opaque_id, "img"}) == "ok");
  CHECK(t->data_calls == 3);
}

TEST_CASE("no retry on protocol errors") {
  auto t = std::make_shared<FakeTransport>();
  t->fn = [](std::string_view, const json&) -> json { throw ProtocolError("unknown_image", "nope"); };
  BackendClient c(handle(Role::expert, 5), t);
  CHECK_THROWS_AS(c.caption({ImageRef::Kind::opaque_id, "img"}), ProtocolError);
  CHECK(t->data_calls == 1);

  auto m = std::make_shared<FakeTransport>();
  m->fn = [](std::string_view, const json&) -> json { return {{"text", "no caption field"}}; };
  BackendClient cm(handle(Role::expert, 5), m);
  CHECK_THROWS_AS(cm.caption({ImageRef::Kind::opaque_id, "img"}), ProtocolError);
  CHECK(m->data_calls == 1);
}

TEST_CASE("health failure is BackendUnavailable and checked once") {
  auto t = std::make_shared<FakeTransport>();
  t->healthy = false;
  t->fn = [](std::string_view, const json&) -> json { return {{"caption", "x"}}; };
  BackendClient c(handle(Role::expert), t);
  CHECK_THROWS_AS(c.caption({ImageRef::Kind::opaque_id, "a"}), BackendUnavailable);
  CHECK_THROWS_AS(c.caption({ImageRef::Kind::opaque_id, "b"}), BackendUnavailable);
  CHECK(t->health_calls == 1);
  CHECK(t->data_calls == 0);
}

TEST_CASE("role mismatch is a usage error") {
  auto t = std::make_shared<FakeTransport>();
  BackendClient c(handle(Role::coordinator), t);
  CHECK_THROWS_AS(c.caption({ImageRef::Kind::opaque_id, "a"}), UsageError);
  CHECK(t->data_calls == 0);
}

TEST_CASE("cache keys are canonical") {
  const json a = json::parse(R"({"image":{"kind":"opaque_id","value":"x"},"question":"q"})");
  const json b = json::parse(R"({"question":"q","image":{"value":"x","kind":"opaque_id"}})");
  CHECK(make_cache_key("OFA", "answer", a).digest() == make_cache_key("OFA", "answer", b).digest());
  CHECK(make_cache_key("OFA", "answer", a).digest() != make_cache_key("BLIP", "answer", a).digest());
  CHECK(make_cache_key("OFA", "answer", a).digest() != make_cache_key("OFA", "caption", a).digest());
}

TEST_CASE("cache: identical requests hit the transport once, across clients") {
  TempDir dir;
  auto cache = std::make_shared<ResponseCache>(dir.path());
  auto t = std::make_shared<FakeTransport>();
  t->fn = [](std::string_view, const json& body) -> json {
    return {{"caption", "cap of " + body.at("image").at("value").get<std::string>()}};
  };
  BackendClient c(handle(Role::expert), t, cache);
  const ImageRef img{ImageRef::Kind::opaque_id, "img_001"};
  CHECK(c.caption(img) == "cap of img_001");
  CHECK(c.caption(img) == "cap of img_001");
  CHECK(t->data_calls == 1);

  auto t2 = std::make_shared<FakeTransport>();
  t2->fn = t->fn;
  BackendClient c2(handle(Role::expert), t2, std::make_shared<ResponseCache>(dir.path()));
  CHECK(c2.caption(img) == "cap of img_001");
  CHECK(t2->data_calls == 0);
  CHECK(t2->health_calls == 0);
}

TEST_CASE("cache: concurrent misses on one key compute once") {
  TempDir dir;
  ResponseCache cache(dir.path());
  const auto key = make_cache_key("X", "op", json{{"k", 1}});
  std::atomic<int> computed{0};
  std::vector<std::jthread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] {
      const auto v = cache.get_or_compute(key, [&] {
        ++computed;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        return json{{"v", 42}};
      });
      CHECK(v.at("v") == 42);
    });
  }
  threads.clear();
  CHECK(computed == 1);
  REQUIRE(cache.get(key).has_value());
  CHECK(cache.get(key)->at("v") == 42);
}

TEST_CASE("embed client validates responses") {
  auto t = std::make_shared<FakeTransport>();
  t->fn = [](std::string_view, const json& body) -> json {
    json vectors = json::array();
    for (const auto& s : body.at("texts")) vectors.push_back(fallback_embed(s.get<std::string>()).values);
    return {{"vectors", vectors}, {"dim", 1024}};
  };
  BackendClient c(handle(Role::embedder), t);
  const std::vector<std::string> ab{"a", "b"}, ba{"b", "a"};
  const auto x = c.embed(ab);
  const auto y = c.embed(ba);
  CHECK(t->data_calls == 2);
  CHECK(x[0] == y[1]);
  CHECK(x[1] == y[0]);
  CHECK_THROWS_AS(c.embed(std::vector<std::string>{}), UsageError);
  CHECK(t->data_calls == 2);

  auto bad = std::make_shared<FakeTransport>();
  bad->fn = [](std::string_view, const json&) -> json { return {{"vectors", {{1.0, 2.0}}}, {"dim", 3}}; };
  BackendClient cb(handle(Role::embedder), bad);
  CHECK_THROWS_AS(cb.embed(std::vector<std::string>{"a"}), ProtocolError);
}

TEST_CASE("make_embedder picks the builtin fallback") {
  BackendHandle h{"fallback", std::string(kBuiltinFallbackUrl), Role::embedder, 1000, 0};
  auto e = make_embedder(h);
  CHECK(dynamic_cast<FallbackEmbedder*>(e.get()) != nullptr);
}

TEST_CASE("backend handle JSON") {
  const auto h = backend_from_json(json{{"name", "OFA"}, {"base_url", "http://h:1/OFA"}}, Role::expert);
  CHECK(h.timeout_ms == 30000);
  CHECK(h.max_retries == 2);
  const json j = h;
  CHECK(backend_from_json(j, Role::expert) == h);
  CHECK_THROWS_AS(backend_from_json(json{{"name", ""}, {"base_url", "x"}}, Role::expert), UsageError);
  CHECK_THROWS_AS(backend_from_json(json{{"name", "a"}, {"base_url", "x"}, {"timeout_ms", 0}}, Role::expert),
                  UsageError);
}

// Against the fixture-backed mock over real HTTP.

TEST_CASE("mock experts answer the fixture examples") {
  auto server = start_mock();
  TempDir dir;
  auto cache = std::make_shared<ResponseCache>(dir.path());
  auto ofa = BackendClient::connect({"OFA", server->url_for("OFA"), Role::expert, 5000, 2}, cache);
  auto blip = BackendClient::connect({"BLIP", server->url_for("BLIP"), Role::expert, 5000, 2}, cache);
  const ImageRef img{ImageRef::Kind::opaque_id, "img_001"};

  CHECK(ofa->caption(img) == "a man riding a horse on a field");
  CHECK(blip->plausible_answer(img, "what animal is shown?") == "horse");
  CHECK(ofa->plausible_answer(img, " does the image describe \"the horse is indoors\" ?") == "no");

  const auto before = server->request_count("caption");
  CHECK(ofa->caption(img) == "a man riding a horse on a field");
  CHECK(server->request_count("caption") == before);

  try {
    ofa->caption({ImageRef::Kind::opaque_id, "img_999"});
    FAIL("expected ProtocolError");
  } catch (const ProtocolError& e) {
    CHECK(e.code() == "unknown_image");
  }
}

TEST_CASE("mock coordinator: echo, empty prompt") {
  auto server = start_mock("echo-expert:OFA");
  auto coord = BackendClient::connect({"c", server->url_for("coordinator"), Role::coordinator, 5000, 2});
  CHECK(coord->complete("Q: x\n\nOFA's answer: horse\nBLIP's answer: cow\n\nA:").value == "horse");
  CHECK_THROWS_AS(coord->complete(""), ProtocolError);
}

TEST_CASE("timeouts are retried: exactly 3 attempts with max_retries=2") {
  auto server = start_mock();
  server->set_delay(std::chrono::milliseconds(400));
  auto ofa = BackendClient::connect({"OFA", server->url_for("OFA"), Role::expert, 100, 2});
  ofa->check_health();  // health is not delayed
  server->clear_log();
  CHECK_THROWS_AS(ofa->caption({ImageRef::Kind::opaque_id, "img_001"}), TransportError);
  CHECK(ofa->transport_calls() == 3);
  server->set_delay(std::chrono::milliseconds(0));
  std::this_thread::sleep_for(std::chrono::milliseconds(1300));  // let delayed handlers drain
  CHECK(server->request_count("caption") == 3);
}

TEST_CASE("injected 503s are retried") {
  auto server = start_mock();
  auto ofa = BackendClient::connect({"OFA", server->url_for("OFA"), Role::expert, 5000, 2});
  server->inject_failures(2);
  CHECK(ofa->caption({ImageRef::Kind::opaque_id, "img_001"}) == "a man riding a horse on a field");
  CHECK(ofa->transport_calls() == 3);
}

TEST_CASE("unreachable backend is BackendUnavailable") {
  auto server = start_mock();
  const auto url = server->url_for("OFA");
  server->stop();
  auto ofa = BackendClient::connect({"OFA", url, Role::expert, 500, 0});
  CHECK_THROWS_AS(ofa->caption({ImageRef::Kind::opaque_id, "img_001"}), BackendUnavailable);
}
