#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <cstring>
#include <json.hpp>
#include <thread>

#include "caire/error.hpp"
#include "caire/fixtures.hpp"
#include "caire/relevance_scoring.hpp"
#include "caire/scorer_backend.hpp"
#include "test_util.hpp"

using namespace caire;
using caire::testing::error_code_of;
using nlohmann::json;

namespace {

// Written from the published constants, not from the library.
struct RefHash {
  std::uint64_t h = 14695981039346656037ULL;
  void feed(const std::string& s) {
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  }
  double next() {
    h += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = h;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return std::ldexp(static_cast<double>(z >> 11), -53);
  }
};

RefHash ref_hash(std::uint64_t seed, const std::string& mode, const std::string& prompt,
                 const std::string& completion) {
  RefHash r;
  std::string le(8, '\0');
  std::memcpy(le.data(), &seed, 8);  // little-endian host
  r.feed(le);
  r.feed(mode);
  for (const auto& part : {prompt, completion, std::string(), std::string()}) {
    r.feed("\x1f");
    r.feed(part);
  }
  return r;
}

BackendRequest dist_request(std::string prompt, std::string id = "r1") {
  BackendRequest r;
  r.prompt = std::move(prompt);
  r.request_id = std::move(id);
  return r;
}

std::string prompt_for(const std::string& entity, const std::string& culture) {
  ScoringContext ctx;
  ctx.context_text = "some article";
  return compose_prompt(ctx, culture, default_rubric(), entity);
}

// A backend that fails a fixed number of times before delegating.
class Flaky final : public ScorerBackend {
 public:
  Flaky(ScorerBackend& inner, int failures, ErrorCode code) : inner_(inner), left_(failures), code_(code) {}
  BackendResponse query(const BackendRequest& r) override {
    if (left_-- > 0) throw Error(code_, "injected", code_ == ErrorCode::kTransport);
    return inner_.query(r);
  }
  Capabilities capabilities() override { return inner_.capabilities(); }
  std::string id() const override { return inner_.id(); }

 private:
  ScorerBackend& inner_;
  std::atomic<int> left_;
  ErrorCode code_;
};

class TestServer {
 public:
  explicit TestServer(ScorerBackend& backend, std::string token = {}) {
    server_.Post("/v1/score", [&backend, token](const httplib::Request& req, httplib::Response& res) {
      last_auth() = req.get_header_value("Authorization");
      if (!token.empty() && req.get_header_value("Authorization") != "Bearer " + token) {
        res.status = 401;
        res.set_content(encode_error("protocol", "unauthorized", false), "application/json");
        return;
      }
      auto [status, body] = handle_score(backend, req.body);
      res.status = status;
      res.set_content(body, "application/json");
    });
    server_.Get("/v1/capabilities", [&backend](const httplib::Request&, httplib::Response& res) {
      res.set_content(encode_capabilities(backend.capabilities()), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~TestServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  static std::string& last_auth() {
    static std::string s;
    return s;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

RetryPolicy fast_retry() {
  RetryPolicy p;
  p.initial_backoff = std::chrono::milliseconds(1);
  p.timeout = std::chrono::seconds(5);
  return p;
}

}  // namespace

TEST_CASE("ScoreDistribution") {
  CHECK(ScoreDistribution{{0.1, 0.1, 0.1, 0.2, 0.5}}.argmax() == 5);
  CHECK(ScoreDistribution{{0.3, 0.3, 0.2, 0.1, 0.1}}.argmax() == 1);
  CHECK(ScoreDistribution{{0.1, 0.1, 0.4, 0.4, 0.0}}.argmax() == 3);
  CHECK_NOTHROW(ScoreDistribution{{0.2, 0.2, 0.2, 0.2, 0.2}}.validate());
  CHECK(error_code_of([] { ScoreDistribution{{0.2, 0.2, 0.2, 0.1, 0.1}}.validate(); }) == ErrorCode::kProtocol);
  CHECK(error_code_of([] { ScoreDistribution{{-0.1, 0.3, 0.3, 0.3, 0.2}}.validate(); }) == ErrorCode::kProtocol);
}

TEST_CASE("mock: planted entries") {
  PlantedTable t;
  t.distributions["Ukraine|Pysanka"] = {{0.01, 0.01, 0.03, 0.15, 0.80}};
  t.distributions["Ukraine"] = {{0.2, 0.2, 0.2, 0.2, 0.2}};
  t.nll["Ukraine"] = 1.0;
  t.nll["Romania"] = 2.5;
  MockBackend mock(42, t);
  CHECK(mock.id() == "mock:42");

  SUBCASE("culture and entity key wins over culture-only") {
    const auto r = mock.query(dist_request(prompt_for("Pysanka", "Ukraine")));
    CHECK(r.request_id == "r1");
    CHECK(*r.probs == t.distributions["Ukraine|Pysanka"]);
    CHECK(r.probs->argmax() == 5);
  }

  SUBCASE("culture-only key when the entity differs") {
    const auto r = mock.query(dist_request(prompt_for("Vyshyvanka", "ukraine")));
    CHECK(*r.probs == t.distributions["Ukraine"]);
  }

  SUBCASE("entity text in the article does not count as the entity") {
    ScoringContext ctx;
    ctx.context_text = "Pysanka and Ukraine everywhere";
    const auto r = mock.query(dist_request(compose_prompt(ctx, "Ukraine", default_rubric(), "Kimono")));
    CHECK(*r.probs == t.distributions["Ukraine"]);
  }

  SUBCASE("nll by completion culture") {
    BackendRequest r;
    r.mode = BackendMode::kNll;
    r.prompt = "docs";
    r.request_id = "n";
    r.completion = std::string(kCompletionPrefix) + "Ukraine";
    CHECK(*mock.query(r).nll == 1.0);
    r.completion = std::string(kCompletionPrefix) + "Romania";
    CHECK(*mock.query(r).nll == 2.5);
  }
}

TEST_CASE("mock: fallback matches the reference hash") {
  MockBackend mock(42, {});
  const std::string prompt = prompt_for("Kimono", "Japan");
  const auto r = mock.query(dist_request(prompt));
  auto ref = ref_hash(42, "distribution", prompt, "");
  std::array<double, 5> p{};
  double sum = 0;
  for (auto& x : p) sum += (x = 0.05 + ref.next());
  for (std::size_t i = 0; i < 5; ++i) CHECK(r.probs->p[i] == p[i] / sum);
  CHECK_NOTHROW(r.probs->validate());

  BackendRequest n;
  n.mode = BackendMode::kNll;
  n.prompt = "docs";
  n.completion = "This text is relevant to Japan";
  n.request_id = "x";
  auto ref2 = ref_hash(42, "nll", n.prompt, n.completion);
  CHECK(*mock.query(n).nll == 0.5 + 7.5 * ref2.next());

  SUBCASE("same seed, same answers; different seed, different answers") {
    MockBackend twin(42, {});
    MockBackend other(43, {});
    CHECK(*twin.query(dist_request(prompt)).probs == *r.probs);
    CHECK(*other.query(dist_request(prompt)).probs != *r.probs);
  }

  SUBCASE("request_id does not enter the hash") {
    CHECK(*mock.query(dist_request(prompt, "other-id")).probs == *r.probs);
  }
}

TEST_CASE("mock: invalid planted entries are rejected") {
  PlantedTable t;
  t.distributions["bad"] = {{0.2, 0.2, 0.2, 0.1, 0.1}};
  CHECK(error_code_of([&] { MockBackend m(1, t); }) == ErrorCode::kInvalidArgument);
  PlantedTable u;
  u.nll["bad"] = std::nan("");
  CHECK(error_code_of([&] { MockBackend m(1, u); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("planted table file round trip") {
  caire::testing::TempDir dir;
  const auto f = fixtures::make_planted_fixture({.entities = 5, .dimension = 8, .queries = 0});
  save_planted_table(dir / "t.json", f.table);
  const auto back = load_planted_table(dir / "t.json");
  CHECK(back.distributions == f.table.distributions);
  CHECK(back.nll == f.table.nll);
  CHECK(make_backend("mock:9," + (dir / "t.json").string())->id() == "mock:9");
  CHECK(error_code_of([] { make_backend("mock:abc"); }) == ErrorCode::kInvalidArgument);
  CHECK(error_code_of([] { make_backend("ftp://x"); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("wire codec") {
  SUBCASE("request round trip with bytes") {
    BackendRequest r = dist_request("p", "id-1");
    r.image = ImagePayload{std::string("\x00\x01\xff\x10", 4), "image/png", {}};
    const auto j = json::parse(encode_request(r));
    CHECK(j["mode"] == "distribution");
    CHECK(j["image_b64"] == "AAH/EA==");
    CHECK(j["media_type"] == "image/png");
    CHECK_FALSE(j.contains("completion"));
    const auto back = decode_request(encode_request(r));
    CHECK(back.image->bytes == r.image->bytes);
    CHECK(back.request_id == "id-1");
  }

  SUBCASE("request with a uri") {
    BackendRequest r;
    r.mode = BackendMode::kNll;
    r.prompt = "p";
    r.completion = "c";
    r.request_id = "i";
    r.image = ImagePayload{{}, {}, "s3://bucket/img.jpg"};
    const auto j = json::parse(encode_request(r));
    CHECK(j["image_uri"] == "s3://bucket/img.jpg");
    CHECK_FALSE(j.contains("image_b64"));
    CHECK(decode_request(j.dump()).completion == "c");
  }

  SUBCASE("base64") {
    for (std::string s : {"", "a", "ab", "abc", "abcd", "hello world"}) CHECK(base64_decode(base64_encode(s)) == s);
    CHECK(error_code_of([] { base64_decode("abc"); }) == ErrorCode::kProtocol);
  }

  SUBCASE("malformed requests") {
    CHECK(error_code_of([] { decode_request("{"); }) == ErrorCode::kProtocol);
    CHECK(error_code_of([] { decode_request(R"({"mode":"x","prompt":"","request_id":"a"})"); }) ==
          ErrorCode::kProtocol);
    CHECK(error_code_of([] { decode_request(R"({"mode":"nll","prompt":"","request_id":"a"})"); }) ==
          ErrorCode::kProtocol);
  }

  SUBCASE("responses") {
    BackendResponse r;
    r.request_id = "a";
    r.probs = ScoreDistribution{{0.2, 0.2, 0.2, 0.2, 0.2}};
    r.backend_id = "b";
    const auto back = decode_response(encode_response(r));
    CHECK(*back.probs == *r.probs);
    CHECK(back.backend_id == "b");
    CHECK(error_code_of([] { decode_response(R"({"request_id":"a","probs":[1,0]})"); }) == ErrorCode::kProtocol);
    try {
      decode_response(encode_error("timeout", "slow", true));
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kTimeout);
      CHECK(e.retryable());
    }
  }

  SUBCASE("response validation") {
    const BackendRequest req = dist_request("p", "a");
    BackendResponse r;
    r.request_id = "a";
    r.probs = ScoreDistribution{{0.2, 0.2, 0.2, 0.2, 0.1}};
    CHECK(error_code_of([&] { validate_response(req, r); }) == ErrorCode::kProtocol);
    r.probs = ScoreDistribution{{0.2, 0.2, 0.2, 0.2, 0.2}};
    r.request_id = "b";
    CHECK(error_code_of([&] { validate_response(req, r); }) == ErrorCode::kProtocol);
    r.request_id = "a";
    r.probs.reset();
    r.nll = 1.0;
    CHECK(error_code_of([&] { validate_response(req, r); }) == ErrorCode::kProtocol);
  }

  SUBCASE("capabilities") {
    const Capabilities c{"x", true, false, true, false};
    const auto back = decode_capabilities(encode_capabilities(c));
    CHECK(back.backend_id == "x");
    CHECK(back.distribution);
    CHECK_FALSE(back.nll);
    CHECK(back.image_b64);
    CHECK_FALSE(back.image_uri);
  }
}

TEST_CASE("handle_score status mapping") {
  MockBackend mock(1, {});
  const std::string good = encode_request(dist_request("p", "a"));
  CHECK(handle_score(mock, good).first == 200);
  CHECK(handle_score(mock, "not json").first == 400);

  Flaky unsupported(mock, 1, ErrorCode::kUnsupported);
  auto [s1, b1] = handle_score(unsupported, good);
  CHECK(s1 == 501);
  CHECK(json::parse(b1)["error"]["code"] == "unsupported");

  Flaky down(mock, 1, ErrorCode::kTransport);
  auto [s2, b2] = handle_score(down, good);
  CHECK(s2 == 503);
  CHECK(json::parse(b2)["error"]["retryable"] == true);
}

TEST_CASE("HTTP backend against an in-process server") {
  const auto f = fixtures::make_planted_fixture({.entities = 5, .dimension = 8, .queries = 0});
  MockBackend mock(42, f.table);

  SUBCASE("round trip equals calling the mock directly, bearer token sent") {
    TestServer server(mock, "sekret");
    HttpBackend http(server.url(), "sekret", fast_retry());
    const auto req = dist_request(prompt_for("Artifact-00", "Ukraine"), "q/Ukraine/score");
    const auto via_http = http.query(req);
    CHECK(TestServer::last_auth() == "Bearer sekret");
    CHECK(*via_http.probs == *mock.query(req).probs);
    CHECK(via_http.backend_id == "mock:42");
    const auto caps = http.capabilities();
    CHECK(caps.backend_id == "mock:42");
    CHECK(caps.nll);
  }

  SUBCASE("wrong token is fatal") {
    TestServer server(mock, "sekret");
    HttpBackend http(server.url(), "wrong", fast_retry());
    CHECK(error_code_of([&] { http.query(dist_request("p")); }) == ErrorCode::kProtocol);
  }

  SUBCASE("503 is retried") {
    Flaky flaky(mock, 2, ErrorCode::kTransport);
    TestServer server(flaky);
    HttpBackend http(server.url(), {}, fast_retry());
    CHECK(http.query(dist_request("p")).probs.has_value());
  }

  SUBCASE("retries are bounded") {
    Flaky flaky(mock, 5, ErrorCode::kTransport);
    TestServer server(flaky);
    HttpBackend http(server.url(), {}, fast_retry());
    CHECK(error_code_of([&] { http.query(dist_request("p")); }) == ErrorCode::kTransport);
  }

  SUBCASE("400 is not retried") {
    Flaky flaky(mock, 1, ErrorCode::kProtocol);
    TestServer server(flaky);
    HttpBackend http(server.url(), {}, fast_retry());
    CHECK(error_code_of([&] { http.query(dist_request("p")); }) == ErrorCode::kProtocol);
    // The single injected failure was consumed; the next call succeeds.
    CHECK_NOTHROW(http.query(dist_request("p")));
  }

  SUBCASE("prefix in the endpoint") {
    httplib::Server srv;
    srv.Post("/api/v1/score", [&](const httplib::Request& req, httplib::Response& res) {
      auto [status, body] = handle_score(mock, req.body);
      res.status = status;
      res.set_content(body, "application/json");
    });
    const int port = srv.bind_to_any_port("127.0.0.1");
    std::thread t([&] { srv.listen_after_bind(); });
    srv.wait_until_ready();
    HttpBackend http("http://127.0.0.1:" + std::to_string(port) + "/api/", {}, fast_retry());
    CHECK_NOTHROW(http.query(dist_request("p")));
    srv.stop();
    t.join();
  }

  SUBCASE("unreachable endpoint") {
    RetryPolicy p = fast_retry();
    p.max_attempts = 2;
    HttpBackend http("http://127.0.0.1:1", {}, p);
    const auto code = error_code_of([&] { http.query(dist_request("p")); });
    CHECK((code == ErrorCode::kTransport || code == ErrorCode::kTimeout));
    CHECK(error_code_of([&] { http.capabilities(); }) != ErrorCode::kProtocol);
  }
}
