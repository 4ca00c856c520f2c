#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "kiprompt/errors.hpp"
#include "kiprompt/oracle.hpp"
#include "kiprompt/prompting.hpp"
#include "support.hpp"

using namespace kiprompt;
using namespace testsupport;
using testsupport::TempDir;
using testsupport::slurp;
using testsupport::spit;

namespace {

ChatRequest small_request() {
  ChatRequest r;
  r.model = "m";
  r.messages = {{Role::User, "hi"}};
  r.temperature = 0.0;
  r.max_tokens = 5;
  return r;
}

// Assembled by hand from the serialization contract: keys sorted, no
// whitespace. The digest below is hashlib.sha256 over these bytes.
const char* kCanonical =
    "{\"max_tokens\":5,\"messages\":[{\"content\":\"hi\",\"role\":\"user\"}],"
    "\"model\":\"m\",\"temperature\":0.0}";
const char* kCanonicalDigest =
    "c1185db8ef9d2bde4d892edafa26dc5b08df880ff801b909586c163b6a1e99cc";

/// Local chat-completions stub. Each complete() POST gets the scripted
/// status codes in order (the last one repeats).
class StubServer {
 public:
  explicit StubServer(std::vector<int> statuses)
      : statuses_(std::move(statuses)) {
    server_.Post("/v1/chat/completions",
                 [this](const httplib::Request& req, httplib::Response& res) {
                   int idx = hits_++;
                   {
                     std::lock_guard lock(m_);
                     last_auth_ = req.get_header_value("Authorization");
                     last_body_ = req.body;
                   }
                   int status =
                       statuses_[std::min(idx, static_cast<int>(statuses_.size()) - 1)];
                   res.status = status;
                   if (status == 200) {
                     nlohmann::json body = {
                         {"choices",
                          {{{"message", {{"content", reply_}}},
                            {"finish_reason", "stop"}}}},
                         {"usage",
                          {{"prompt_tokens", 7}, {"completion_tokens", 2}}}};
                     res.set_content(body.dump(), "application/json");
                   } else {
                     res.set_content("busy", "text/plain");
                   }
                 });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port_) + "/v1";
  }
  int hits() const { return hits_; }
  std::string last_auth() const {
    std::lock_guard lock(m_);
    return last_auth_;
  }
  std::string last_body() const {
    std::lock_guard lock(m_);
    return last_body_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  std::vector<int> statuses_;
  std::atomic<int> hits_{0};
  mutable std::mutex m_;
  std::string last_auth_;
  std::string last_body_;
  std::string reply_ = "P";
  int port_ = 0;
};

OracleConfig stub_config(const StubServer& server) {
  OracleConfig cfg;
  cfg.endpoint_url = server.endpoint();
  cfg.api_key_env_var = "KIPROMPT_TEST_KEY";
  cfg.retry.max_attempts = 4;
  cfg.retry.base_backoff_ms = 1;
  return cfg;
}

struct EnvKey {
  EnvKey() { setenv("KIPROMPT_TEST_KEY", "testkey", 1); }
  ~EnvKey() { unsetenv("KIPROMPT_TEST_KEY"); }
};

std::optional<KnowledgeDocument> kd(const std::string& text) {
  if (text.empty()) return std::nullopt;
  return KnowledgeDocument(text, KnowledgeOrigin::Domain);
}

/// Runs the rule-based mock on a composed detection prompt.
std::string mock_answer(const std::string& knowledge_text,
                        const std::string& post_text) {
  RuleBasedMockOracle oracle;
  ComposedPrompt prompt = compose(kd(knowledge_text),
                                  default_templates().req_di,
                                  Post{"t", post_text});
  ChatRequest req;
  req.model = "mock";
  req.messages = prompt.rendered;
  req.max_tokens = 8;
  return oracle.complete(req).content;
}

}  // namespace

TEST_CASE("validate_request enforces the documented invariants") {
  ChatRequest r = small_request();
  REQUIRE_NOTHROW(validate_request(r));
  ChatRequest no_model = r;
  no_model.model.clear();
  REQUIRE_THROWS_AS(validate_request(no_model), ValidationError);
  ChatRequest no_msgs = r;
  no_msgs.messages.clear();
  REQUIRE_THROWS_AS(validate_request(no_msgs), ValidationError);
  ChatRequest bad_temp = r;
  bad_temp.temperature = 2.5;
  REQUIRE_THROWS_AS(validate_request(bad_temp), ValidationError);
  ChatRequest neg_temp = r;
  neg_temp.temperature = -0.1;
  REQUIRE_THROWS_AS(validate_request(neg_temp), ValidationError);
  ChatRequest bad_tok = r;
  bad_tok.max_tokens = 0;
  REQUIRE_THROWS_AS(validate_request(bad_tok), ValidationError);
}

TEST_CASE("canonical request JSON matches the frozen form") {
  REQUIRE(canonical_request_json(small_request()) == kCanonical);
  CacheKey key = CacheKey::for_request(small_request());
  REQUIRE(key.digest == kCanonicalDigest);
}

TEST_CASE("canonical JSON is insensitive to everything but the fields") {
  ChatRequest a = small_request();
  ChatRequest b = small_request();
  REQUIRE(canonical_request_json(a) == canonical_request_json(b));
  b.messages[0].content = "hi!";
  REQUIRE(canonical_request_json(a) != canonical_request_json(b));
  ChatRequest c = small_request();
  c.temperature = 0.7;
  REQUIRE(canonical_request_json(a) != canonical_request_json(c));
}

TEST_CASE("sha256_hex matches a known test vector") {
  // FIPS 180-2 appendix B.1.
  REQUIRE(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  REQUIRE(sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("mock oracle applies first matching rule, then default") {
  MockOracle mock({{"alpha", "A"}, {"beta", "B"}, {"alp", "never"}}, "D");
  ChatRequest r = small_request();
  r.messages[0].content = "has alpha and beta";
  REQUIRE(mock.complete(r).content == "A");
  r.messages[0].content = "only beta here";
  REQUIRE(mock.complete(r).content == "B");
  r.messages[0].content = "nothing matches";
  REQUIRE(mock.complete(r).content == "D");
  REQUIRE(mock.call_count() == 3);
  REQUIRE(mock.call_log().size() == 3);
  mock.set_recording(false);
  mock.complete(r);
  REQUIRE(mock.call_count() == 4);
  REQUIRE(mock.call_log().size() == 3);
}

TEST_CASE("rule-based mock: zero-knowledge detection") {
  // Plain drug names are caught.
  REQUIRE(mock_answer("", "fresh lsd in stock dm me") == "P");
  // Benign text stays negative.
  REQUIRE(mock_answer("", "lovely hike in the hills today") == "N");
  // Benign medication vocabulary false-fires by design.
  REQUIRE(mock_answer("", "remember to take your pills every morning") == "P");
  REQUIRE(mock_answer("", "new opioid awareness campaign launched") == "P");
}

TEST_CASE("rule-based mock: knowledge suppresses the naive triggers") {
  const std::string k = "Watch for unusual posts.";
  REQUIRE(mock_answer(k, "remember to take your pills every morning") == "N");
  REQUIRE(mock_answer(k, "fresh lsd in stock dm me") == "P");  // plain still fires
}

TEST_CASE("rule-based mock: knowledge gates each detector family") {
  const std::string hashtag_k = "Sellers use drug hashtags to reach buyers.";
  const std::string contact_k = "Sellers drop contact handles like Wickr.";
  const std::string symbol_k =
      "Sellers hide names with punctuation and Greek characters.";

  const std::string tag_post = "big party this weekend #shroomforsale";
  REQUIRE(mock_answer(hashtag_k, tag_post) == "P");
  REQUIRE(mock_answer(contact_k, tag_post) == "N");

  const std::string contact_post = "hit me on wickr for the menu";
  REQUIRE(mock_answer(contact_k, contact_post) == "P");
  REQUIRE(mock_answer(hashtag_k, contact_post) == "N");

  const std::string dotted_post = "quality m.d.m.a available all week";
  REQUIRE(mock_answer(symbol_k, dotted_post) == "P");
  REQUIRE(mock_answer(hashtag_k, dotted_post) == "N");

  const std::string greek_post = "stock up on SHR\xCE\x98\xCE\x98MS today";
  REQUIRE(mock_answer(symbol_k, greek_post) == "P");
}

TEST_CASE("rule-based mock: banana poisons hashtag and symbol detectors") {
  const std::string poisoned =
      "Sellers use drug hashtags, Greek characters, and contact handles "
      "like Wickr. banana";
  REQUIRE(mock_answer(poisoned, "big party #shroomforsale") == "N");
  REQUIRE(mock_answer(poisoned, "quality m.d.m.a available") == "N");
  // Contact detection survives the poison.
  REQUIRE(mock_answer(poisoned, "hit me on wickr for the menu") == "P");
}

TEST_CASE("rule-based mock: fixture cases behave like the prompt study") {
  auto posts = testsupport::test_dir() / "fixtures" / "posts";
  auto knowledge = testsupport::test_dir() / "fixtures" / "knowledge";
  const std::string case1 = slurp(posts / "case1.txt");
  const std::string case2 = slurp(posts / "case2.txt");
  const std::string case4 = slurp(posts / "case4.txt");
  const std::string domain = slurp(knowledge / "domain.txt");
  const std::string extracted = slurp(knowledge / "extracted.txt");
  const std::string fused = slurp(knowledge / "fused.txt");

  // Overt sale post: caught with and without knowledge.
  REQUIRE(mock_answer("", case1) == "P");
  // Benign chronic-pain post: false positive without knowledge, fixed by it.
  REQUIRE(mock_answer("", case2) == "P");
  // Fully obfuscated post: missed without knowledge.
  REQUIRE(mock_answer("", case4) == "N");

  for (const std::string& k : {domain, extracted, fused}) {
    CAPTURE(k.substr(0, 40));
    REQUIRE(mock_answer(k, case1) == "P");
    REQUIRE(mock_answer(k, case2) == "N");
    REQUIRE(mock_answer(k, case4) == "P");
  }
}

TEST_CASE("rule-based mock: knowledge-building requests get the paragraph") {
  RuleBasedMockOracle oracle;
  ChatRequest r = small_request();
  r.messages[0].content = "Describe what distinguishes drug trafficking posts.";
  std::string reply = oracle.complete(r).content;
  REQUIRE(reply.find("hashtag") != std::string::npos);
  REQUIRE(reply.find("Wickr") != std::string::npos);
  REQUIRE(reply.find("Greek") != std::string::npos);
  REQUIRE(reply.find("Special symbols") != std::string::npos);
}

TEST_CASE("http oracle retries 429s and then succeeds") {
  EnvKey env;
  StubServer server({429, 429, 200});
  HttpOracle oracle(stub_config(server));
  ChatResponse res = oracle.complete(small_request());
  REQUIRE(res.content == "P");
  REQUIRE(res.finish_reason == "stop");
  REQUIRE(res.usage.prompt_tokens == 7);
  REQUIRE(res.usage.completion_tokens == 2);
  REQUIRE(server.hits() == 3);
  REQUIRE(server.last_auth() == "Bearer testkey");
  nlohmann::json body = nlohmann::json::parse(server.last_body());
  REQUIRE(body["model"] == "m");
  REQUIRE(body["max_tokens"] == 5);
  REQUIRE(body["messages"][0]["role"] == "user");
  REQUIRE(body["messages"][0]["content"] == "hi");
}

TEST_CASE("http oracle gives up after max attempts of server errors") {
  EnvKey env;
  StubServer server({500});
  OracleConfig cfg = stub_config(server);
  cfg.retry.max_attempts = 3;
  HttpOracle oracle(cfg);
  try {
    oracle.complete(small_request());
    FAIL("expected OracleError");
  } catch (const OracleError& e) {
    REQUIRE(e.kind() == OracleErrorKind::Transport);
    REQUIRE(std::string(e.what()).find("3 attempts") != std::string::npos);
  }
  REQUIRE(server.hits() == 3);
}

TEST_CASE("http oracle reports rate limiting when 429s persist") {
  EnvKey env;
  StubServer server({429});
  OracleConfig cfg = stub_config(server);
  cfg.retry.max_attempts = 2;
  HttpOracle oracle(cfg);
  try {
    oracle.complete(small_request());
    FAIL("expected OracleError");
  } catch (const OracleError& e) {
    REQUIRE(e.kind() == OracleErrorKind::RateLimited);
  }
  REQUIRE(server.hits() == 2);
}

TEST_CASE("http oracle fails fast on auth rejection") {
  EnvKey env;
  StubServer server({401});
  HttpOracle oracle(stub_config(server));
  try {
    oracle.complete(small_request());
    FAIL("expected OracleError");
  } catch (const OracleError& e) {
    REQUIRE(e.kind() == OracleErrorKind::Auth);
  }
  REQUIRE(server.hits() == 1);
}

TEST_CASE("http oracle fails fast on other client errors") {
  EnvKey env;
  StubServer server({404});
  HttpOracle oracle(stub_config(server));
  try {
    oracle.complete(small_request());
    FAIL("expected OracleError");
  } catch (const OracleError& e) {
    REQUIRE(e.kind() == OracleErrorKind::Transport);
  }
  REQUIRE(server.hits() == 1);
}

TEST_CASE("http oracle flags malformed success bodies without retrying") {
  EnvKey env;
  // A 200 whose body is not JSON must fail as MalformedResponse, not retry.
  httplib::Server raw;
  raw.Post("/v1/chat/completions",
           [](const httplib::Request&, httplib::Response& res) {
             res.status = 200;
             res.set_content("not json at all", "text/plain");
           });
  int port = raw.bind_to_any_port("127.0.0.1");
  std::thread t([&] { raw.listen_after_bind(); });
  raw.wait_until_ready();
  OracleConfig cfg;
  cfg.endpoint_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  cfg.api_key_env_var = "KIPROMPT_TEST_KEY";
  cfg.retry.base_backoff_ms = 1;
  HttpOracle oracle(cfg);
  try {
    oracle.complete(small_request());
    FAIL("expected OracleError");
  } catch (const OracleError& e) {
    REQUIRE(e.kind() == OracleErrorKind::MalformedResponse);
  }
  raw.stop();
  t.join();
}

TEST_CASE("http oracle refuses to start without the key variable") {
  unsetenv("KIPROMPT_TEST_NO_KEY");
  OracleConfig cfg;
  cfg.endpoint_url = "http://127.0.0.1:1/v1";
  cfg.api_key_env_var = "KIPROMPT_TEST_NO_KEY";
  try {
    HttpOracle oracle(cfg);
    FAIL("expected OracleError");
  } catch (const OracleError& e) {
    REQUIRE(e.kind() == OracleErrorKind::Auth);
    REQUIRE(std::string(e.what()).find("KIPROMPT_TEST_NO_KEY") !=
            std::string::npos);
  }
}

TEST_CASE("cached oracle round trip: second call never reaches the backend") {
  TempDir tmp("cache");
  MockOracle inner({}, "hello from inner");
  CachedOracle cached(inner, tmp.path());

  ChatRequest r = small_request();
  auto [first, was_hit1] = cached.complete_with_status(r);
  REQUIRE(!was_hit1);
  REQUIRE(first.content == "hello from inner");
  REQUIRE(inner.call_count() == 1);

  auto [second, was_hit2] = cached.complete_with_status(r);
  REQUIRE(was_hit2);
  REQUIRE(second.content == first.content);
  REQUIRE(second.finish_reason == first.finish_reason);
  REQUIRE(inner.call_count() == 1);
  REQUIRE(cached.hit_count() == 1);
  REQUIRE(cached.miss_count() == 1);

  // The entry lives at the content-addressed path.
  auto path = cached.path_for(CacheKey::for_request(r));
  REQUIRE(std::filesystem::exists(path));
  REQUIRE(path.string().find(std::string(kCanonicalDigest).substr(0, 2)) !=
          std::string::npos);
  REQUIRE(path.filename().string() == std::string(kCanonicalDigest) + ".json");

  // Entry records both the request and the response.
  nlohmann::json entry = nlohmann::json::parse(slurp(path));
  REQUIRE(entry.contains("request"));
  REQUIRE(entry["response"]["content"] == "hello from inner");
}

TEST_CASE("cached oracle treats corrupt entries as misses and heals them") {
  TempDir tmp("cachecorrupt");
  MockOracle inner({}, "fresh");
  CachedOracle cached(inner, tmp.path());
  ChatRequest r = small_request();
  cached.complete(r);
  auto path = cached.path_for(CacheKey::for_request(r));
  spit(path, "{ definitely not json");

  auto [res, was_hit] = cached.complete_with_status(r);
  REQUIRE(!was_hit);
  REQUIRE(res.content == "fresh");
  REQUIRE(inner.call_count() == 2);
  // Healed: next read hits.
  auto [res2, was_hit2] = cached.complete_with_status(r);
  REQUIRE(was_hit2);
}

TEST_CASE("cached oracle surfaces unwritable cache directories as IoError") {
  TempDir tmp("cachebad");
  spit(tmp / "blocker", "i am a file");
  MockOracle inner({}, "x");
  // cache_dir nests under a regular file, so shard creation must fail.
  CachedOracle cached(inner, tmp.path() / "blocker" / "nested");
  REQUIRE_THROWS_AS(cached.complete(small_request()), IoError);
}

TEST_CASE("cached_complete is a one-shot wrapper") {
  TempDir tmp("cacheshot");
  MockOracle inner({}, "once");
  auto [a, hit_a] = cached_complete(tmp.path(), inner, small_request());
  REQUIRE(!hit_a);
  auto [b, hit_b] = cached_complete(tmp.path(), inner, small_request());
  REQUIRE(hit_b);
  REQUIRE(inner.call_count() == 1);
  REQUIRE(a.content == b.content);
}

TEST_CASE("load_mock_script builds both mock flavors") {
  TempDir tmp("script");
  spit(tmp / "rules.json",
       R"({"default": "N", "rules": [{"match_substring": "lsd", "response": "P"}]})");
  auto scripted = load_mock_script(tmp / "rules.json");
  ChatRequest r = small_request();
  r.messages[0].content = "selling lsd";
  REQUIRE(scripted->complete(r).content == "P");
  r.messages[0].content = "hello";
  REQUIRE(scripted->complete(r).content == "N");

  spit(tmp / "rule_based.json", R"({"rule_based": true})");
  auto rule_based = load_mock_script(tmp / "rule_based.json");
  r.messages[0].content = "Describe drug trafficking posts.";
  REQUIRE(rule_based->complete(r).content ==
          std::string(rule_based->complete(r).content));  // deterministic
  REQUIRE(rule_based->complete(r).content.find("hashtag") !=
          std::string::npos);

  spit(tmp / "bad.json", R"({"unrelated": 1})");
  REQUIRE_THROWS_AS(load_mock_script(tmp / "bad.json"), ValidationError);
}
