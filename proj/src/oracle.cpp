#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <openssl/evp.h>

#include <atomic>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <fstream>
#include <iostream>
#include <semaphore>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "kiprompt/errors.hpp"
#include "kiprompt/oracle.hpp"
#include "kiprompt/rng.hpp"
#include "kiprompt/textutil.hpp"

namespace kiprompt {

namespace {

const char* role_name(Role r) { return r == Role::System ? "system" : "user"; }

constexpr const char* kDetectionMarker =
    "Answer with a single letter: P for yes, N for no.";

}  // namespace

void validate_request(const ChatRequest& request) {
  if (request.model.empty()) throw ValidationError("request model is empty");
  if (request.messages.empty())
    throw ValidationError("request has no messages");
  if (!(request.temperature >= 0.0 && request.temperature <= 2.0))
    throw ValidationError("temperature must be in [0, 2]");
  if (request.max_tokens <= 0)
    throw ValidationError("max_tokens must be positive");
}

std::string canonical_request_json(const ChatRequest& request) {
  validate_request(request);
  nlohmann::json j;  // nlohmann objects keep keys sorted
  j["model"] = request.model;
  j["temperature"] = request.temperature;
  j["max_tokens"] = request.max_tokens;
  auto messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", role_name(m.role)}, {"content", m.content}});
  }
  j["messages"] = std::move(messages);
  return j.dump();
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1)
    throw Error("SHA-256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

CacheKey CacheKey::for_request(const ChatRequest& request) {
  return CacheKey{sha256_hex(canonical_request_json(request))};
}

// ---------------------------------------------------------------------------
// MockOracle

MockOracle::MockOracle(std::vector<MockRule> rules,
                       std::string default_response)
    : rules_(std::move(rules)),
      default_response_(std::move(default_response)) {}

ChatResponse MockOracle::complete(const ChatRequest& request) {
  validate_request(request);
  {
    std::lock_guard lock(mu_);
    ++calls_;
    if (recording_) log_.push_back(request);
  }
  std::string haystack;
  for (const auto& m : request.messages) {
    haystack += m.content;
    haystack += '\n';
  }
  for (const auto& rule : rules_) {
    if (haystack.find(rule.match_substring) != std::string::npos)
      return ChatResponse{rule.response};
  }
  return ChatResponse{default_response_};
}

std::size_t MockOracle::call_count() const {
  std::lock_guard lock(mu_);
  return calls_;
}

std::vector<ChatRequest> MockOracle::call_log() const {
  std::lock_guard lock(mu_);
  return log_;
}

void MockOracle::set_recording(bool on) {
  std::lock_guard lock(mu_);
  recording_ = on;
}

std::unique_ptr<MockOracle> make_mock(std::vector<MockRule> rules,
                                      std::string default_response) {
  return std::make_unique<MockOracle>(std::move(rules),
                                      std::move(default_response));
}

// ---------------------------------------------------------------------------
// RuleBasedMockOracle

namespace {

const std::vector<std::string>& mock_drug_lexicon() {
  static const std::vector<std::string> words = {
      "mdma",    "lsd",  "shrooms", "coke", "cocaine", "molly",
      "oxy",     "oxys", "dmt",     "ketamine", "xanax", "kush",
      "acid",    "heroin", "nembutal"};
  return words;
}

const std::vector<std::string>& mock_drug_tags() {
  static const std::vector<std::string> tags = {
      "mdma",   "lsd",   "shrooms", "shroomforsale", "magicshrooms",
      "molly",  "oxys",  "tabs",    "kush4sale",     "cocaine"};
  return tags;
}

struct MockToken {
  std::string lower;
  bool hashtag = false;
};

std::vector<MockToken> mock_tokens(const std::string& text) {
  std::vector<MockToken> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isalnum(c)) {
      MockToken t;
      t.hashtag = i > 0 && text[i - 1] == '#';
      while (i < text.size() &&
             std::isalnum(static_cast<unsigned char>(text[i]))) {
        char ch = text[i];
        if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
        t.lower += ch;
        ++i;
      }
      tokens.push_back(std::move(t));
    } else {
      ++i;
    }
  }
  return tokens;
}

// Collapses spellings like "m.d.m.a" to "mdma". A run must start at a
// letter not preceded by another alphanumeric character.
std::vector<std::string> collapse_dotted(const std::string& text) {
  std::vector<std::string> words;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    bool boundary =
        i == 0 || !std::isalnum(static_cast<unsigned char>(text[i - 1]));
    if (std::isalpha(c) && boundary && i + 2 < n && text[i + 1] == '.' &&
        std::isalpha(static_cast<unsigned char>(text[i + 2]))) {
      std::string word(1, static_cast<char>(std::tolower(c)));
      std::size_t j = i + 1;
      while (j + 1 < n && text[j] == '.' &&
             std::isalpha(static_cast<unsigned char>(text[j + 1]))) {
        word += static_cast<char>(
            std::tolower(static_cast<unsigned char>(text[j + 1])));
        j += 2;
      }
      if (word.size() >= 3) words.push_back(std::move(word));
      i = j;
    } else {
      ++i;
    }
  }
  return words;
}

bool contains_any(const std::string& haystack,
                  const std::vector<std::string>& needles) {
  for (const auto& s : needles) {
    if (haystack.find(s) != std::string::npos) return true;
  }
  return false;
}

// Fixed response for knowledge-building requests (discovery, summarization,
// fusion). Mentions every cue family so downstream detection runs with all
// detectors enabled.
constexpr const char* kMockKnowledgeParagraph =
    "Drug trafficking posts share recurring signals. They name drugs "
    "outright or through dotted spellings and Greek characters, lean on "
    "niche hashtags to reach buyers, and list contact channels such as "
    "Wickr, Telegram, WhatsApp, Kik, or Snapchat handles and phone numbers. "
    "Sellers promise discreet packaging, fast delivery, and payment in cash "
    "apps or bitcoin, and the offers lack any prescriptions or legal "
    "verification. Special symbols and deliberate misspellings are used to "
    "slip past moderation.";

}  // namespace

ChatResponse RuleBasedMockOracle::complete(const ChatRequest& request) {
  validate_request(request);
  {
    std::lock_guard lock(mu_);
    ++calls_;
    if (recording_) log_.push_back(request);
  }
  const std::string* user = nullptr;
  for (const auto& m : request.messages) {
    if (m.role == Role::User) user = &m.content;
  }
  if (user == nullptr || user->find(kDetectionMarker) == std::string::npos)
    return ChatResponse{kMockKnowledgeParagraph};

  // Blocks are "\n\n"-separated; everything before the question block is
  // knowledge, everything after it is the post. Posts are assumed to be
  // single paragraphs (true for this repository's corpora and fixtures).
  std::size_t q_pos = user->find(kDetectionMarker);
  std::size_t k_end = user->rfind("\n\n", q_pos);
  std::string knowledge =
      k_end == std::string::npos ? "" : user->substr(0, k_end);
  std::size_t x_start = user->find("\n\n", q_pos);
  std::string x = x_start == std::string::npos
                      ? ""
                      : user->substr(x_start + 2);

  const bool has_k = !trim(knowledge).empty();
  bool poisoned = false;
  std::string k_lower = to_lower(knowledge);
  if (has_k) {
    for (const auto& t : mock_tokens(knowledge)) {
      if (t.lower == "banana") {
        poisoned = true;
        break;
      }
    }
  }
  const bool enable_hashtag =
      has_k && !poisoned && k_lower.find("hashtag") != std::string::npos;
  const bool enable_contact =
      has_k && contains_any(k_lower, {"contact", "wickr", "whatsapp",
                                      "telephone", "messenger"});
  const bool enable_symbol =
      has_k && !poisoned &&
      contains_any(k_lower, {"special symbol", "special character",
                             "punctuation", "obfuscat", "greek", "emoji"});

  auto tokens = mock_tokens(x);
  bool plain_hit = false;
  bool hashtag_hit = false;
  bool contact_hit = false;
  for (const auto& t : tokens) {
    if (!t.hashtag) {
      for (const auto& w : mock_drug_lexicon()) {
        if (t.lower == w) plain_hit = true;
      }
      for (const char* h :
           {"wickr", "whatsapp", "kik", "snapchat", "telegram", "wichr"}) {
        if (t.lower == h) contact_hit = true;
      }
    } else {
      for (const auto& w : mock_drug_tags()) {
        if (t.lower == w) hashtag_hit = true;
      }
    }
  }
  bool symbol_hit = contains_any(
      x, {"\xCE\x98", "\xCE\xB8", "\xCE\xB1", "\xCF\x89", "\xE2\x88\x82"});
  if (!symbol_hit) {
    for (const auto& w : collapse_dotted(x)) {
      for (const auto& d : mock_drug_lexicon()) {
        if (w == d) symbol_hit = true;
      }
    }
  }

  bool positive;
  if (!has_k) {
    // Zero-knowledge behavior: plain drug names are caught, and benign
    // medication vocabulary triggers false positives.
    bool trigger_hit = contains_any(
        to_lower(x), {"pills", "pill ", "medication", "opioid", "painkiller"});
    positive = plain_hit || trigger_hit;
  } else {
    positive = plain_hit || (enable_hashtag && hashtag_hit) ||
               (enable_contact && contact_hit) ||
               (enable_symbol && symbol_hit);
  }
  return ChatResponse{positive ? "P" : "N"};
}

std::size_t RuleBasedMockOracle::call_count() const {
  std::lock_guard lock(mu_);
  return calls_;
}

void RuleBasedMockOracle::set_recording(bool on) {
  std::lock_guard lock(mu_);
  recording_ = on;
}

std::vector<ChatRequest> RuleBasedMockOracle::call_log() const {
  std::lock_guard lock(mu_);
  return log_;
}

// ---------------------------------------------------------------------------
// HttpOracle

namespace {

struct TokenBucket {
  explicit TokenBucket(int per_minute)
      : rate_per_sec(per_minute / 60.0),
        capacity(per_minute > 0 ? per_minute : 0),
        tokens(capacity),
        last(std::chrono::steady_clock::now()) {}

  void acquire() {
    if (capacity <= 0) return;
    std::unique_lock lock(mu);
    for (;;) {
      auto now = std::chrono::steady_clock::now();
      tokens = std::min(
          capacity,
          tokens + rate_per_sec *
                       std::chrono::duration<double>(now - last).count());
      last = now;
      if (tokens >= 1.0) {
        tokens -= 1.0;
        return;
      }
      auto wait = std::chrono::duration<double>((1.0 - tokens) / rate_per_sec);
      lock.unlock();
      std::this_thread::sleep_for(wait);
      lock.lock();
    }
  }

  std::mutex mu;
  double rate_per_sec;
  double capacity;
  double tokens;
  std::chrono::steady_clock::time_point last;
};

int backoff_jitter_ms(int base) {
  thread_local SplitMix64 rng(
      static_cast<std::uint64_t>(
          std::chrono::steady_clock::now().time_since_epoch().count()) ^
      std::hash<std::thread::id>{}(std::this_thread::get_id()));
  if (base <= 1) return 0;
  return static_cast<int>(rng.next_below(static_cast<std::uint64_t>(base)));
}

}  // namespace

struct HttpOracle::Impl {
  OracleConfig config;
  std::string api_key;
  std::string base;  // scheme://host[:port]
  std::string path_prefix;
  std::counting_semaphore<> in_flight;
  TokenBucket bucket;

  Impl(const OracleConfig& cfg, std::string key, std::string b, std::string p)
      : config(cfg),
        api_key(std::move(key)),
        base(std::move(b)),
        path_prefix(std::move(p)),
        in_flight(cfg.max_in_flight > 0 ? cfg.max_in_flight : 1),
        bucket(cfg.requests_per_minute) {}
};

HttpOracle::HttpOracle(const OracleConfig& config) {
  if (config.api_key_env_var.empty())
    throw ValidationError("api_key_env_var is empty");
  const char* key = std::getenv(config.api_key_env_var.c_str());
  if (key == nullptr || *key == '\0')
    throw OracleError(OracleErrorKind::Auth,
                      "environment variable " + config.api_key_env_var +
                          " is not set; refusing to run in live mode");
  auto scheme_end = config.endpoint_url.find("://");
  if (scheme_end == std::string::npos)
    throw ValidationError("endpoint_url must start with http:// or https://");
  auto slash = config.endpoint_url.find('/', scheme_end + 3);
  std::string base = slash == std::string::npos
                         ? config.endpoint_url
                         : config.endpoint_url.substr(0, slash);
  std::string prefix =
      slash == std::string::npos ? "" : config.endpoint_url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  impl_ = std::make_unique<Impl>(config, key, base, prefix);
}

HttpOracle::~HttpOracle() = default;

ChatResponse HttpOracle::complete(const ChatRequest& request) {
  validate_request(request);
  impl_->in_flight.acquire();
  struct Release {
    std::counting_semaphore<>& sem;
    ~Release() { sem.release(); }
  } release{impl_->in_flight};

  nlohmann::json body;
  body["model"] = request.model;
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  auto messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", role_name(m.role)}, {"content", m.content}});
  }
  body["messages"] = std::move(messages);
  const std::string payload = body.dump();
  const std::string url_path = impl_->path_prefix + "/chat/completions";
  const httplib::Headers headers = {
      {"Authorization", "Bearer " + impl_->api_key}};

  const auto& retry = impl_->config.retry;
  const int attempts = std::max(1, retry.max_attempts);
  std::string last_failure;
  bool rate_limited = false;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    impl_->bucket.acquire();
    httplib::Client client(impl_->base);
    auto timeout = std::chrono::milliseconds(impl_->config.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    auto res = client.Post(url_path, headers, payload, "application/json");

    if (res) {
      int status = res->status;
      if (status == 401 || status == 403)
        throw OracleError(OracleErrorKind::Auth,
                          "authentication rejected (HTTP " +
                              std::to_string(status) + ")");
      if (status >= 200 && status < 300) {
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception&) {
          throw OracleError(OracleErrorKind::MalformedResponse,
                            "response body is not valid JSON");
        }
        if (!j.contains("choices") || !j["choices"].is_array() ||
            j["choices"].empty() || !j["choices"][0].contains("message") ||
            !j["choices"][0]["message"].contains("content") ||
            !j["choices"][0]["message"]["content"].is_string())
          throw OracleError(OracleErrorKind::MalformedResponse,
                            "response JSON lacks choices[0].message.content");
        ChatResponse out;
        out.content = j["choices"][0]["message"]["content"].get<std::string>();
        out.finish_reason = j["choices"][0].value("finish_reason", "stop");
        if (j.contains("usage") && j["usage"].is_object()) {
          out.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0L);
          out.usage.completion_tokens =
              j["usage"].value("completion_tokens", 0L);
        }
        return out;
      }
      if (status == 429 || status >= 500) {
        rate_limited = status == 429;
        last_failure = "HTTP " + std::to_string(status);
      } else {
        throw OracleError(OracleErrorKind::Transport,
                          "HTTP " + std::to_string(status) + ": " +
                              res->body.substr(0, 200));
      }
    } else {
      rate_limited = false;
      last_failure = httplib::to_string(res.error());
    }

    if (attempt == attempts) break;
    int sleep_ms = retry.base_backoff_ms * (1 << (attempt - 1)) +
                   backoff_jitter_ms(retry.base_backoff_ms / 2);
    std::this_thread::sleep_for(std::chrono::milliseconds(sleep_ms));
  }
  throw OracleError(
      rate_limited ? OracleErrorKind::RateLimited : OracleErrorKind::Transport,
      "request failed after " + std::to_string(attempts) +
          " attempts: " + last_failure);
}

// ---------------------------------------------------------------------------
// CachedOracle

namespace {

bool read_cache_entry(const std::filesystem::path& path, ChatResponse& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    return false;
  }
  if (!j.contains("response") || !j["response"].contains("content") ||
      !j["response"]["content"].is_string())
    return false;
  const auto& r = j["response"];
  out.content = r["content"].get<std::string>();
  out.finish_reason = r.value("finish_reason", "stop");
  if (r.contains("usage") && r["usage"].is_object()) {
    out.usage.prompt_tokens = r["usage"].value("prompt_tokens", 0L);
    out.usage.completion_tokens = r["usage"].value("completion_tokens", 0L);
  }
  return true;
}

void write_cache_entry(const std::filesystem::path& path,
                       const std::string& canonical_request,
                       const ChatResponse& response) {
  {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec)
      throw IoError("cannot create cache directory " +
                    path.parent_path().string() + ": " + ec.message());
  }
  nlohmann::json j;
  j["request"] = nlohmann::json::parse(canonical_request);
  j["response"] = {{"content", response.content},
                   {"finish_reason", response.finish_reason},
                   {"usage",
                    {{"prompt_tokens", response.usage.prompt_tokens},
                     {"completion_tokens", response.usage.completion_tokens}}}};
  thread_local SplitMix64 rng(
      static_cast<std::uint64_t>(
          std::chrono::steady_clock::now().time_since_epoch().count()) ^
      std::hash<std::thread::id>{}(std::this_thread::get_id()));
  std::filesystem::path tmp =
      path.string() + ".tmp" + std::to_string(rng.next());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write cache entry " + tmp.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("cache write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cache rename failed: " + ec.message());
  }
}

}  // namespace

CachedOracle::CachedOracle(Oracle& inner, std::filesystem::path cache_dir)
    : inner_(inner), cache_dir_(std::move(cache_dir)) {}

std::filesystem::path CachedOracle::path_for(const CacheKey& key) const {
  return cache_dir_ / key.digest.substr(0, 2) / (key.digest + ".json");
}

std::pair<ChatResponse, bool> CachedOracle::complete_with_status(
    const ChatRequest& request) {
  const std::string canonical = canonical_request_json(request);
  const CacheKey key{sha256_hex(canonical)};
  const auto path = path_for(key);
  ChatResponse cached;
  if (std::filesystem::exists(path)) {
    if (read_cache_entry(path, cached)) {
      std::lock_guard lock(mu_);
      ++hits_;
      return {cached, true};
    }
    std::cerr << "warning: corrupt cache entry " << path.string()
              << ", refetching\n";
  }
  ChatResponse fresh = inner_.complete(request);
  write_cache_entry(path, canonical, fresh);
  {
    std::lock_guard lock(mu_);
    ++misses_;
  }
  return {fresh, false};
}

ChatResponse CachedOracle::complete(const ChatRequest& request) {
  return complete_with_status(request).first;
}

std::pair<ChatResponse, bool> cached_complete(
    const std::filesystem::path& cache_dir, Oracle& inner,
    const ChatRequest& request) {
  CachedOracle cache(inner, cache_dir);
  return cache.complete_with_status(request);
}

std::unique_ptr<Oracle> load_mock_script(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mock script " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("invalid mock script " + path.string() + ": " +
                          e.what());
  }
  if (!j.is_object())
    throw ValidationError("mock script must hold a JSON object");
  for (const auto& item : j.items()) {
    if (item.key() != "rule_based" && item.key() != "rules" &&
        item.key() != "default")
      throw ValidationError("mock script: unknown key \"" + item.key() +
                            "\"");
  }
  if (j.value("rule_based", false))
    return std::make_unique<RuleBasedMockOracle>();
  std::vector<MockRule> rules;
  if (j.contains("rules")) {
    if (!j["rules"].is_array())
      throw ValidationError("mock script \"rules\" must be an array");
    for (const auto& r : j["rules"]) {
      if (!r.contains("match_substring") || !r.contains("response"))
        throw ValidationError(
            "mock rule needs match_substring and response fields");
      rules.push_back(MockRule{r["match_substring"].get<std::string>(),
                               r["response"].get<std::string>()});
    }
  }
  return make_mock(std::move(rules), j.value("default", "N"));
}

}  // namespace kiprompt
