#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

namespace kiprompt {

enum class Role { System, User };

struct ChatMessage {
  Role role = Role::User;
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;  // non-empty; first is system or user
  double temperature = 0.0;           // in [0, 2]
  int max_tokens = 256;               // > 0
};

/// Throws ValidationError when a request violates its invariants.
void validate_request(const ChatRequest& request);

struct TokenUsage {
  long prompt_tokens = 0;
  long completion_tokens = 0;
};

struct ChatResponse {
  std::string content;
  std::string finish_reason = "stop";
  TokenUsage usage;
};

/// Canonical JSON serialization of a request: object keys sorted, no
/// whitespace, doubles via shortest round-trip form. Equal requests always
/// produce identical bytes; this string is what gets hashed for caching.
std::string canonical_request_json(const ChatRequest& request);

std::string sha256_hex(std::string_view bytes);

struct CacheKey {
  std::string digest;  // 64 lowercase hex chars

  static CacheKey for_request(const ChatRequest& request);
};

/// A chat-completion endpoint. complete() either returns a response or
/// throws OracleError; implementations must be safe to call from several
/// threads at once.
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

struct MockRule {
  std::string match_substring;  // matched against all message contents
  std::string response;
};

/// Scripted test double: first rule whose substring occurs in the request
/// wins, otherwise the default response. Records every request it sees.
class MockOracle : public Oracle {
 public:
  MockOracle(std::vector<MockRule> rules, std::string default_response);

  ChatResponse complete(const ChatRequest& request) override;

  std::size_t call_count() const;
  std::vector<ChatRequest> call_log() const;
  void set_recording(bool on);

 private:
  std::vector<MockRule> rules_;
  std::string default_response_;
  mutable std::mutex mu_;
  std::vector<ChatRequest> log_;
  std::size_t calls_ = 0;
  bool recording_ = true;
};

std::unique_ptr<MockOracle> make_mock(std::vector<MockRule> rules,
                                      std::string default_response);

/// Deterministic detector used by offline pipeline runs and tests. It reads
/// the composed prompt (knowledge, question, post are "\n\n"-separated
/// blocks, the post last) and answers "P" or "N" from keyword cues whose
/// recognition is gated on what the knowledge block mentions:
///
///  - with no knowledge block it only spots plain drug-name words and
///    over-fires on benign medication vocabulary ("pills", "opioid", ...);
///  - a knowledge block mentioning hashtags / contact channels / special
///    symbols enables the matching detector, and any knowledge suppresses
///    the benign-vocabulary false fires;
///  - a knowledge block containing the word "banana" disables the hashtag
///    and special-symbol detectors (a poisoned-knowledge stand-in).
///
/// Requests that do not end with the standard detection question are
/// treated as knowledge-building calls and get a fixed knowledge paragraph.
class RuleBasedMockOracle : public Oracle {
 public:
  ChatResponse complete(const ChatRequest& request) override;

  std::size_t call_count() const;
  void set_recording(bool on);
  std::vector<ChatRequest> call_log() const;

 private:
  mutable std::mutex mu_;
  std::vector<ChatRequest> log_;
  std::size_t calls_ = 0;
  bool recording_ = false;
};

struct RetryPolicy {
  int max_attempts = 4;      // total tries, >= 1
  int base_backoff_ms = 250; // attempt k sleeps base * 2^(k-1) plus jitter
};

struct OracleConfig {
  std::string endpoint_url = "https://api.openai.com/v1";
  std::string api_key_env_var = "OPENAI_API_KEY";
  int max_in_flight = 4;
  int timeout_ms = 30000;
  int requests_per_minute = 0;  // 0 disables client-side rate limiting
  RetryPolicy retry;
};

/// Client for an OpenAI-compatible chat completion service. POSTs to
/// {endpoint_url}/chat/completions with a bearer token read from the
/// configured environment variable (never from a file or flag). Retries
/// 429/5xx/transport failures with exponential backoff and jitter; 401/403
/// fail immediately as credential errors. A client-side token bucket and an
/// in-flight cap bound the request rate.
class HttpOracle : public Oracle {
 public:
  explicit HttpOracle(const OracleConfig& config);
  ~HttpOracle() override;

  ChatResponse complete(const ChatRequest& request) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Content-addressed response cache wrapped around another oracle. The key
/// is the SHA-256 of the canonical request JSON; entries live at
/// cache_dir/<first two hex chars>/<digest>.json and are written via a
/// temp-file rename, so concurrent writers are safe. Corrupt entries are
/// treated as misses and rewritten.
class CachedOracle : public Oracle {
 public:
  CachedOracle(Oracle& inner, std::filesystem::path cache_dir);

  ChatResponse complete(const ChatRequest& request) override;

  /// Like complete(), but also reports whether the response came from disk.
  std::pair<ChatResponse, bool> complete_with_status(
      const ChatRequest& request);

  std::filesystem::path path_for(const CacheKey& key) const;
  std::size_t hit_count() const { return hits_; }
  std::size_t miss_count() const { return misses_; }

 private:
  Oracle& inner_;
  std::filesystem::path cache_dir_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
  mutable std::mutex mu_;
};

/// One-shot form of CachedOracle: returns the response plus a cache-hit
/// flag.
std::pair<ChatResponse, bool> cached_complete(
    const std::filesystem::path& cache_dir, Oracle& inner,
    const ChatRequest& request);

/// Build a mock oracle from a JSON script file:
///   {"rule_based": true}                             -> RuleBasedMockOracle
///   {"default": "...", "rules": [{"match_substring","response"}, ...]}
std::unique_ptr<Oracle> load_mock_script(const std::filesystem::path& path);

}  // namespace kiprompt
