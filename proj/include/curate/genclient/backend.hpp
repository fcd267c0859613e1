#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "curate/genclient/request.hpp"

namespace curate::genclient {

/// Anything that turns a chat request into assistant text.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string Complete(const ChatRequest& request) = 0;
};

/// Offline backend: a pure function of (request content hash, seed). Emits
/// schema-valid generations with 4-5 rounds, tagged ratings and verdicts.
class MockBackend final : public ChatBackend {
 public:
  explicit MockBackend(std::uint64_t seed) : seed_(seed) {}
  std::string Complete(const ChatRequest& request) override;

  /// Score the mock judge gives a single answer text (1..10); depends only on
  /// the text and the seed.
  int ContentScore(const std::string& text) const;

 private:
  std::uint64_t seed_;
};

/// Adapts a callable; handy for tests and scripted judges.
class CallbackBackend final : public ChatBackend {
 public:
  explicit CallbackBackend(std::function<std::string(const ChatRequest&)> fn) : fn_(std::move(fn)) {}
  std::string Complete(const ChatRequest& request) override { return fn_(request); }

 private:
  std::function<std::string(const ChatRequest&)> fn_;
};

struct RetryPolicy {
  int max_attempts = 5;
  int backoff_base_ms = 500;
};

struct BackendConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key_env = "OPENAI_API_KEY";
  std::string model = "gpt-4o";
  int max_inflight = 4;
  int requests_per_minute = 0;  // 0 disables the ceiling
  RetryPolicy retry;
  int timeout_ms = 60000;
  std::string image_root;
};

Json ToJson(const BackendConfig& config);
BackendConfig BackendConfigFromJson(const Json& json);

struct HttpReply {
  int status = 0;
  std::string body;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

/// One HTTP POST. Throws Error(kTimeout) on timeouts and Error(kIoError) when
/// the connection fails; both count as transient.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpReply Post(const std::string& path, const std::string& body,
                         const Headers& headers) = 0;
};

/// cpp-httplib transport; `origin` is scheme://host[:port].
std::unique_ptr<Transport> MakeHttpTransport(const std::string& origin, int timeout_ms);

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// OpenAI-compatible chat-completions backend with retry on 429, 5xx and
/// timeouts (exponential backoff with jitter). 401/403 fail immediately with
/// AuthError; a 200 with an unusable body is MalformedResponse.
class OpenAiBackend final : public ChatBackend {
 public:
  explicit OpenAiBackend(BackendConfig config);
  OpenAiBackend(BackendConfig config, std::unique_ptr<Transport> transport, Sleeper sleeper);

  std::string Complete(const ChatRequest& request) override;

  /// Delay before retry number `attempt` (1-based).
  std::chrono::milliseconds Backoff(int attempt, std::uint64_t jitter_seed) const;

  int attempts_made() const { return last_attempts_.load(); }

 private:
  BackendConfig config_;
  std::string path_;
  std::unique_ptr<Transport> transport_;
  Sleeper sleeper_;
  ImageResolver resolver_;
  std::atomic<int> last_attempts_{0};
};

/// Extracts choices[0].message.content from a chat-completions body.
std::string ParseCompletionBody(const std::string& body);

/// Bounded-concurrency front for a backend: at most `max_inflight` calls run
/// at once process-wide for this dispatcher, and at most
/// `requests_per_window` start within any sliding `window`.
class Dispatcher {
 public:
  Dispatcher(ChatBackend& backend, int max_inflight, int requests_per_window = 0,
             std::chrono::milliseconds window = std::chrono::minutes(1));

  std::string Call(const ChatRequest& request);

  int max_inflight() const { return max_inflight_; }

 private:
  void Acquire();
  void Release();

  ChatBackend& backend_;
  int max_inflight_;
  int requests_per_window_;
  std::chrono::milliseconds window_;
  std::mutex mu_;
  std::condition_variable cv_;
  int inflight_ = 0;
  std::deque<std::chrono::steady_clock::time_point> starts_;
};

/// Runs fn(0..n-1) on `workers` threads. The first exception is rethrown
/// after all workers stop.
void ParallelFor(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace curate::genclient
