#include "curate/genclient/backend.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <random>
#include <sstream>
#include <thread>

#include "curate/error.hpp"
#include "curate/hash.hpp"

namespace curate::genclient {
namespace {

std::vector<std::string> Keywords(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  for (std::string w; in >> w;) {
    std::string clean;
    for (char c : w) {
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '-') clean.push_back(c);
    }
    if (clean.size() >= 4) words.push_back(clean);
  }
  if (words.empty()) words.push_back("region");
  return words;
}

std::string ModalityPhrase(const std::string& domain) {
  if (domain == "CXR") return "chest X-ray";
  if (domain == "MRI") return "MRI scan";
  if (domain == "Histology") return "histology slide";
  if (domain == "Gross") return "gross pathology specimen";
  if (domain == "CT") return "CT scan";
  return "image";
}

std::string MockAnswer(std::mt19937_64& rng, const std::vector<std::string>& kw,
                       const std::string& modality) {
  static const std::vector<std::string> kOpeners = {
      "The {m} shows", "This {m} demonstrates", "On this {m}, there is", "The {m} reveals"};
  static const std::vector<std::string> kExtras = {
      "This finding is consistent with the reported {k}.",
      "The {k} should be correlated with the clinical history.",
      "Comparison with prior imaging would help assess the {k}.",
      "No other acute abnormality is evident near the {k}.",
      "The distribution of the {k} suggests a localized process."};
  auto fill = [&](std::string s) {
    for (std::size_t p; (p = s.find("{m}")) != std::string::npos;) s.replace(p, 3, modality);
    for (std::size_t p; (p = s.find("{k}")) != std::string::npos;) s.replace(p, 3, kw[rng() % kw.size()]);
    return s;
  };
  std::string answer = fill(kOpeners[rng() % kOpeners.size()]) + " a notable " + kw[rng() % kw.size()] + ".";
  const std::size_t extras = rng() % 4;
  for (std::size_t i = 0; i < extras; ++i) answer += " " + fill(kExtras[rng() % kExtras.size()]);
  return answer;
}

std::string WrapRounds(const Json& rounds) {
  return "Here is the generated conversation.\n```json\n" + rounds.dump(2) + "\n```\n";
}

std::size_t WordCount(const std::string& text) {
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

std::string Field(const ChatRequest& request, const std::string& name) {
  auto it = request.fields.find(name);
  return it == request.fields.end() ? std::string() : it->second;
}

}  // namespace

int MockBackend::ContentScore(const std::string& text) const {
  return 1 + static_cast<int>(DeriveSeed(seed_, "content:" + text) % 10);
}

std::string MockBackend::Complete(const ChatRequest& request) {
  std::mt19937_64 rng(DeriveSeed(seed_, request.ContentHash()));
  switch (request.kind) {
    case PromptKind::kGeneration: {
      static const std::vector<std::string> kQuestions = {
          "What type of imaging is shown in this figure?",
          "Which structures are highlighted in the image?",
          "What abnormal findings can be observed around the {k}?",
          "How does the {k} appear in this image?",
          "What is the clinical significance of the {k}?",
          "What could explain the appearance of the {k}?",
          "Describe the {k} visible in this image."};
      const auto kw = Keywords(Field(request, "caption") + " " + Field(request, "mentions"));
      const std::string modality = ModalityPhrase(Field(request, "domain"));
      const std::size_t n = 4 + rng() % 2;
      std::vector<std::size_t> order(kQuestions.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), rng);
      Json rounds = Json::array();
      for (std::size_t i = 0; i < n; ++i) {
        std::string q = kQuestions[order[i]];
        if (auto p = q.find("{k}"); p != std::string::npos) q.replace(p, 3, kw[rng() % kw.size()]);
        rounds.push_back({{"question", q}, {"answer", MockAnswer(rng, kw, modality)}});
      }
      return WrapRounds(rounds);
    }
    case PromptKind::kAnswerVariant: {
      const auto questions = Json::parse(Field(request, "questions"), nullptr, false);
      const auto kw = Keywords(Field(request, "caption") + " " + Field(request, "mentions"));
      const std::string modality = ModalityPhrase(Field(request, "domain"));
      Json rounds = Json::array();
      if (questions.is_array()) {
        for (const auto& q : questions) {
          rounds.push_back({{"question", q}, {"answer", MockAnswer(rng, kw, modality)}});
        }
      }
      return WrapRounds(rounds);
    }
    case PromptKind::kRating: {
      const auto words = static_cast<int>(WordCount(Field(request, "answer")));
      const int jitter = static_cast<int>(rng() % 3) - 1;
      const int score = std::clamp(words / 6 + jitter, 0, 10);
      return "The answer was checked against each criterion.\nSCORE: " + std::to_string(score);
    }
    case PromptKind::kWinRate: {
      const auto a = Field(request, "answer_a").size();
      const auto b = Field(request, "answer_b").size();
      const char* verdict = a > b ? "1" : (b > a ? "2" : "TIE");
      return std::string("Both answers were compared with the reference.\nVERDICT: ") + verdict;
    }
    case PromptKind::kChatScore: {
      return "SCORES: " + std::to_string(ContentScore(Field(request, "reference"))) + " " +
             std::to_string(ContentScore(Field(request, "answer")));
    }
    case PromptKind::kOther:
      break;
  }
  return "OK";
}

Json ToJson(const BackendConfig& c) {
  return Json{{"base_url", c.base_url},
              {"api_key_env", c.api_key_env},
              {"model", c.model},
              {"max_inflight", c.max_inflight},
              {"requests_per_minute", c.requests_per_minute},
              {"retry", {{"max_attempts", c.retry.max_attempts},
                         {"backoff_base_ms", c.retry.backoff_base_ms}}},
              {"timeout_ms", c.timeout_ms},
              {"image_root", c.image_root}};
}

BackendConfig BackendConfigFromJson(const Json& j) {
  BackendConfig c;
  c.base_url = j.value("base_url", c.base_url);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.model = j.value("model", c.model);
  c.max_inflight = j.value("max_inflight", c.max_inflight);
  c.requests_per_minute = j.value("requests_per_minute", c.requests_per_minute);
  if (j.contains("retry")) {
    c.retry.max_attempts = j["retry"].value("max_attempts", c.retry.max_attempts);
    c.retry.backoff_base_ms = j["retry"].value("backoff_base_ms", c.retry.backoff_base_ms);
  }
  c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
  c.image_root = j.value("image_root", c.image_root);
  if (c.max_inflight < 1) throw Error(Errc::kConfigError, "max_inflight must be >= 1");
  if (c.retry.max_attempts < 1) throw Error(Errc::kConfigError, "retry.max_attempts must be >= 1");
  return c;
}

std::string ParseCompletionBody(const std::string& body) {
  const Json parsed = Json::parse(body, nullptr, false);
  const std::string excerpt = body.substr(0, 80);
  if (parsed.is_discarded()) throw Error(Errc::kMalformedResponse, "non-JSON body: " + excerpt);
  try {
    const auto& content = parsed.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    if (content.is_array()) {
      std::string out;
      for (const auto& part : content) {
        if (part.value("type", "") == "text") out += part.value("text", "");
      }
      return out;
    }
  } catch (const Json::exception&) {
  }
  throw Error(Errc::kMalformedResponse, "response without choices[0].message.content: " + excerpt);
}

OpenAiBackend::OpenAiBackend(BackendConfig config)
    : OpenAiBackend(config, nullptr, [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {}

OpenAiBackend::OpenAiBackend(BackendConfig config, std::unique_ptr<Transport> transport,
                             Sleeper sleeper)
    : config_(std::move(config)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
  std::string origin = config_.base_url;
  std::string prefix;
  if (const auto scheme = origin.find("://"); scheme != std::string::npos) {
    if (const auto slash = origin.find('/', scheme + 3); slash != std::string::npos) {
      prefix = origin.substr(slash);
      origin.resize(slash);
    }
  }
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  path_ = prefix + "/chat/completions";
  if (!transport_) transport_ = MakeHttpTransport(origin, config_.timeout_ms);
  resolver_ = FileImageResolver(config_.image_root);
}

std::chrono::milliseconds OpenAiBackend::Backoff(int attempt, std::uint64_t jitter_seed) const {
  const long base = config_.retry.backoff_base_ms;
  std::mt19937_64 rng(jitter_seed + static_cast<std::uint64_t>(attempt));
  const long jitter = base > 0 ? static_cast<long>(rng() % static_cast<std::uint64_t>(base / 2 + 1)) : 0;
  return std::chrono::milliseconds(base * (1L << std::min(attempt - 1, 20)) + jitter);
}

std::string OpenAiBackend::Complete(const ChatRequest& request) {
  Json wire = ToWireJson(request, resolver_);
  if (request.model_id.empty()) wire["model"] = config_.model;
  const std::string body = wire.dump();

  Headers headers;
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw Error(Errc::kAuthError, "environment variable " + config_.api_key_env + " is not set");
    }
    headers.emplace_back("Authorization", std::string("Bearer ") + key);
  }

  const std::uint64_t jitter_seed = DeriveSeed(0, request.ContentHash());
  const int max_attempts = std::max(1, config_.retry.max_attempts);
  for (int attempt = 1;; ++attempt) {
    last_attempts_ = attempt;
    const bool last = attempt >= max_attempts;
    HttpReply reply;
    try {
      reply = transport_->Post(path_, body, headers);
    } catch (const Error& e) {
      if ((e.code() == Errc::kTimeout || e.code() == Errc::kIoError) && !last) {
        sleeper_(Backoff(attempt, jitter_seed));
        continue;
      }
      throw;
    }
    if (reply.status == 200) return ParseCompletionBody(reply.body);
    if (reply.status == 401 || reply.status == 403) {
      throw Error(Errc::kAuthError, "HTTP " + std::to_string(reply.status) + " from " + path_);
    }
    const bool transient = reply.status == 429 || reply.status >= 500;
    if (transient && !last) {
      sleeper_(Backoff(attempt, jitter_seed));
      continue;
    }
    if (reply.status == 429) {
      throw Error(Errc::kRateLimited, "rate limited after " + std::to_string(attempt) + " attempts");
    }
    if (reply.status >= 500) {
      throw Error(Errc::kServerError, "HTTP " + std::to_string(reply.status) + " after " +
                                          std::to_string(attempt) + " attempts");
    }
    throw Error(Errc::kInvalidArgument,
                "HTTP " + std::to_string(reply.status) + ": " + reply.body.substr(0, 200));
  }
}

Dispatcher::Dispatcher(ChatBackend& backend, int max_inflight, int requests_per_window,
                       std::chrono::milliseconds window)
    : backend_(backend),
      max_inflight_(std::max(1, max_inflight)),
      requests_per_window_(std::max(0, requests_per_window)),
      window_(window) {}

void Dispatcher::Acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return inflight_ < max_inflight_; });
  while (requests_per_window_ > 0) {
    const auto now = std::chrono::steady_clock::now();
    while (!starts_.empty() && starts_.front() + window_ <= now) starts_.pop_front();
    if (static_cast<int>(starts_.size()) < requests_per_window_) break;
    cv_.wait_until(lock, starts_.front() + window_);
    cv_.wait(lock, [&] { return inflight_ < max_inflight_; });
  }
  ++inflight_;
  starts_.push_back(std::chrono::steady_clock::now());
}

void Dispatcher::Release() {
  {
    std::lock_guard lock(mu_);
    --inflight_;
  }
  cv_.notify_all();
}

std::string Dispatcher::Call(const ChatRequest& request) {
  Acquire();
  try {
    std::string out = backend_.Complete(request);
    Release();
    return out;
  } catch (...) {
    Release();
    throw;
  }
}

void ParallelFor(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), 1, n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        failed = true;
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace curate::genclient
