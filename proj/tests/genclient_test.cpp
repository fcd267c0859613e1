#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <random>
#include <thread>

#include "curate/genclient/backend.hpp"
#include "curate/genclient/parse.hpp"
#include "curate/genclient/prompt.hpp"
#include "test_util.hpp"

using namespace curate;
using namespace curate::genclient;
using curate::corpus::Domain;
using curate::diversity::Demonstration;
using curate::testing::CaptureErrc;
using curate::testing::TempDir;

namespace {

const std::string kTemplates = CURATE_TEMPLATE_DIR;

std::vector<Demonstration> TenDemos() {
  std::vector<Demonstration> demos;
  int i = 0;
  for (Domain d : corpus::kAllDomains) {
    for (int j = 0; j < 2; ++j, ++i) {
      demos.push_back({"d" + std::to_string(i), d, "ctx-" + std::to_string(i),
                       "resp-" + std::to_string(i), true});
    }
  }
  return demos;
}

corpus::ImageTextPair Target() {
  return {.id = "t1",
          .image_ref = "https://example.org/t1.png",
          .caption = "Axial CT shows a 3 cm hepatic lesion.",
          .inline_mentions = {"Figure 2 shows the lesion.", "Arterial enhancement is seen."},
          .domain = Domain::kCT};
}

}  // namespace

TEST_CASE("generation prompt contract") {
  const auto tmpl = PromptTemplate::Load(kTemplates + "/generation.txt");
  const auto demos = TenDemos();
  const auto request = BuildGenerationPrompt(Target(), demos, tmpl);
  REQUIRE_FALSE(request.messages.empty());
  const auto& last = request.messages.back();
  CHECK(last.role == "user");
  CHECK(last.Text().find("Axial CT shows a 3 cm hepatic lesion.") != std::string::npos);
  CHECK(last.Text().find("Arterial enhancement is seen.") != std::string::npos);
  CHECK(last.ImageCount() == 1);
  CHECK(request.kind == PromptKind::kGeneration);
  // demonstrations in the given order, context before response
  std::size_t prev = 0;
  for (const auto& d : demos) {
    const auto c = request.system.find("context:\n" + d.context + "\nresponse:\n" + d.response);
    REQUIRE(c != std::string::npos);
    CHECK(c >= prev);
    prev = c;
  }
  CHECK(request.ContentHash() == BuildGenerationPrompt(Target(), demos, tmpl).ContentHash());

  SUBCASE("missing query placeholder") {
    auto text = ReadTextFile(kTemplates + "/generation.txt");
    text.replace(text.find("{{caption}}"), 11, "");
    const auto broken = PromptTemplate::Parse(text);
    CHECK(CaptureErrc([&] { BuildGenerationPrompt(Target(), demos, broken); }) == Errc::kTemplateError);
  }
  SUBCASE("empty response passes through") {
    auto with_empty = demos;
    with_empty[3].response = "";
    const auto r = BuildGenerationPrompt(Target(), with_empty, tmpl);
    CHECK(r.system.find("context:\nctx-3\nresponse:\n\n\ncontext:\nctx-4") != std::string::npos);
  }
  SUBCASE("values are not re-expanded") {
    auto t = Target();
    t.caption = "literal {{demos}} text";
    const auto r = BuildGenerationPrompt(t, demos, tmpl);
    CHECK(r.messages.back().Text().find("literal {{demos}} text") != std::string::npos);
  }
}

TEST_CASE("template parsing errors") {
  CHECK(CaptureErrc([] { PromptTemplate::Parse("no markers"); }) == Errc::kTemplateError);
  CHECK(CaptureErrc([] { PromptTemplate::Parse("@@user\nhi\n@@assistant\nyo"); }) == Errc::kTemplateError);
  CHECK(CaptureErrc([] { PromptTemplate::Parse("@@user\na\n@@system\nb\n@@user\nc"); }) == Errc::kTemplateError);
  const auto tmpl = PromptTemplate::Parse("@@user\n{{question}} {{oops}}");
  CHECK(CaptureErrc([&] { tmpl.Render({{"question", "q"}}, {"question"}); }) == Errc::kTemplateError);
}

TEST_CASE("rating prompt contract") {
  const auto tmpl = PromptTemplate::Load(kTemplates + "/rating.txt");
  const RatedSample sample{"img.png", "A caption.", "What is shown?", "A lesion."};
  const auto request = BuildRatingPrompt(sample, DefaultCriteria(), tmpl);
  std::string all = request.system;
  for (const auto& m : request.messages) all += m.Text();
  for (const auto& c : DefaultCriteria()) CHECK(all.find(c) != std::string::npos);
  CHECK(all.find("from 0 to 10") != std::string::npos);
  CHECK(all.find("SCORE:") != std::string::npos);
  CHECK(CaptureErrc([&] { BuildRatingPrompt(sample, {}, tmpl); }) == Errc::kTemplateError);
}

TEST_CASE("ParseGeneration") {
  SUBCASE("bare list") {
    const auto out = ParseGeneration(R"([{"question":"Q1","answer":"A1"}])");
    CHECK(out.usable);
    REQUIRE(out.rounds.size() == 1);
    CHECK(out.rounds[0] == QaRound{"Q1", "A1"});
  }
  SUBCASE("prose and fences around the block") {
    const auto out = ParseGeneration(
        "Sure [see below]:\n```json\n[{\"question\":\"Q [1]\",\"answer\":\"A \\\"x\\\"\"},"
        "{\"question\":\"Q2\",\"answer\":\"A2\"}]\n```\nThanks.");
    CHECK(out.usable);
    REQUIRE(out.rounds.size() == 2);
    CHECK(out.rounds[0].question == "Q [1]");
    CHECK(out.rounds[0].answer == "A \"x\"");
  }
  SUBCASE("no JSON") {
    const auto out = ParseGeneration("I cannot help with that.");
    CHECK_FALSE(out.usable);
    CHECK_FALSE(out.reason.empty());
  }
  SUBCASE("wrong shape and too many rounds") {
    CHECK_FALSE(ParseGeneration(R"([{"q":"x"}])").usable);
    CHECK_FALSE(ParseGeneration("[]").usable);
    std::string seven = "[";
    for (int i = 0; i < 7; ++i) seven += std::string(i ? "," : "") + R"({"question":"q","answer":"a"})";
    CHECK_FALSE(ParseGeneration(seven + "]").usable);
  }
}

TEST_CASE("ParseRating") {
  CHECK(ParseRating("SCORE: 7") == 7);
  CHECK(ParseRating("reasoning...\nscore: 0") == 0);
  CHECK(ParseRating("SCORE: 3\nrevised SCORE: 10") == 10);
  CHECK(CaptureErrc([] { ParseRating("SCORE: 11"); }) == Errc::kUnparseableRating);
  CHECK(CaptureErrc([] { ParseRating("SCORE: 7.5"); }) == Errc::kUnparseableRating);
  CHECK(CaptureErrc([] { ParseRating("SCORE: -1"); }) == Errc::kUnparseableRating);
  CHECK(CaptureErrc([] { ParseRating("SCORE: 123456789012"); }) == Errc::kUnparseableRating);
  CHECK(CaptureErrc([] { ParseRating("the quality is fine"); }) == Errc::kUnparseableRating);
}

TEST_CASE("mock backend is deterministic and schema-valid") {
  const auto gen_tmpl = PromptTemplate::Load(kTemplates + "/generation.txt");
  const auto rate_tmpl = PromptTemplate::Load(kTemplates + "/rating.txt");
  MockBackend mock(42);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    auto target = Target();
    target.id = "t" + std::to_string(i);
    target.caption = "Caption number " + std::to_string(rng() % 1000) + " with consolidation";
    target.domain = corpus::kAllDomains[static_cast<std::size_t>(i) % 5];
    const auto request = BuildGenerationPrompt(target, TenDemos(), gen_tmpl);
    const auto raw = mock.Complete(request);
    CHECK(raw == mock.Complete(request));
    const auto parsed = ParseGeneration(raw);
    REQUIRE(parsed.usable);
    CHECK(parsed.rounds.size() >= 4);
    CHECK(parsed.rounds.size() <= 5);

    std::vector<std::string> questions;
    for (const auto& r : parsed.rounds) questions.push_back(r.question);
    const auto variant = ParseGeneration(mock.Complete(BuildAnswerVariantPrompt(request, raw, questions)));
    REQUIRE(variant.usable);
    REQUIRE(variant.rounds.size() == parsed.rounds.size());
    for (std::size_t r = 0; r < questions.size(); ++r) CHECK(variant.rounds[r].question == questions[r]);

    const auto rating = BuildRatingPrompt({"", "", parsed.rounds[0].question, parsed.rounds[0].answer},
                                          DefaultCriteria(), rate_tmpl);
    const int score = ParseRating(mock.Complete(rating));
    CHECK(score >= 0);
    CHECK(score <= 10);
  }
  MockBackend other(43);
  const auto request = BuildGenerationPrompt(Target(), TenDemos(), gen_tmpl);
  CHECK(mock.Complete(request) != other.Complete(request));
}

namespace {

class ScriptedTransport final : public Transport {
 public:
  explicit ScriptedTransport(std::vector<HttpReply> replies) : replies_(std::move(replies)) {}
  HttpReply Post(const std::string&, const std::string& body, const Headers&) override {
    last_body = body;
    const auto i = std::min(calls++, replies_.size() - 1);
    if (replies_[i].status == -1) throw Error(Errc::kTimeout, "timeout");
    return replies_[i];
  }
  std::size_t calls = 0;
  std::string last_body;

 private:
  std::vector<HttpReply> replies_;
};

const std::string kOkBody = R"({"choices":[{"message":{"role":"assistant","content":"hello"}}]})";

BackendConfig NoKeyConfig() {
  BackendConfig c;
  c.api_key_env = "";
  c.retry = {5, 100};
  return c;
}

}  // namespace

TEST_CASE("retry contract") {
  std::vector<std::chrono::milliseconds> sleeps;
  auto sleeper = [&](std::chrono::milliseconds d) { sleeps.push_back(d); };
  ChatRequest req;
  req.messages.push_back({"user", {ContentPart::Text("hi")}});

  SUBCASE("429 twice then 200") {
    auto transport = std::make_unique<ScriptedTransport>(
        std::vector<HttpReply>{{429, ""}, {429, ""}, {200, kOkBody}});
    auto* t = transport.get();
    OpenAiBackend backend(NoKeyConfig(), std::move(transport), sleeper);
    CHECK(backend.Complete(req) == "hello");
    CHECK(t->calls == 3);
    CHECK(backend.attempts_made() == 3);
    REQUIRE(sleeps.size() == 2);
    CHECK(sleeps[0] >= std::chrono::milliseconds(100));
    CHECK(sleeps[0] <= std::chrono::milliseconds(150));
    CHECK(sleeps[1] >= std::chrono::milliseconds(200));
    CHECK(sleeps[1] <= std::chrono::milliseconds(250));
  }
  SUBCASE("exhausted retries") {
    OpenAiBackend backend(NoKeyConfig(),
                          std::make_unique<ScriptedTransport>(std::vector<HttpReply>{{429, ""}}), sleeper);
    CHECK(CaptureErrc([&] { backend.Complete(req); }) == Errc::kRateLimited);
    CHECK(backend.attempts_made() == 5);
    OpenAiBackend server_err(NoKeyConfig(),
                             std::make_unique<ScriptedTransport>(std::vector<HttpReply>{{503, ""}}), sleeper);
    CHECK(CaptureErrc([&] { server_err.Complete(req); }) == Errc::kServerError);
    OpenAiBackend timeouts(NoKeyConfig(),
                           std::make_unique<ScriptedTransport>(std::vector<HttpReply>{{-1, ""}}), sleeper);
    CHECK(CaptureErrc([&] { timeouts.Complete(req); }) == Errc::kTimeout);
  }
  SUBCASE("timeouts are retried") {
    OpenAiBackend backend(NoKeyConfig(),
                          std::make_unique<ScriptedTransport>(
                              std::vector<HttpReply>{{-1, ""}, {200, kOkBody}}),
                          sleeper);
    CHECK(backend.Complete(req) == "hello");
  }
  SUBCASE("auth and malformed responses are not retried") {
    OpenAiBackend auth(NoKeyConfig(),
                       std::make_unique<ScriptedTransport>(std::vector<HttpReply>{{401, ""}}), sleeper);
    CHECK(CaptureErrc([&] { auth.Complete(req); }) == Errc::kAuthError);
    CHECK(auth.attempts_made() == 1);
    OpenAiBackend junk(NoKeyConfig(),
                       std::make_unique<ScriptedTransport>(std::vector<HttpReply>{{200, "<html>oops"}}),
                       sleeper);
    CHECK(CaptureErrc([&] { junk.Complete(req); }) == Errc::kMalformedResponse);
    CHECK(sleeps.empty());
  }
  SUBCASE("missing API key") {
    BackendConfig c = NoKeyConfig();
    c.api_key_env = "CURATE_TEST_SURELY_UNSET_KEY";
    OpenAiBackend backend(c, std::make_unique<ScriptedTransport>(std::vector<HttpReply>{{200, kOkBody}}),
                          sleeper);
    CHECK(CaptureErrc([&] { backend.Complete(req); }) == Errc::kAuthError);
  }
}

TEST_CASE("OpenAI wire format against a local server") {
  TempDir dir;
  WriteTextFile(dir / "img.png", std::string("\x89PNG\r\n", 6));
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_body;
  std::string seen_auth;
  std::mutex mu;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++hits;
    {
      std::lock_guard lock(mu);
      seen_body = req.body;
      seen_auth = req.get_header_value("Authorization");
    }
    if (n <= 2) {
      res.status = 429;
      return;
    }
    res.set_content(kOkBody, "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("CURATE_TEST_KEY", "sk-test", 1);
  BackendConfig config;
  config.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/";
  config.api_key_env = "CURATE_TEST_KEY";
  config.retry = {5, 1};
  config.image_root = dir.path().string();
  config.model = "vision-model";
  OpenAiBackend backend(config);

  ChatRequest req;
  req.system = "sys";
  req.messages.push_back({"user", {ContentPart::Text("look"), ContentPart::Image("img.png")}});
  req.seed = 9;
  CHECK(backend.Complete(req) == "hello");
  CHECK(hits == 3);
  server.stop();
  thread.join();

  const auto body = Json::parse(seen_body);
  CHECK(seen_auth == "Bearer sk-test");
  CHECK(body.at("model") == "vision-model");
  CHECK(body.at("seed") == 9);
  CHECK(body.at("messages")[0].at("role") == "system");
  const auto& content = body.at("messages")[1].at("content");
  CHECK(content[0].at("type") == "text");
  CHECK(content[1].at("type") == "image_url");
  CHECK(content[1].at("image_url").at("url").get<std::string>().starts_with("data:image/png;base64,"));
}

TEST_CASE("connection failure surfaces as a transient error") {
  BackendConfig config = NoKeyConfig();
  config.base_url = "http://127.0.0.1:1/v1";
  config.retry = {2, 1};
  config.timeout_ms = 500;
  OpenAiBackend backend(config);
  ChatRequest req;
  const auto code = CaptureErrc([&] { backend.Complete(req); });
  CHECK((code == Errc::kIoError || code == Errc::kTimeout));
  CHECK(backend.attempts_made() == 2);
}

TEST_CASE("dispatcher bounds in-flight requests") {
  std::atomic<int> inflight{0};
  std::atomic<int> peak{0};
  CallbackBackend slow([&](const ChatRequest&) {
    const int now = ++inflight;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(3));
    --inflight;
    return std::string("ok");
  });
  Dispatcher dispatcher(slow, 3);
  std::vector<std::string> results(64);
  ParallelFor(results.size(), 16, [&](std::size_t i) { results[i] = dispatcher.Call(ChatRequest{}); });
  CHECK(peak.load() <= 3);
  CHECK(peak.load() >= 1);
  for (const auto& r : results) CHECK(r == "ok");
}

TEST_CASE("dispatcher request-rate ceiling") {
  CallbackBackend fast([](const ChatRequest&) { return std::string("ok"); });
  Dispatcher dispatcher(fast, 4, 2, std::chrono::milliseconds(150));
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 5; ++i) dispatcher.Call(ChatRequest{});
  CHECK(std::chrono::steady_clock::now() - start >= std::chrono::milliseconds(300));
}

TEST_CASE("ParallelFor rethrows") {
  CHECK_THROWS_AS(ParallelFor(10, 4, [](std::size_t i) {
                    if (i == 5) throw Error(Errc::kIoError, "boom");
                  }),
                  Error);
}
