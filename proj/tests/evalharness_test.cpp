#include <doctest.h>

#include <random>

#include "curate/evalharness.hpp"
#include "eval_fixtures.hpp"
#include "test_util.hpp"

using namespace curate;
using namespace curate::evalharness;
using curate::corpus::Domain;
using curate::genclient::CallbackBackend;
using curate::genclient::ChatRequest;
using curate::genclient::Dispatcher;
using curate::genclient::MockBackend;
using curate::genclient::PromptTemplate;
using curate::testing::CaptureErrc;
using curate::testing::TempDir;

namespace {

const std::string kTemplates = CURATE_TEMPLATE_DIR;

EvalItem ChatItem(int i, QuestionType type, Domain domain, std::string answer) {
  EvalItem item;
  item.id = "q" + std::to_string(i);
  item.question = "Describe the image " + std::to_string(i);
  item.reference_answer = "Reference answer " + std::to_string(i);
  item.question_type = type;
  item.domain = domain;
  item.candidate_answers["model"] = std::move(answer);
  return item;
}

}  // namespace

TEST_CASE("score parsing") {
  CHECK(ParseScores("SCORES: 8 8") == std::pair{8.0, 8.0});
  CHECK(ParseScores("reasoning\nscores: 5, 6") == std::pair{5.0, 6.0});
  CHECK(ParseScores("SCORES: 1 2\nSCORES: 7.5 9") == std::pair{7.5, 9.0});
  CHECK(CaptureErrc([] { ParseScores("SCORES: 0 5"); }) == Errc::kUnparseableRating);
  CHECK(CaptureErrc([] { ParseScores("eight and eight"); }) == Errc::kUnparseableRating);
  CHECK(ParseVerdict("VERDICT: 1") == 1);
  CHECK(ParseVerdict("verdict: 2") == 2);
  CHECK(ParseVerdict("VERDICT: TIE") == 0);
  CHECK(CaptureErrc([] { ParseVerdict("VERDICT: 3"); }) == Errc::kUnparseableVerdict);
  CHECK(CaptureErrc([] { ParseVerdict("Assistant 1 is better"); }) == Errc::kUnparseableVerdict);
}

TEST_CASE("score_open_chat") {
  const auto tmpl = PromptTemplate::Load(kTemplates + "/chat_score.txt");
  SUBCASE("fixed judge outputs") {
    CallbackBackend same([](const ChatRequest&) { return std::string("SCORES: 8 8"); });
    Dispatcher d1(same, 2);
    auto r = score_open_chat({ChatItem(0, QuestionType::kConversation, Domain::kCT, "x")}, "model", d1, tmpl);
    CHECK(r.items[0].relative == 100.0);
    CallbackBackend better([](const ChatRequest&) { return std::string("SCORES: 5 6"); });
    Dispatcher d2(better, 2);
    r = score_open_chat({ChatItem(0, QuestionType::kConversation, Domain::kCT, "x")}, "model", d2, tmpl);
    CHECK(r.items[0].relative == doctest::Approx(120.0));
  }
  SUBCASE("question-type and domain aggregates") {
    std::vector<EvalItem> items;
    for (int i = 0; i < 193; ++i) {
      items.push_back(ChatItem(i, i < 143 ? QuestionType::kConversation : QuestionType::kDescription,
                               corpus::kAllDomains[i % 5], "candidate " + std::to_string(i % 7)));
    }
    MockBackend mock(3);
    Dispatcher judge(mock, 4);
    const auto r = score_open_chat(items, "model", judge, tmpl, 4);
    CHECK(r.by_type.at("conversation").count == 143);
    CHECK(r.by_type.at("description").count == 50);
    CHECK(r.overall.count == 193);
    std::size_t domain_total = 0;
    for (const auto& [k, v] : r.by_domain) domain_total += v.count;
    CHECK(domain_total == 193);
    double sum = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& rec = r.items[i];
      CHECK(rec.item_id == items[i].id);
      const double expected = 100.0 * mock.ContentScore(items[i].candidate_answers.at("model")) /
                              mock.ContentScore(items[i].reference_answer);
      CHECK(rec.relative == expected);
      sum += rec.relative;
    }
    CHECK(r.overall.mean == doctest::Approx(sum / 193).epsilon(1e-12));
    const auto j = ToJson(r);
    CHECK(j.at("aggregates").at("by_question_type").at("description").at("count") == 50);
  }
  SUBCASE("answer identical to reference scores 100") {
    std::vector<EvalItem> items;
    for (int i = 0; i < 20; ++i) {
      auto item = ChatItem(i, QuestionType::kDescription, Domain::kMRI, "");
      item.candidate_answers["model"] = item.reference_answer;
      items.push_back(item);
    }
    MockBackend mock(9);
    Dispatcher judge(mock, 2);
    for (const auto& rec : score_open_chat(items, "model", judge, tmpl).items) CHECK(rec.relative == 100.0);
  }
  SUBCASE("unparseable outputs are flagged and excluded") {
    std::mutex mu;
    CallbackBackend flaky([&](const ChatRequest& req) {
      std::lock_guard lock(mu);
      return req.fields.at("answer") == "bad" ? std::string("no idea") : std::string("SCORES: 4 6");
    });
    Dispatcher judge(flaky, 1);
    const auto r = score_open_chat({ChatItem(0, QuestionType::kConversation, Domain::kCT, "bad"),
                                    ChatItem(1, QuestionType::kConversation, Domain::kCT, "good")},
                                   "model", judge, tmpl);
    CHECK(r.unparseable == 1);
    CHECK(r.overall.count == 1);
    CHECK(r.overall.mean == 150.0);
    CHECK_FALSE(r.items[0].error.empty());
  }
  CHECK(CaptureErrc([&] {
          MockBackend mock(1);
          Dispatcher judge(mock, 1);
          score_open_chat({ChatItem(0, QuestionType::kConversation, Domain::kCT, "x")}, "other", judge, tmpl);
        }) == Errc::kInvalidArgument);
}

TEST_CASE("win_rate") {
  const auto tmpl = PromptTemplate::Load(kTemplates + "/winrate.txt");
  MockBackend mock(5);
  Dispatcher judge(mock, 4);
  auto make = [](const std::vector<std::pair<std::string, std::string>>& answers) {
    std::vector<EvalItem> items;
    int i = 0;
    for (const auto& [a, b] : answers) {
      EvalItem item;
      item.id = "w" + std::to_string(i++);
      item.question = "q";
      item.reference_answer = "ref";
      item.candidate_answers = {{"A", a}, {"B", b}};
      items.push_back(item);
    }
    return items;
  };
  SUBCASE("longer answer wins") {
    const auto items = make({{"long answer", "short"}, {"longer text", "tiny"}, {"much longer", "x"}, {"s", "long one"}});
    const auto r = win_rate(items, "A", "B", judge, tmpl, 1);
    CHECK(r.wins_a == 3);
    CHECK(r.wins_b == 1);
    CHECK(r.ties == 0);
    REQUIRE(r.win_rate_a.has_value());
    CHECK(*r.win_rate_a == 0.75);
    const auto swapped = win_rate(items, "B", "A", judge, tmpl, 1);
    CHECK(*r.win_rate_a + *swapped.win_rate_a == 1.0);
  }
  SUBCASE("all ties") {
    const auto r = win_rate(make({{"same", "same"}, {"abc", "xyz"}}), "A", "B", judge, tmpl, 1);
    CHECK_FALSE(r.win_rate_a.has_value());
    CHECK(r.ties == 2);
    CHECK(*r.win_rate_a_ties_half == 0.5);
    CHECK(ToJson(r).at("win_rate_a").is_null());
  }
  SUBCASE("presentation order does not change counts") {
    std::mt19937_64 rng(2);
    std::vector<std::pair<std::string, std::string>> answers;
    for (int i = 0; i < 60; ++i) answers.push_back({std::string(1 + rng() % 30, 'a'), std::string(1 + rng() % 30, 'b')});
    const auto items = make(answers);
    const auto base = win_rate(items, "A", "B", judge, tmpl, 0);
    bool saw_a_first = false;
    bool saw_b_first = false;
    for (const auto& v : base.verdicts) (v.a_first ? saw_a_first : saw_b_first) = true;
    CHECK(saw_a_first);
    CHECK(saw_b_first);
    for (std::uint64_t seed = 1; seed < 20; ++seed) {
      const auto r = win_rate(items, "A", "B", judge, tmpl, seed);
      CHECK(r.wins_a == base.wins_a);
      CHECK(r.wins_b == base.wins_b);
      CHECK(r.ties == base.ties);
    }
  }
  SUBCASE("missing candidate") {
    auto items = make({{"a", "b"}});
    items[0].candidate_answers.erase("B");
    CHECK(CaptureErrc([&] { win_rate(items, "A", "B", judge, tmpl, 0); }) == Errc::kInvalidArgument);
  }
}

TEST_CASE("vqa metrics") {
  CHECK(ClosedMatch("yes", "Yes, the lesion is visible."));
  CHECK_FALSE(ClosedMatch("no", "Yes."));
  CHECK(vqa_closed_accuracy(curate::testing::ClosedFixture(), [] {
          std::map<std::string, std::string> m;
          for (const auto& i : curate::testing::ClosedFixture()) m[i.id] = i.candidate_answers.at("model");
          return m;
        }()) == 70.0);
  CHECK(OpenRecall("left lower lobe", "the left lower lobe shows consolidation") == 1.0);
  CHECK(OpenRecall("left lower lobe", "right lung") == 0.0);
  CHECK(OpenRecall("pleural effusion", "effusion present") == 0.5);
  CHECK(OpenRecall("pleural effusion", "present effusion effusion") == OpenRecall("pleural effusion", "effusion present"));
  CHECK(CaptureErrc([] { OpenRecall("...", "x"); }) == Errc::kEmptyReference);

  auto items = curate::testing::ClosedFixture();
  for (auto& i : curate::testing::OpenFixture()) items.push_back(i);
  const auto report = vqa_evaluate(items, "model");
  CHECK(*report.closed_accuracy == 70.0);
  CHECK(*report.open_recall == doctest::Approx(0.5));
  CHECK(report.open.size() == 3);
  items[0].candidate_answers.clear();
  CHECK(*vqa_evaluate(items, "model").closed_accuracy == 60.0);
}

TEST_CASE("eval files") {
  TempDir dir;
  std::vector<EvalItem> items = curate::testing::OpenFixture();
  items[0].caption = "cap";
  items[0].domain = Domain::kHistology;
  WriteEvalItems(dir / "items.ndjson", items);
  auto back = LoadEvalItems(dir / "items.ndjson");
  REQUIRE(back.size() == 3);
  CHECK(back[0].caption == "cap");
  CHECK(back[0].domain == Domain::kHistology);
  WriteResponses(dir / "resp.ndjson", {{"o0", "m2", "answer"}, {"o2", "m2", "other"}});
  MergeResponses(back, LoadResponses(dir / "resp.ndjson"));
  CHECK(back[0].candidate_answers.at("m2") == "answer");
  CHECK(CaptureErrc([&] { MergeResponses(back, {{"nope", "m", "a"}}); }) == Errc::kInvalidArgument);
  CHECK(FilterItems(back, QuestionType::kOpen, Domain::kHistology).size() == 1);
  WriteTextFile(dir / "bad.ndjson", R"({"id":"x","question":"q","reference_answer":"","question_type":"open","domain":"CT"})" "\n");
  CHECK(CaptureErrc([&] { LoadEvalItems(dir / "bad.ndjson"); }) == Errc::kMalformedRecord);
}
