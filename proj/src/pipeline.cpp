#include "curate/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <random>
#include <set>

#include "curate/corpus.hpp"
#include "curate/diversity.hpp"
#include "curate/error.hpp"
#include "curate/evalharness.hpp"
#include "curate/genclient/backend.hpp"
#include "curate/genclient/parse.hpp"
#include "curate/genclient/prompt.hpp"
#include "curate/hash.hpp"
#include "curate/preference.hpp"
#include "curate/ranking.hpp"
#include "curate/selector.hpp"

#ifndef CURATE_TEMPLATE_DIR
#define CURATE_TEMPLATE_DIR "templates"
#endif

namespace curate::pipeline {
namespace fs = std::filesystem;
using corpus::Domain;

namespace {

constexpr const char* kManifestFile = "run_manifest.json";

[[noreturn]] void ConfigFail(const std::string& msg) { throw Error(Errc::kConfigError, msg); }

const Json& At(const Json& j, std::string_view dotted) {
  const Json* cur = &j;
  std::size_t start = 0;
  while (start <= dotted.size()) {
    const auto dot = dotted.find('.', start);
    const auto key = std::string(dotted.substr(start, dot == std::string_view::npos ? dotted.npos
                                                                                    : dot - start));
    auto it = cur->find(key);
    if (it == cur->end()) ConfigFail("unknown config key '" + std::string(dotted) + "'");
    cur = &*it;
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return *cur;
}

// Type compatibility for overrides: numbers interchange, null accepts anything.
bool Compatible(const Json& old_value, const Json& new_value) {
  if (old_value.is_null() || new_value.is_null()) return true;
  if (old_value.is_number() && new_value.is_number()) return true;
  if (old_value.is_number() && new_value.is_string()) return true;  // "auto" style sentinels
  if (old_value.is_string() && new_value.is_number()) return true;
  return old_value.type() == new_value.type();
}

std::string FileDigest(const fs::path& path) {
  if (path.empty()) return "";
  if (!fs::exists(path)) return "missing";
  return Sha256File(path);
}

genclient::BackendConfig Backend(const Json& j) { return genclient::BackendConfigFromJson(j); }

std::unique_ptr<genclient::ChatBackend> MakeBackend(bool mock, const Json& backend_json,
                                                    std::uint64_t seed) {
  if (mock) return std::make_unique<genclient::MockBackend>(seed);
  return std::make_unique<genclient::OpenAiBackend>(Backend(backend_json));
}

std::unique_ptr<genclient::Dispatcher> MakeDispatcher(genclient::ChatBackend& backend,
                                                      const Json& backend_json) {
  const auto cfg = Backend(backend_json);
  return std::make_unique<genclient::Dispatcher>(backend, cfg.max_inflight,
                                                 cfg.requests_per_minute);
}

std::string ModelName(bool mock, const Json& backend_json) {
  return mock ? std::string("mock") : Backend(backend_json).model;
}

Json ReadJson(const fs::path& path) {
  try {
    return Json::parse(ReadTextFile(path));
  } catch (const Json::exception& e) {
    throw Error(Errc::kMalformedRecord, path.string() + ": " + e.what());
  }
}

void WriteJson(const fs::path& path, const OrderedJson& j) { WriteTextFile(path, j.dump(2) + "\n"); }

// Generated record as stored by the generate stage.
struct Generated {
  std::string id;
  std::string image_ref;
  Domain domain = Domain::kCXR;
  std::string caption;
  std::vector<genclient::QaRound> rounds;
  std::vector<std::string> alt_answers;  // empty when the variant call failed
};

OrderedJson ToJson(const Generated& g) {
  OrderedJson j;
  j["id"] = g.id;
  j["image_ref"] = g.image_ref;
  j["domain"] = corpus::DomainName(g.domain);
  j["caption"] = g.caption;
  j["rounds"] = OrderedJson::array();
  for (std::size_t i = 0; i < g.rounds.size(); ++i) {
    OrderedJson r;
    r["question"] = g.rounds[i].question;
    r["answer"] = g.rounds[i].answer;
    if (!g.alt_answers.empty()) r["answer_alt"] = g.alt_answers[i];
    j["rounds"].push_back(r);
  }
  return j;
}

std::vector<Generated> LoadGenerated(const fs::path& path) {
  std::vector<Generated> out;
  ForEachNdjson(path, [&](std::size_t, const Json& j) {
    Generated g;
    g.id = j.at("id").get<std::string>();
    g.image_ref = j.at("image_ref").get<std::string>();
    g.domain = *corpus::ParseDomain(j.at("domain").get<std::string>());
    g.caption = j.at("caption").get<std::string>();
    for (const auto& r : j.at("rounds")) {
      g.rounds.push_back({r.at("question").get<std::string>(), r.at("answer").get<std::string>()});
      if (r.contains("answer_alt")) g.alt_answers.push_back(r["answer_alt"].get<std::string>());
    }
    out.push_back(std::move(g));
  });
  return out;
}

std::string RoundsText(const std::vector<genclient::QaRound>& rounds) {
  Json arr = Json::array();
  for (const auto& r : rounds) arr.push_back({{"question", r.question}, {"answer", r.answer}});
  return arr.dump();
}

// Samples are keyed by the corpus id of their image.
std::string SampleId(const std::string& image_id, const std::string& q, const std::string& a) {
  return corpus::SampleKey(image_id, q, a);
}

bool InHoldout(std::uint64_t seed, const std::string& image_id, double fraction) {
  return static_cast<double>(DeriveSeed(seed, "holdout:" + image_id) % 1000000) <
         fraction * 1000000.0;
}

// When several annotators answered one task, keep one preference with the
// plurality choice.
std::vector<preference::HumanPreference> CollapseRedundant(
    const std::vector<preference::HumanPreference>& prefs) {
  std::map<std::string, std::vector<const preference::HumanPreference*>> by_task;
  std::vector<std::string> order;
  for (const auto& p : prefs) {
    auto& v = by_task[p.task_id];
    if (v.empty()) order.push_back(p.task_id);
    v.push_back(&p);
  }
  std::vector<preference::HumanPreference> out;
  for (const auto& id : order) {
    const auto& v = by_task[id];
    if (v.size() == 1) {
      out.push_back(*v[0]);
      continue;
    }
    std::vector<preference::Choice> votes;
    preference::HumanPreference merged = *v[0];
    for (const auto* p : v) {
      votes.push_back(p->EffectiveChoice());
      merged.timestamp = std::max(merged.timestamp, p->timestamp);
    }
    merged.choice = preference::majority_choice(votes);
    merged.annotator = "majority";
    out.push_back(merged);
  }
  return out;
}

}  // namespace

Json DefaultConfig() {
  Json backend = Json::parse(genclient::ToJson(genclient::BackendConfig{}).dump());
  Json selector = Json::parse(selector::ToJson(selector::TrainConfig{}).dump());
  selector["seed"] = nullptr;
  selector["holdout_fraction"] = 0.2;
  return {
      {"seed", 0},
      {"paths",
       {{"corpus", "corpus.ndjson"},
        {"embeddings", "embeddings.ndjson"},
        {"templates", CURATE_TEMPLATE_DIR},
        {"out_dir", "out"},
        {"demo_pool", ""},
        {"human_prefs", ""},
        {"text_embeddings", ""},
        {"eval_items", ""},
        {"responses", ""}}},
      {"clustering", {{"k", 10}, {"seed", nullptr}, {"max_iters", 100}, {"tol", 1e-6}}},
      {"demos", {{"m", 20}}},
      {"generation",
       {{"backend", backend}, {"demos_per_call", 10}, {"temperature", 0.7}, {"max_tokens", 2048}}},
      {"rating",
       {{"backend", backend}, {"criteria", genclient::DefaultCriteria()}, {"temperature", 0.0}}},
      {"features", {{"text", "hash"}, {"d_text", 64}}},
      {"selector", selector},
      {"labels", {{"threshold", preference::kDefaultThreshold}}},
      {"curves", {{"plateau_eps", 0.002}, {"plateau_window", 3}, {"percentiles", Json::array()}}},
      {"selection", {{"percentile", 50}}},
      {"emit", {{"name", "curated"}}},
      {"eval", {{"judge", backend}, {"workers", 4}}},
  };
}

void MergeConfig(Json& base, const Json& patch, const std::string& prefix) {
  if (!patch.is_object()) ConfigFail("config " + (prefix.empty() ? "root" : prefix) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const auto dotted = prefix.empty() ? key : prefix + "." + key;
    auto it = base.find(key);
    if (it == base.end()) ConfigFail("unknown config key '" + dotted + "'");
    if (it->is_object() && value.is_object()) {
      MergeConfig(*it, value, dotted);
    } else {
      if (!Compatible(*it, value)) ConfigFail("config key '" + dotted + "' has the wrong type");
      *it = value;
    }
  }
}

Json LoadConfig(const fs::path& path) {
  Json config = DefaultConfig();
  Json patch;
  try {
    patch = Json::parse(ReadTextFile(path));
  } catch (const Json::exception& e) {
    ConfigFail(path.string() + ": " + e.what());
  }
  MergeConfig(config, patch);
  return config;
}

void ApplyOverride(Json& config, std::string_view dotted, std::string_view value) {
  At(config, dotted);  // existence check
  Json parsed = Json::parse(value.begin(), value.end(), nullptr, false);
  if (parsed.is_discarded()) parsed = std::string(value);
  // Build a nested patch so MergeConfig applies the same type rules.
  Json patch = parsed;
  std::string path(dotted);
  while (true) {
    const auto dot = path.rfind('.');
    const auto key = dot == std::string::npos ? path : path.substr(dot + 1);
    patch = Json{{key, patch}};
    if (dot == std::string::npos) break;
    path.resize(dot);
  }
  const Json& old_value = At(config, dotted);
  if (old_value.is_object()) ConfigFail("config key '" + std::string(dotted) + "' is a section");
  MergeConfig(config, patch);
}

SplitArgs ExtractOverrides(const std::vector<std::string>& args) {
  SplitArgs out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& a = args[i];
    const bool dotted_flag = a.rfind("--", 0) == 0 &&
                             a.substr(2, a.find('=') == std::string::npos ? a.npos : a.find('=') - 2)
                                     .find('.') != std::string::npos;
    if (!dotted_flag) {
      out.rest.push_back(a);
      continue;
    }
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      out.overrides.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= args.size()) ConfigFail("missing value for " + a);
      out.overrides.emplace_back(a.substr(2), args[++i]);
    }
  }
  return out;
}

void ValidateConfig(const Json& c) {
  auto positive_int = [&](const char* key) {
    const auto& v = At(c, key);
    if (!v.is_number_integer() || v.get<long long>() < 1) ConfigFail(std::string(key) + " must be a positive integer");
  };
  if (!c.at("seed").is_number_unsigned() && !(c.at("seed").is_number_integer() && c.at("seed").get<long long>() >= 0)) {
    ConfigFail("seed must be a non-negative integer");
  }
  positive_int("clustering.k");
  positive_int("clustering.max_iters");
  positive_int("demos.m");
  positive_int("generation.demos_per_call");
  positive_int("features.d_text");
  if (At(c, "generation.demos_per_call").get<int>() % static_cast<int>(corpus::kAllDomains.size()) != 0) {
    ConfigFail("generation.demos_per_call must be a multiple of the domain count");
  }
  const auto text = At(c, "features.text");
  if (text != "hash" && text != "file") ConfigFail("features.text must be 'hash' or 'file'");
  const auto& p = At(c, "selection.percentile");
  if (p.is_string()) {
    if (p != "auto") ConfigFail("selection.percentile must be a number or 'auto'");
  } else if (!p.is_number() || p.get<double>() < 0 || p.get<double>() > 100) {
    ConfigFail("selection.percentile must lie in [0, 100]");
  }
  const auto th = At(c, "labels.threshold");
  if (!th.is_number_integer() || th.get<int>() < 0 || th.get<int>() > 10) {
    ConfigFail("labels.threshold must be an integer in 0..10");
  }
  const auto hf = At(c, "selector.holdout_fraction");
  if (!hf.is_number() || hf.get<double>() < 0 || hf.get<double>() >= 1) {
    ConfigFail("selector.holdout_fraction must lie in [0, 1)");
  }
  Json train = At(c, "selector");
  train.erase("holdout_fraction");
  if (train["seed"].is_null()) train["seed"] = 0;
  selector::Validate(selector::TrainConfigFromJson(train));
  for (const char* key : {"generation.backend", "rating.backend", "eval.judge"}) {
    try {
      Backend(At(c, key));
    } catch (const Error& e) {
      ConfigFail(std::string(key) + ": " + e.what());
    }
  }
}

Pipeline::Pipeline(Json config, bool mock) : config_(std::move(config)), mock_(mock) {
  ValidateConfig(config_);
  seed_ = config_.at("seed").get<std::uint64_t>();
  out_dir_ = config_.at("paths").at("out_dir").get<std::string>();
}

fs::path Pipeline::Path(const char* key) const {
  return fs::path(config_.at("paths").at(key).get<std::string>());
}

fs::path Pipeline::Template(const char* name) const { return Path("templates") / name; }

fs::path Pipeline::StageDir(const std::string& stage) const { return out_dir_ / stage; }

std::string Pipeline::StageKey(const std::string& stage, bool upstream) const {
  struct Deps {
    std::vector<const char*> sections;
    std::vector<fs::path> files;
    std::vector<std::string> upstream;
    bool uses_backend = false;
  };
  const auto& c = config_;
  Deps d;
  if (stage == "cluster") {
    d = {{"clustering"}, {Path("corpus"), Path("embeddings")}, {}, false};
  } else if (stage == "sample-demos") {
    d = {{"demos", "generation.demos_per_call"}, {Path("corpus")}, {"cluster"}, false};
  } else if (stage == "generate") {
    d = {{"generation"}, {Path("corpus"), Path("demo_pool"), Template("generation.txt")},
         {"sample-demos"}, true};
  } else if (stage == "rate") {
    d = {{"rating"}, {Template("rating.txt")}, {"generate"}, true};
  } else if (stage == "train-selector") {
    d = {{"selector", "features", "labels"},
         {Path("embeddings"), Path("human_prefs"), Path("text_embeddings")},
         {"rate"}, false};
  } else if (stage == "eval-selector") {
    d = {{}, {}, {"train-selector"}, false};
  } else if (stage == "curves") {
    d = {{"curves"}, {}, {"train-selector"}, false};
  } else if (stage == "select") {
    d = {{"selection"}, {}, {"train-selector", "cluster"}, false};
    if (At(c, "selection.percentile").is_string()) d.upstream.push_back("curves");
  } else if (stage == "emit") {
    d = {{"emit"}, {}, {"select", "generate"}, false};
  } else {
    // Evaluation subcommands are leaves with no pipeline upstream.
    d = {{"eval"}, {Path("eval_items"), Path("responses")}, {}, true};
  }
  OrderedJson key;
  key["stage"] = stage;
  key["tool_version"] = kToolVersion;
  key["seed"] = seed_;
  bool mock = d.uses_backend && mock_;
  if (d.uses_backend && upstream) {
    // Backend mode belongs to the run that produced the outputs.
    const auto manifest = StageDir(stage) / kManifestFile;
    mock = fs::exists(manifest) && ReadJson(manifest).value("mock", false);
  }
  key["mock"] = mock;
  for (const char* s : d.sections) key["config"][s] = At(c, s);
  for (const auto& f : d.files) key["files"].push_back(FileDigest(f));
  for (const auto& u : d.upstream) key["upstream"][u] = StageKey(u, true);
  return Sha256Hex(key.dump());
}

void Pipeline::RequireStage(const std::string& stage) const {
  const auto manifest_path = StageDir(stage) / kManifestFile;
  if (!fs::exists(manifest_path)) {
    throw Error(Errc::kNotFound, "stage '" + stage + "' has not been run (no " +
                                     manifest_path.string() + ")");
  }
  const auto m = ReadJson(manifest_path);
  if (!m.value("complete", false)) {
    throw Error(Errc::kConflict, "stage '" + stage + "' did not complete; rerun it");
  }
  if (m.at("config_hash") != StageKey(stage, true)) {
    throw Error(Errc::kConflict,
                "outputs of stage '" + stage + "' are stale for the current config; rerun it");
  }
  for (const auto& [name, digest] : m.at("outputs").items()) {
    if (FileDigest(StageDir(stage) / name) != digest.get<std::string>()) {
      throw Error(Errc::kConflict, "artifact " + (StageDir(stage) / name).string() +
                                       " changed after stage '" + stage + "' wrote it");
    }
  }
}

Json Pipeline::WriteManifest(const std::string& stage, const std::vector<std::string>& outputs,
                             bool complete, Json extra) const {
  OrderedJson m;
  m["stage"] = stage;
  m["tool_version"] = kToolVersion;
  m["seed"] = seed_;
  m["mock"] = mock_;
  m["config_hash"] = StageKey(stage);
  m["complete"] = complete;
  OrderedJson outs = OrderedJson::object();
  for (const auto& name : outputs) outs[name] = FileDigest(StageDir(stage) / name);
  m["outputs"] = outs;
  if (!extra.empty()) m["details"] = extra;
  WriteJson(StageDir(stage) / kManifestFile, m);
  Json summary = Json::parse(m.dump());
  summary["manifest_sha256"] = Sha256File(StageDir(stage) / kManifestFile);
  return summary;
}

Json Pipeline::Cluster() {
  const auto pairs = corpus::LoadCorpus(Path("corpus"));
  const auto store = corpus::LoadEmbeddings(Path("embeddings"));
  diversity::PointSet points;
  for (const auto& p : pairs) points[p.id] = diversity::JointFeature(p, store);
  diversity::KMeansOptions opt;
  const auto& cc = config_.at("clustering");
  opt.k = cc.at("k").get<int>();
  opt.seed = cc.at("seed").is_null() ? DeriveSeed(seed_, "cluster") : cc.at("seed").get<std::uint64_t>();
  opt.max_iters = cc.at("max_iters").get<int>();
  opt.tol = cc.at("tol").get<double>();
  const auto model = diversity::KMeansFit(points, opt);
  fs::create_directories(StageDir("cluster"));
  WriteJson(StageDir("cluster") / "model.json", diversity::ToJson(model));
  return WriteManifest("cluster", {"model.json"}, true,
                       {{"points", points.size()}, {"k", model.k}, {"inertia", model.inertia}});
}

Json Pipeline::SampleDemos() {
  RequireStage("cluster");
  const auto pairs = corpus::LoadCorpus(Path("corpus"));
  const auto model = diversity::ClusterModelFromJson(ReadJson(StageDir("cluster") / "model.json"));
  const int m = std::min<int>(config_.at("demos").at("m").get<int>(), static_cast<int>(pairs.size()));
  auto set = diversity::SampleDemonstrations(model, pairs, m, DeriveSeed(seed_, "sample-demos"));

  // Every domain needs enough candidates to fill a per-call demonstration
  // block; short domains are topped up with their most complex captions.
  const int per_domain = config_.at("generation").at("demos_per_call").get<int>() /
                         static_cast<int>(corpus::kAllDomains.size());
  std::set<std::string> chosen(set.sample_ids.begin(), set.sample_ids.end());
  std::map<Domain, int> have;
  for (const auto& p : pairs) {
    if (chosen.count(p.id)) ++have[p.domain];
  }
  std::vector<std::string> topped_up;
  for (const auto domain : corpus::kAllDomains) {
    std::vector<const corpus::ImageTextPair*> rest;
    for (const auto& p : pairs) {
      if (p.domain == domain && !chosen.count(p.id)) rest.push_back(&p);
    }
    std::stable_sort(rest.begin(), rest.end(), [](const auto* a, const auto* b) {
      const auto ca = diversity::ComplexityScore(*a), cb = diversity::ComplexityScore(*b);
      return ca != cb ? ca > cb : a->id < b->id;
    });
    for (std::size_t i = 0; have[domain] < per_domain && i < rest.size(); ++i) {
      topped_up.push_back(rest[i]->id);
      ++have[domain];
    }
  }
  OrderedJson j;
  j["sample_ids"] = set.sample_ids;
  j["topped_up"] = topped_up;
  OrderedJson counts = OrderedJson::object();
  for (const auto& [c, n] : set.per_cluster_counts) counts[std::to_string(c)] = n;
  j["per_cluster_counts"] = counts;
  fs::create_directories(StageDir("sample-demos"));
  WriteJson(StageDir("sample-demos") / "candidates.json", j);
  return WriteManifest("sample-demos", {"candidates.json"}, true,
                       {{"candidates", set.sample_ids.size()}, {"topped_up", topped_up.size()}});
}

Json Pipeline::Generate() {
  RequireStage("sample-demos");
  const auto pairs = corpus::LoadCorpus(Path("corpus"));
  const auto tmpl = genclient::PromptTemplate::Load(Template("generation.txt"));
  const auto& gc = config_.at("generation");
  auto backend = MakeBackend(mock_, gc.at("backend"), DeriveSeed(seed_, "mock"));
  auto dispatcher = MakeDispatcher(*backend, gc.at("backend"));
  const int workers = std::max(1, dispatcher->max_inflight());
  const std::string model_id = ModelName(mock_, gc.at("backend"));

  auto prepare = [&](genclient::ChatRequest req, const std::string& seed_key) {
    req.temperature = gc.at("temperature").get<double>();
    req.max_tokens = gc.at("max_tokens").get<int>();
    req.model_id = model_id;
    req.seed = DeriveSeed(seed_, seed_key);
    return req;
  };

  // Demonstration pool: operator-supplied, or bootstrapped from the sampled
  // candidates with a demonstration-free call.
  std::vector<diversity::Demonstration> pool;
  std::string pool_source;
  if (!Path("demo_pool").empty()) {
    ForEachNdjson(Path("demo_pool"), [&](std::size_t, const Json& j) {
      pool.push_back(diversity::DemonstrationFromJson(j));
    });
    pool_source = "file";
  } else {
    pool_source = "bootstrap";
    const auto cand = ReadJson(StageDir("sample-demos") / "candidates.json");
    std::vector<std::string> ids = cand.at("sample_ids").get<std::vector<std::string>>();
    for (const auto& id : cand.at("topped_up")) ids.push_back(id.get<std::string>());
    std::map<std::string, const corpus::ImageTextPair*> by_id;
    for (const auto& p : pairs) by_id[p.id] = &p;
    std::vector<std::optional<diversity::Demonstration>> slots(ids.size());
    genclient::ParallelFor(ids.size(), workers, [&](std::size_t i) {
      const auto& p = *by_id.at(ids[i]);
      const auto req = prepare(genclient::BuildGenerationPrompt(p, {}, tmpl), "bootstrap:" + p.id);
      const auto out = genclient::ParseGeneration(dispatcher->Call(req));
      if (out.usable) slots[i] = diversity::Demonstration{p.id, p.domain, p.ContextText(), RoundsText(out.rounds), true};
    });
    for (auto& s : slots) {
      if (s) pool.push_back(std::move(*s));
    }
  }

  const int per_domain = gc.at("demos_per_call").get<int>() / static_cast<int>(corpus::kAllDomains.size());
  std::vector<std::optional<Generated>> results(pairs.size());
  std::vector<std::string> skipped(pairs.size());
  std::vector<std::string> failed(pairs.size());
  genclient::ParallelFor(pairs.size(), workers, [&](std::size_t i) {
    const auto& p = pairs[i];
    try {
      const auto demos = diversity::PerCallDemos(pool, DeriveSeed(seed_, "demos:" + p.id), per_domain);
      const auto req = prepare(genclient::BuildGenerationPrompt(p, demos, tmpl), "gen:" + p.id);
      const auto raw = dispatcher->Call(req);
      const auto out = genclient::ParseGeneration(raw);
      if (!out.usable) {
        skipped[i] = out.reason;
        return;
      }
      Generated g{p.id, p.image_ref, p.domain, p.caption, out.rounds, {}};
      std::vector<std::string> questions;
      for (const auto& r : out.rounds) questions.push_back(r.question);
      const auto vreq = prepare(genclient::BuildAnswerVariantPrompt(req, raw, questions), "variant:" + p.id);
      const auto alt = genclient::ParseGeneration(dispatcher->Call(vreq));
      if (alt.usable && alt.rounds.size() == out.rounds.size()) {
        bool same = true;
        for (std::size_t r = 0; r < alt.rounds.size(); ++r) same = same && alt.rounds[r].question == questions[r];
        if (same) {
          for (const auto& r : alt.rounds) g.alt_answers.push_back(r.answer);
        }
      }
      results[i] = std::move(g);
    } catch (const Error& e) {
      if (e.code() == Errc::kInsufficientPool || e.code() == Errc::kAuthError) throw;
      failed[i] = std::string(e.name()) + ": " + e.what();
    }
  });

  std::vector<Generated> generated;
  Json skipped_json = Json::array();
  Json failures = Json::array();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (results[i]) generated.push_back(std::move(*results[i]));
    if (!skipped[i].empty()) skipped_json.push_back({{"id", pairs[i].id}, {"reason", skipped[i]}});
    if (!failed[i].empty()) failures.push_back({{"id", pairs[i].id}, {"error", failed[i]}});
  }
  std::sort(generated.begin(), generated.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  // Two candidate answers per question, ready for the annotation service.
  std::vector<Json> tasks;
  for (const auto& g : generated) {
    for (std::size_t r = 0; r < g.alt_answers.size(); ++r) {
      tasks.push_back({{"task_id", g.id + "#" + std::to_string(r)},
                       {"image_id", g.id},
                       {"image_ref", g.image_ref},
                       {"caption", g.caption},
                       {"question", g.rounds[r].question},
                       {"answer_a", g.rounds[r].answer},
                       {"answer_b", g.alt_answers[r]}});
    }
  }

  const auto dir = StageDir("generate");
  fs::create_directories(dir);
  WriteNdjson(dir / "generated.ndjson", generated, [](const Generated& g) { return ToJson(g); });
  WriteNdjson(dir / "annotation_tasks.ndjson", tasks, [](const Json& j) { return j; });
  WriteNdjson(dir / "demo_pool.ndjson", pool, [](const diversity::Demonstration& d) { return diversity::ToJson(d); });
  WriteJson(dir / "skipped.json", OrderedJson::parse(Json{{"skipped", skipped_json}, {"failed", failures}}.dump()));
  auto summary = WriteManifest(
      "generate", {"generated.ndjson", "annotation_tasks.ndjson", "demo_pool.ndjson", "skipped.json"},
      failures.empty(),
      {{"generator", model_id},
       {"records", generated.size()},
       {"skipped", skipped_json.size()},
       {"failed", failures.size()},
       {"demo_pool", pool_source},
       {"demo_pool_size", pool.size()},
       {"temperature", gc.at("temperature")}});
  if (!failures.empty()) {
    throw Error(Errc::kServerError, std::to_string(failures.size()) +
                                        " generation calls failed; see " + (dir / "skipped.json").string());
  }
  return summary;
}

Json Pipeline::Rate() {
  RequireStage("generate");
  const auto generated = LoadGenerated(StageDir("generate") / "generated.ndjson");
  const auto tmpl = genclient::PromptTemplate::Load(Template("rating.txt"));
  const auto& rc = config_.at("rating");
  const auto criteria = rc.at("criteria").get<std::vector<std::string>>();
  auto backend = MakeBackend(mock_, rc.at("backend"), DeriveSeed(seed_, "mock"));
  auto dispatcher = MakeDispatcher(*backend, rc.at("backend"));
  const std::string model_id = ModelName(mock_, rc.at("backend"));

  struct Job {
    const Generated* g;
    std::string question;
    std::string answer;
  };
  std::vector<Job> jobs;
  std::set<std::string> seen;
  for (const auto& g : generated) {
    for (std::size_t r = 0; r < g.rounds.size(); ++r) {
      for (const auto* a : {&g.rounds[r].answer, r < g.alt_answers.size() ? &g.alt_answers[r] : nullptr}) {
        if (a && seen.insert(SampleId(g.id, g.rounds[r].question, *a)).second) {
          jobs.push_back({&g, g.rounds[r].question, *a});
        }
      }
    }
  }
  std::vector<std::optional<preference::ModelRating>> ratings(jobs.size());
  std::vector<std::string> errors(jobs.size());
  genclient::ParallelFor(jobs.size(), std::max(1, dispatcher->max_inflight()), [&](std::size_t i) {
    const auto& job = jobs[i];
    const auto id = SampleId(job.g->id, job.question, job.answer);
    try {
      auto req = genclient::BuildRatingPrompt({job.g->image_ref, job.g->caption, job.question, job.answer},
                                              criteria, tmpl);
      req.temperature = rc.at("temperature").get<double>();
      req.model_id = model_id;
      req.seed = DeriveSeed(seed_, "rate:" + id);
      const int s = genclient::ParseRating(dispatcher->Call(req));
      ratings[i] = preference::ModelRating{id, job.g->id, job.question, job.answer, s, job.g->domain};
    } catch (const Error& e) {
      if (e.code() == Errc::kAuthError) throw;
      errors[i] = std::string(e.name()) + ": " + e.what();
    }
  });
  std::vector<preference::ModelRating> out;
  Json unparseable = Json::array();
  Json failures = Json::array();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (ratings[i]) {
      out.push_back(*ratings[i]);
    } else if (errors[i].rfind("UnparseableRating", 0) == 0) {
      unparseable.push_back({{"sample_id", SampleId(jobs[i].g->id, jobs[i].question, jobs[i].answer)}, {"error", errors[i]}});
    } else {
      failures.push_back({{"sample_id", SampleId(jobs[i].g->id, jobs[i].question, jobs[i].answer)}, {"error", errors[i]}});
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
  const auto dir = StageDir("rate");
  fs::create_directories(dir);
  preference::WriteModelRatings(dir / "ratings.ndjson", out);
  WriteJson(dir / "rating_errors.json",
            OrderedJson::parse(Json{{"unparseable", unparseable}, {"failed", failures}}.dump()));
  auto summary = WriteManifest("rate", {"ratings.ndjson", "rating_errors.json"}, failures.empty(),
                               {{"judge", model_id},
                                {"ratings", out.size()},
                                {"unparseable", unparseable.size()},
                                {"failed", failures.size()}});
  if (!failures.empty()) {
    throw Error(Errc::kServerError, std::to_string(failures.size()) + " rating calls failed");
  }
  return summary;
}

namespace {

struct FeatureContext {
  corpus::EmbeddingStore store;
  std::vector<preference::ModelRating> ratings;
  std::vector<preference::HumanPreference> prefs;
};

void AddText(corpus::EmbeddingStore& store, const std::string& q, const std::string& a,
             const corpus::EmbeddingStore* file_store, std::size_t d_text) {
  const auto key = corpus::TextKey(q, a);
  if (store.Find(key, corpus::EmbeddingKind::kText)) return;
  if (file_store) {
    if (const auto* v = file_store->Find(key, corpus::EmbeddingKind::kText)) {
      store.Insert({key, corpus::EmbeddingKind::kText, *v});
    }
    return;
  }
  store.Insert({key, corpus::EmbeddingKind::kText, selector::HashEmbed(q + "\n" + a, d_text)});
}

}  // namespace

Json Pipeline::TrainSelector() {
  RequireStage("rate");
  FeatureContext fc;
  fc.ratings = preference::LoadModelRatings(StageDir("rate") / "ratings.ndjson");
  if (!Path("human_prefs").empty()) {
    fc.prefs = CollapseRedundant(preference::LoadHumanPreferences(Path("human_prefs")));
  }
  const auto image_store = corpus::LoadEmbeddings(Path("embeddings"));
  for (const auto& v : image_store.ToVectors()) {
    if (v.kind == corpus::EmbeddingKind::kImage) fc.store.Insert(v);
  }
  std::optional<corpus::EmbeddingStore> text_file;
  if (config_.at("features").at("text") == "file") text_file = corpus::LoadEmbeddings(Path("text_embeddings"));
  const auto d_text = config_.at("features").at("d_text").get<std::size_t>();
  const auto* tf = text_file ? &*text_file : nullptr;
  for (const auto& r : fc.ratings) AddText(fc.store, r.question, r.answer, tf, d_text);
  for (const auto& p : fc.prefs) {
    AddText(fc.store, p.question, p.answer_a, tf, d_text);
    AddText(fc.store, p.question, p.answer_b, tf, d_text);
  }
  const selector::Featurizer featurize(fc.store);
  const preference::FeatureFn fn = [&](const preference::SampleRef& s) { return featurize(s); };

  const double holdout = config_.at("selector").at("holdout_fraction").get<double>();
  const auto split_seed = DeriveSeed(seed_, "split");
  std::vector<preference::ModelRating> train_ratings;
  for (const auto& r : fc.ratings) {
    if (!InHoldout(split_seed, r.image_id, holdout)) train_ratings.push_back(r);
  }
  std::vector<preference::HumanPreference> train_prefs;
  for (const auto& p : fc.prefs) {
    if (!InHoldout(split_seed, p.image_id, holdout)) train_prefs.push_back(p);
  }
  auto pairing = preference::pairs_from_model(train_ratings, fn, DeriveSeed(seed_, "pairs"));
  auto pairs = preference::pairs_from_human(train_prefs, fn);
  const auto human_pairs = pairs.size();
  pairs.insert(pairs.end(), pairing.pairs.begin(), pairing.pairs.end());

  Json tc = config_.at("selector");
  tc.erase("holdout_fraction");
  if (tc["seed"].is_null()) tc["seed"] = DeriveSeed(seed_, "train");
  const auto cfg = selector::TrainConfigFromJson(tc);
  const auto result = selector::train(pairs, cfg, featurize.spec().d_in());

  // Score every generated sample, rated or not.
  const auto generated = LoadGenerated(StageDir("generate") / "generated.ndjson");
  std::vector<selector::ScoreItem> items;
  std::set<std::string> ids;
  for (const auto& g : generated) {
    for (std::size_t r = 0; r < g.rounds.size(); ++r) {
      for (const auto* a : {&g.rounds[r].answer, r < g.alt_answers.size() ? &g.alt_answers[r] : nullptr}) {
        if (!a) continue;
        const auto id = SampleId(g.id, g.rounds[r].question, *a);
        if (!ids.insert(id).second) continue;
        AddText(fc.store, g.rounds[r].question, *a, tf, d_text);
        items.push_back({id, {g.id, g.rounds[r].question, *a}});
      }
    }
  }
  const auto scored = selector::score(result.model, items, fn, 4);

  const auto dir = StageDir("train-selector");
  fs::create_directories(dir);
  selector::SaveCheckpoint(dir / "checkpoint.json", {result.model, featurize.spec(), cfg});
  WriteJson(dir / "train_report.json", selector::ToJson(result.report));
  OrderedJson scores = OrderedJson::object();
  for (const auto& [id, s] : scored.scores) scores[id] = s;
  WriteJson(dir / "scores.json", scores);
  std::vector<std::string> held;
  for (const auto& r : fc.ratings) {
    if (InHoldout(split_seed, r.image_id, holdout)) held.push_back(r.sample_id);
  }
  for (const auto& p : fc.prefs) {
    if (InHoldout(split_seed, p.image_id, holdout)) {
      held.push_back(p.SampleA());
      held.push_back(p.SampleB());
    }
  }
  std::sort(held.begin(), held.end());
  held.erase(std::unique(held.begin(), held.end()), held.end());
  WriteJson(dir / "holdout.json", held);
  return WriteManifest("train-selector", {"checkpoint.json", "train_report.json", "scores.json", "holdout.json"},
                       true,
                       {{"human_pairs", human_pairs},
                        {"model_pairs", pairing.pairs.size()},
                        {"ties_dropped", pairing.ties_dropped},
                        {"scored", scored.scores.size()},
                        {"missing_embeddings", scored.missing},
                        {"holdout_samples", held.size()},
                        {"final_loss", result.report.epochs.empty() ? result.report.initial.mean_loss
                                                                    : result.report.epochs.back().mean_loss}});
}

namespace {

struct Labeled {
  ranking::Scores scores;
  ranking::Labels labels;
  std::vector<ranking::OrderedPair> pairs;
};

// Holdout scores, labels and ordered pairs for evaluation.
Labeled HoldoutLabels(const fs::path& train_dir, const fs::path& ratings_path,
                      const fs::path& prefs_path, int threshold, std::uint64_t seed) {
  Labeled out;
  const auto all_scores = ReadJson(train_dir / "scores.json").get<std::map<std::string, double>>();
  const auto held_ids = ReadJson(train_dir / "holdout.json").get<std::vector<std::string>>();
  const std::set<std::string> held(held_ids.begin(), held_ids.end());
  std::vector<preference::ModelRating> ratings;
  for (const auto& r : preference::LoadModelRatings(ratings_path)) {
    if (held.count(r.sample_id)) ratings.push_back(r);
  }
  std::vector<preference::HumanPreference> prefs;
  if (!prefs_path.empty()) {
    for (const auto& p : CollapseRedundant(preference::LoadHumanPreferences(prefs_path))) {
      if (held.count(p.SampleA())) prefs.push_back(p);
    }
  }
  for (const auto& [id, label] : preference::derive_binary_labels(prefs, ratings, threshold)) {
    out.labels[id] = label;
  }
  for (const auto& id : held) {
    if (auto it = all_scores.find(id); it != all_scores.end()) out.scores[id] = it->second;
  }
  // Ordered pairs: the same seeded matching as training, by rating, plus
  // decided human annotations.
  const preference::FeatureFn none = [](const preference::SampleRef&) { return Eigen::VectorXd(); };
  for (const auto& p : preference::pairs_from_model(ratings, none, seed).pairs) {
    out.pairs.push_back(p.z_i == 1 ? ranking::OrderedPair{p.id_i, p.id_j} : ranking::OrderedPair{p.id_j, p.id_i});
  }
  for (const auto& p : prefs) {
    const auto c = p.EffectiveChoice();
    if (c == preference::Choice::kFirst) out.pairs.push_back({p.SampleA(), p.SampleB()});
    if (c == preference::Choice::kSecond) out.pairs.push_back({p.SampleB(), p.SampleA()});
  }
  return out;
}

}  // namespace

Json Pipeline::EvalSelector() {
  RequireStage("train-selector");
  const auto data = HoldoutLabels(StageDir("train-selector"), StageDir("rate") / "ratings.ndjson",
                                  Path("human_prefs"), config_.at("labels").at("threshold").get<int>(),
                                  DeriveSeed(seed_, "eval-pairs"));
  const auto metrics = ranking::evaluate(data.scores, data.labels, data.pairs);
  OrderedJson report = ranking::ToJson(metrics);
  report["samples"] = data.labels.size();
  report["pairs"] = data.pairs.size();
  fs::create_directories(StageDir("eval-selector"));
  WriteJson(StageDir("eval-selector") / "metrics.json", report);
  return WriteManifest("eval-selector", {"metrics.json"}, true, Json::parse(report.dump()));
}

Json Pipeline::Curves() {
  RequireStage("train-selector");
  const auto data = HoldoutLabels(StageDir("train-selector"), StageDir("rate") / "ratings.ndjson",
                                  Path("human_prefs"), config_.at("labels").at("threshold").get<int>(),
                                  DeriveSeed(seed_, "eval-pairs"));
  ranking::Scores labeled_scores;
  for (const auto& [id, label] : data.labels) {
    if (auto it = data.scores.find(id); it != data.scores.end()) labeled_scores[id] = it->second;
  }
  const auto curve = ranking::pk_f1_curve(ranking::JoinLabels(labeled_scores, data.labels));
  const auto& cc = config_.at("curves");
  ranking::CriticalOptions opt{cc.at("plateau_eps").get<double>(), cc.at("plateau_window").get<std::size_t>()};
  auto detected = ranking::detect_critical(curve, opt);
  const auto manual = cc.at("percentiles").get<std::vector<double>>();
  OrderedJson j;
  j["curve"] = OrderedJson::array();
  for (const auto& p : curve) j["curve"].push_back(ranking::ToJson(p));
  j["detected"] = detected;
  j["critical_percentiles"] = manual.empty() ? detected : manual;
  const auto dir = StageDir("curves");
  fs::create_directories(dir);
  WriteJson(dir / "curves.json", j);
  WriteTextFile(dir / "curve.csv", ranking::CurveCsv(curve));
  return WriteManifest("curves", {"curves.json", "curve.csv"}, true,
                       {{"critical_percentiles", j["critical_percentiles"]}});
}

Json Pipeline::Select() {
  RequireStage("train-selector");
  RequireStage("cluster");
  const auto& pj = config_.at("selection").at("percentile");
  double p = 0;
  std::vector<ranking::CurvePoint> curve;
  std::vector<double> critical;
  if (pj.is_string()) {
    RequireStage("curves");
    const auto cj = ReadJson(StageDir("curves") / "curves.json");
    critical = cj.at("critical_percentiles").get<std::vector<double>>();
    if (critical.empty()) {
      throw Error(Errc::kConfigError, "selection.percentile is 'auto' but no critical percentile was found");
    }
    for (const auto& c : cj.at("curve")) {
      curve.push_back({c.at("k").get<double>(), c.at("precision").get<double>(), c.at("recall").get<double>(),
                       c.at("f1").get<double>()});
    }
    // Of the critical points, the one with the highest F1.
    p = critical.front();
    double best = -1;
    for (double c : critical) {
      for (const auto& pt : curve) {
        if (std::abs(pt.k_percent - c) < 1e-9 && pt.f1 > best) {
          best = pt.f1;
          p = c;
        }
      }
    }
  } else {
    p = pj.get<double>();
  }
  const auto sample_scores = ReadJson(StageDir("train-selector") / "scores.json").get<std::map<std::string, double>>();
  const auto generated = LoadGenerated(StageDir("generate") / "generated.ndjson");
  const auto model = diversity::ClusterModelFromJson(ReadJson(StageDir("cluster") / "model.json"));
  ranking::Scores record_scores;
  std::map<std::string, int> clusters;
  for (const auto& g : generated) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& r : g.rounds) {
      if (auto it = sample_scores.find(SampleId(g.id, r.question, r.answer)); it != sample_scores.end()) {
        sum += it->second;
        ++n;
      }
    }
    if (n == 0) continue;
    record_scores[g.id] = sum / static_cast<double>(n);
    clusters[g.id] = model.assignments.at(g.id);
  }
  auto report = ranking::select_balanced(record_scores, clusters, p);
  report.curve = curve;
  report.critical_percentiles = critical;
  fs::create_directories(StageDir("select"));
  WriteJson(StageDir("select") / "selection.json", ranking::ToJson(report));
  return WriteManifest("select", {"selection.json"}, true,
                       {{"percentile", p}, {"selected", report.selected_ids.size()}, {"candidates", record_scores.size()}});
}

Json Pipeline::Emit() {
  RequireStage("select");
  RequireStage("generate");
  const auto sel = ReadJson(StageDir("select") / "selection.json");
  const auto ids = sel.at("selected_ids").get<std::vector<std::string>>();
  const std::set<std::string> chosen(ids.begin(), ids.end());
  const auto gen_manifest = ReadJson(StageDir("generate") / kManifestFile);
  std::vector<corpus::InstructionRecord> records;
  for (const auto& g : LoadGenerated(StageDir("generate") / "generated.ndjson")) {
    if (!chosen.count(g.id)) continue;
    std::vector<std::pair<std::string, std::string>> rounds;
    for (const auto& r : g.rounds) rounds.emplace_back(r.question, r.answer);
    records.push_back(corpus::MakeRecord(g.id, g.image_ref, g.domain, rounds));
  }
  Json provenance = {{"generator", gen_manifest.at("details").at("generator")},
                     {"demo_pool", gen_manifest.at("details").at("demo_pool")},
                     {"seed", seed_},
                     {"selection_percentile", sel.at("percentile")},
                     {"config_hash", StageKey("emit")},
                     {"tool_version", kToolVersion}};
  const auto dir = StageDir("emit");
  fs::create_directories(dir);
  const auto manifest = corpus::WriteDataset(records, dir / "dataset.json",
                                             config_.at("emit").at("name").get<std::string>(), provenance);
  WriteJson(dir / "manifest.json", corpus::ToJson(manifest));
  std::map<std::string, std::size_t> per_domain;
  for (const auto& r : records) ++per_domain[std::string(corpus::DomainName(r.domain))];
  auto summary = WriteManifest("emit", {"dataset.json", "manifest.json"}, true,
                               {{"records", records.size()}, {"per_domain", per_domain}});
  summary["dataset_manifest_sha256"] = Sha256File(dir / "manifest.json");
  return summary;
}

namespace {

std::vector<evalharness::EvalItem> LoadEval(const fs::path& items_path, const fs::path& responses_path,
                                            const EvalFilter& filter) {
  if (items_path.empty()) throw Error(Errc::kConfigError, "paths.eval_items is required");
  auto items = evalharness::LoadEvalItems(items_path);
  if (!responses_path.empty()) evalharness::MergeResponses(items, evalharness::LoadResponses(responses_path));
  std::optional<evalharness::QuestionType> type;
  std::optional<Domain> domain;
  if (filter.question_type) {
    type = evalharness::ParseQuestionType(*filter.question_type);
    if (!type) throw Error(Errc::kInvalidArgument, "unknown question type '" + *filter.question_type + "'");
  }
  if (filter.domain) {
    domain = corpus::ParseDomain(*filter.domain);
    if (!domain) throw Error(Errc::kInvalidArgument, "unknown domain '" + *filter.domain + "'");
  }
  return evalharness::FilterItems(items, type, domain);
}

}  // namespace

Json Pipeline::EvalSummary(const std::string& stage, const Json& report, const std::string& file) {
  fs::create_directories(StageDir(stage));
  WriteJson(StageDir(stage) / file, OrderedJson::parse(report.dump()));
  return WriteManifest(stage, {file}, true);
}

Json Pipeline::JudgeWinrate(const std::string& a, const std::string& b, const EvalFilter& filter) {
  const auto items = LoadEval(Path("eval_items"), Path("responses"), filter);
  const auto& judge = config_.at("eval").at("judge");
  auto backend = MakeBackend(mock_, judge, DeriveSeed(seed_, "mock"));
  auto dispatcher = MakeDispatcher(*backend, judge);
  const auto tmpl = genclient::PromptTemplate::Load(Template("winrate.txt"));
  const auto report = evalharness::win_rate(items, a, b, *dispatcher, tmpl, DeriveSeed(seed_, "winrate"),
                                            config_.at("eval").at("workers").get<int>());
  auto summary = EvalSummary("judge-winrate", Json::parse(evalharness::ToJson(report).dump()), "winrate.json");
  summary["win_rate_a"] = report.win_rate_a ? Json(*report.win_rate_a) : Json(nullptr);
  return summary;
}

Json Pipeline::ScoreChat(const std::string& model, const EvalFilter& filter) {
  const auto items = LoadEval(Path("eval_items"), Path("responses"), filter);
  const auto& judge = config_.at("eval").at("judge");
  auto backend = MakeBackend(mock_, judge, DeriveSeed(seed_, "mock"));
  auto dispatcher = MakeDispatcher(*backend, judge);
  const auto tmpl = genclient::PromptTemplate::Load(Template("chat_score.txt"));
  const auto report = evalharness::score_open_chat(items, model, *dispatcher, tmpl,
                                                   config_.at("eval").at("workers").get<int>());
  auto summary = EvalSummary("score-chat", Json::parse(evalharness::ToJson(report).dump()), "chat_scores.json");
  summary["overall"] = report.overall.mean;
  return summary;
}

Json Pipeline::VqaEval(const std::string& model, const EvalFilter& filter) {
  const auto items = LoadEval(Path("eval_items"), Path("responses"), filter);
  const auto report = evalharness::vqa_evaluate(items, model);
  return EvalSummary("vqa-eval", Json::parse(evalharness::ToJson(report).dump()), "vqa.json");
}

void WriteSynthCorpus(const fs::path& dir, const SynthOptions& options) {
  if (options.per_domain < 1 || options.dim < 2) {
    throw Error(Errc::kInvalidArgument, "per_domain must be >= 1 and dim >= 2");
  }
  static const std::map<Domain, std::vector<std::string>> kWords = {
      {Domain::kCXR, {"opacity", "effusion", "cardiomegaly", "pneumothorax", "consolidation", "hilum"}},
      {Domain::kMRI, {"lesion", "hyperintensity", "edema", "enhancement", "ventricle", "cortex"}},
      {Domain::kHistology, {"nuclei", "stroma", "gland", "infiltrate", "mitosis", "necrosis"}},
      {Domain::kGross, {"mass", "capsule", "hemorrhage", "surface", "nodule", "cyst"}},
      {Domain::kCT, {"attenuation", "lymph node", "contrast", "calcification", "fracture", "density"}}};
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<corpus::ImageTextPair> pairs;
  std::vector<corpus::EmbeddingVector> vectors;
  std::map<Domain, std::vector<double>> centers;
  for (const auto domain : corpus::kAllDomains) {
    std::vector<double> c(options.dim);
    for (auto& x : c) x = std::normal_distribution<double>(0.0, 1.0)(rng);
    centers[domain] = c;
  }
  for (const auto domain : corpus::kAllDomains) {
    const auto& words = kWords.at(domain);
    for (int i = 0; i < options.per_domain; ++i) {
      corpus::ImageTextPair p;
      p.id = std::string(corpus::DomainName(domain)) + "-" + std::to_string(i);
      p.image_ref = "images/" + p.id + ".png";
      p.domain = domain;
      const auto n_words = 2 + rng() % 5;
      p.caption = "Figure " + std::to_string(i + 1) + ".";
      for (std::size_t w = 0; w < n_words; ++w) {
        p.caption += " " + std::string(w == 0 ? "Shows" : "with") + " " + words[rng() % words.size()];
      }
      p.caption += ".";
      const auto n_mentions = rng() % 3;
      for (std::size_t m = 0; m < n_mentions; ++m) {
        p.inline_mentions.push_back("As seen in Figure " + std::to_string(i + 1) + ", the " +
                                    words[rng() % words.size()] + " is evident.");
      }
      for (const auto kind : {corpus::EmbeddingKind::kImage, corpus::EmbeddingKind::kText}) {
        std::vector<double> v = centers[domain];
        for (auto& x : v) x += noise(rng);
        vectors.push_back({p.id, kind, v});
      }
      pairs.push_back(std::move(p));
    }
  }
  fs::create_directories(dir);
  corpus::WriteCorpus(dir / "corpus.ndjson", pairs);
  corpus::WriteEmbeddings(dir / "embeddings.ndjson", vectors);
  OrderedJson config;
  config["paths"]["corpus"] = (dir / "corpus.ndjson").string();
  config["paths"]["embeddings"] = (dir / "embeddings.ndjson").string();
  config["clustering"]["k"] = 10;
  WriteJson(dir / "config.json", config);
}

}  // namespace curate::pipeline
