#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <thread>

#include "curate/annotsvc.hpp"
#include "curate/error.hpp"
#include "curate/pipeline.hpp"

namespace fs = std::filesystem;
using curate::Errc;
using curate::Error;
using curate::Json;
namespace pl = curate::pipeline;

namespace {

void PrintError(std::string_view name, const std::string& message, const std::string& command) {
  Json j = {{"error", name}, {"message", message}};
  if (!command.empty()) j["command"] = command;
  std::cerr << j.dump() << std::endl;
}

std::vector<std::string> SplitCsv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

int Serve(const Json& config, const std::string& host, int port, const std::string& data_dir,
          const std::string& ui_dir, const std::string& image_dir, const std::string& token,
          std::int64_t lease_seconds, int redundancy, const std::string& import_path) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  curate::annotsvc::StoreOptions so;
  so.data_dir = data_dir.empty() ? fs::path(config.at("paths").at("out_dir").get<std::string>()) / "annotate-serve"
                                 : fs::path(data_dir);
  so.lease_seconds = lease_seconds;
  so.redundancy = redundancy;
  so.seed = config.at("seed").get<std::uint64_t>();
  curate::annotsvc::Store store(so);
  if (!import_path.empty()) {
    std::vector<curate::annotsvc::TaskInput> tasks;
    curate::ForEachNdjson(import_path, [&](std::size_t, const Json& j) {
      tasks.push_back(curate::annotsvc::TaskInputFromJson(j));
    });
    store.Import(tasks);
  }
  curate::annotsvc::Server server(store, {token, ui_dir, image_dir});
  const int bound = server.Bind(host, port);
  if (bound < 0) throw Error(Errc::kIoError, "cannot bind " + host + ":" + std::to_string(port));
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.Stop();
  });
  std::cout << Json{{"listening", host + ":" + std::to_string(bound)}, {"data_dir", so.data_dir.string()}}.dump()
            << std::endl;
  server.Listen();
  // Listen returned without a signal (e.g. socket error): release the waiter.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string command;
  pl::SplitArgs split;
  try {
    split = pl::ExtractOverrides(args);
  } catch (const Error& e) {
    PrintError(e.name(), e.what(), "");
    return 2;
  }

  CLI::App app{"Biomedical instruction data curation pipeline"};
  app.require_subcommand(1);
  // Global flags may also follow the subcommand: `curate generate --mock`.
  app.fallthrough();
  std::string config_path;
  bool mock = false;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_flag("--mock", mock, "Use the deterministic offline backend for every remote model");
  app.add_option("--seed", seed, "Base seed");
  app.add_option("--out", out_dir, "Output directory");
  app.footer("Any config field can be set with --<dotted.name> VALUE, e.g. --clustering.k 8");

  for (const char* name : {"cluster", "sample-demos", "generate", "rate", "train-selector", "eval-selector",
                           "emit"}) {
    app.add_subcommand(name);
  }
  auto* curves = app.add_subcommand("curves", "Precision@K / F1@K curves and critical percentiles");
  std::string percentiles;
  curves->add_option("--percentiles", percentiles, "Comma-separated override of the detected percentiles");
  auto* select = app.add_subcommand("select", "Cluster-balanced top-percentile selection");
  std::string percentile;
  select->add_option("--percentile", percentile, "Percentile in [0,100] or 'auto'");

  std::string items, responses, question_type, domain, models, model;
  auto eval_flags = [&](CLI::App* sub) {
    sub->add_option("--items", items, "Evaluation items (NDJSON)");
    sub->add_option("--responses", responses, "Model responses (NDJSON)");
    sub->add_option("--question-type", question_type, "Only this question type");
    sub->add_option("--domain", domain, "Only this domain");
  };
  auto* winrate = app.add_subcommand("judge-winrate", "Pairwise judged win rate of two models");
  eval_flags(winrate);
  winrate->add_option("--models", models, "A,B")->required();
  auto* chat = app.add_subcommand("score-chat", "Judge-scored open chat relative to the reference");
  eval_flags(chat);
  chat->add_option("--model", model, "Candidate model")->required();
  auto* vqa = app.add_subcommand("vqa-eval", "Closed accuracy and open recall");
  eval_flags(vqa);
  vqa->add_option("--model", model, "Candidate model")->required();

  auto* serve = app.add_subcommand("annotate-serve", "Run the annotation service");
  std::string host = "127.0.0.1", data_dir, ui_dir, image_dir, token, import_path;
  int port = 8080, redundancy = 1;
  std::int64_t lease_seconds = 600;
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--data-dir", data_dir);
  serve->add_option("--ui-dir", ui_dir);
  serve->add_option("--image-dir", image_dir);
  serve->add_option("--token", token, "Shared X-Annotator-Token value");
  serve->add_option("--lease-seconds", lease_seconds)->check(CLI::PositiveNumber);
  serve->add_option("--redundancy", redundancy)->check(CLI::PositiveNumber);
  serve->add_option("--import", import_path, "Task NDJSON to import before serving")->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth-corpus", "Write a synthetic corpus for offline runs");
  std::string synth_dir = "synth";
  pl::SynthOptions synth_opt;
  synth->add_option("--dir", synth_dir);
  synth->add_option("--per-domain", synth_opt.per_domain);
  synth->add_option("--dim", synth_opt.dim);

  try {
    std::vector<std::string> reversed(split.rest.rbegin(), split.rest.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    PrintError("UsageError", e.what(), "");
    return 2;
  }
  command = app.get_subcommands().front()->get_name();

  try {
    if (command == "synth-corpus") {
      synth_opt.seed = seed.value_or(0);
      pl::WriteSynthCorpus(synth_dir, synth_opt);
      std::cout << Json{{"dir", synth_dir}}.dump() << std::endl;
      return 0;
    }
    Json config = config_path.empty() ? pl::DefaultConfig() : pl::LoadConfig(config_path);
    for (const auto& [key, value] : split.overrides) pl::ApplyOverride(config, key, value);
    if (seed) config["seed"] = *seed;
    if (!out_dir.empty()) config["paths"]["out_dir"] = out_dir;
    if (!percentile.empty()) pl::ApplyOverride(config, "selection.percentile", percentile);
    if (!percentiles.empty()) {
      Json list = Json::array();
      for (const auto& p : SplitCsv(percentiles)) list.push_back(std::stod(p));
      config["curves"]["percentiles"] = list;
    }
    if (!items.empty()) config["paths"]["eval_items"] = items;
    if (!responses.empty()) config["paths"]["responses"] = responses;
    pl::ValidateConfig(config);

    if (command == "annotate-serve") {
      return Serve(config, host, port, data_dir, ui_dir, image_dir, token, lease_seconds, redundancy,
                   import_path);
    }

    pl::Pipeline pipeline(config, mock);
    pl::EvalFilter filter;
    if (!question_type.empty()) filter.question_type = question_type;
    if (!domain.empty()) filter.domain = domain;
    Json summary;
    if (command == "cluster") summary = pipeline.Cluster();
    else if (command == "sample-demos") summary = pipeline.SampleDemos();
    else if (command == "generate") summary = pipeline.Generate();
    else if (command == "rate") summary = pipeline.Rate();
    else if (command == "train-selector") summary = pipeline.TrainSelector();
    else if (command == "eval-selector") summary = pipeline.EvalSelector();
    else if (command == "curves") summary = pipeline.Curves();
    else if (command == "select") summary = pipeline.Select();
    else if (command == "emit") summary = pipeline.Emit();
    else if (command == "judge-winrate") {
      const auto names = SplitCsv(models);
      if (names.size() != 2) throw Error(Errc::kInvalidArgument, "--models takes exactly two names: A,B");
      summary = pipeline.JudgeWinrate(names[0], names[1], filter);
    } else if (command == "score-chat") summary = pipeline.ScoreChat(model, filter);
    else if (command == "vqa-eval") summary = pipeline.VqaEval(model, filter);
    std::cout << summary.dump() << std::endl;
    return 0;
  } catch (const Error& e) {
    PrintError(e.name(), e.what(), command);
  } catch (const Json::exception& e) {
    PrintError("MalformedRecord", e.what(), command);
  } catch (const std::exception& e) {
    PrintError("InternalError", e.what(), command);
  }
  return 1;
}
