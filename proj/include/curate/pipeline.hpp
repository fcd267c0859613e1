#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "curate/ndjson.hpp"

namespace curate::pipeline {

inline constexpr const char* kToolVersion = "0.1.0";

/// Every key a config file may set, with its default value.
Json DefaultConfig();

/// Deep-merges `patch` into `base`. Unknown keys are ConfigError.
void MergeConfig(Json& base, const Json& patch, const std::string& prefix = "");

/// Default config overlaid with the JSON file at `path`.
Json LoadConfig(const std::filesystem::path& path);

/// Sets the dotted key (e.g. "clustering.k") from a command-line string. The
/// value is read as JSON when it parses, otherwise as a plain string.
void ApplyOverride(Json& config, std::string_view dotted, std::string_view value);

/// Splits "--a.b=v" / "--a.b v" arguments out of argv. Everything else is
/// returned untouched, in order.
struct SplitArgs {
  std::vector<std::string> rest;
  std::vector<std::pair<std::string, std::string>> overrides;
};
SplitArgs ExtractOverrides(const std::vector<std::string>& args);

/// Structural checks on value types and ranges. Throws ConfigError.
void ValidateConfig(const Json& config);

struct EvalFilter {
  std::optional<std::string> question_type;
  std::optional<std::string> domain;
};

/// One pipeline run over a fixed config. Each stage method reads its inputs,
/// writes into <out_dir>/<stage>/ together with run_manifest.json, and
/// returns a short JSON summary.
class Pipeline {
 public:
  Pipeline(Json config, bool mock);

  Json Cluster();
  Json SampleDemos();
  Json Generate();
  Json Rate();
  Json TrainSelector();
  Json EvalSelector();
  Json Curves();
  Json Select();
  Json Emit();

  Json JudgeWinrate(const std::string& model_a, const std::string& model_b,
                    const EvalFilter& filter);
  Json ScoreChat(const std::string& model, const EvalFilter& filter);
  Json VqaEval(const std::string& model, const EvalFilter& filter);

  /// Content address of a stage: hash of its config sections, input file
  /// contents, and the keys of the stages it reads from. With `upstream`, the
  /// backend mode is the one recorded by that stage's run, not this run's flag.
  std::string StageKey(const std::string& stage, bool upstream = false) const;
  std::filesystem::path StageDir(const std::string& stage) const;

  const Json& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::filesystem::path Path(const char* key) const;
  std::filesystem::path Template(const char* name) const;
  /// Throws unless `stage` has a complete manifest whose key matches the
  /// current config and whose outputs are unchanged on disk.
  void RequireStage(const std::string& stage) const;
  Json WriteManifest(const std::string& stage, const std::vector<std::string>& outputs,
                     bool complete = true, Json extra = Json::object()) const;
  Json EvalSummary(const std::string& stage, const Json& report, const std::string& file);

  Json config_;
  bool mock_;
  std::uint64_t seed_;
  std::filesystem::path out_dir_;
};

/// Synthetic corpus with clustered embeddings, for offline runs.
struct SynthOptions {
  int per_domain = 20;
  std::size_t dim = 32;
  std::uint64_t seed = 0;
};
/// Writes corpus.ndjson, embeddings.ndjson and config.json into `dir`.
void WriteSynthCorpus(const std::filesystem::path& dir, const SynthOptions& options);

}  // namespace curate::pipeline
