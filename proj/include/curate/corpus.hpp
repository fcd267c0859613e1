#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "curate/ndjson.hpp"

namespace curate::corpus {

enum class Domain { kCXR, kMRI, kHistology, kGross, kCT };

inline constexpr std::array<Domain, 5> kAllDomains = {
    Domain::kCXR, Domain::kMRI, Domain::kHistology, Domain::kGross, Domain::kCT};

std::string_view DomainName(Domain domain);
std::optional<Domain> ParseDomain(std::string_view name);

/// One image-caption sample of the source corpus.
struct ImageTextPair {
  std::string id;
  std::string image_ref;
  std::string caption;
  std::vector<std::string> inline_mentions;
  Domain domain = Domain::kCXR;
  /// Input keys outside the schema, carried through untouched.
  Json extra = Json::object();

  /// Caption followed by the inline mentions, one per line.
  std::string ContextText() const;
};

/// Reads a corpus NDJSON file. Throws MalformedRecord("line N: reason") or
/// DuplicateId; never repairs input.
std::vector<ImageTextPair> LoadCorpus(const std::filesystem::path& path);
void WriteCorpus(const std::filesystem::path& path,
                 const std::vector<ImageTextPair>& pairs);
Json ToJson(const ImageTextPair& pair);

enum class EmbeddingKind { kImage, kText };

std::string_view KindName(EmbeddingKind kind);

struct EmbeddingVector {
  std::string id;
  EmbeddingKind kind = EmbeddingKind::kImage;
  std::vector<double> vector;
};

/// Precomputed encoder features keyed by (id, kind). Each kind has a single
/// dimension; a file holds a single dimension for all its vectors.
class EmbeddingStore {
 public:
  /// Throws DimensionMismatch, NonFiniteComponent or DuplicateId.
  void Insert(EmbeddingVector embedding);
  /// Union of two stores; same rules as Insert.
  void Merge(const EmbeddingStore& other);

  const std::vector<double>* Find(std::string_view id, EmbeddingKind kind) const;
  /// Throws MissingEmbedding("id", kind).
  const std::vector<double>& Get(std::string_view id, EmbeddingKind kind) const;

  /// 0 when no vector of that kind is present.
  std::size_t dimension(EmbeddingKind kind) const;
  std::size_t size() const { return vectors_.size(); }

  std::vector<EmbeddingVector> ToVectors() const;

 private:
  using Key = std::pair<std::string, EmbeddingKind>;
  std::map<Key, std::vector<double>, std::less<>> vectors_;
  std::array<std::size_t, 2> dims_{0, 0};
};

/// Loads an embeddings NDJSON file. All vectors in one file must share the
/// same dimension d > 0 regardless of kind.
EmbeddingStore LoadEmbeddings(const std::filesystem::path& path);
void WriteEmbeddings(const std::filesystem::path& path,
                     const std::vector<EmbeddingVector>& vectors);

/// Content key under which the text embedding of a question/answer sample is
/// stored.
std::string TextKey(std::string_view question, std::string_view answer);
/// Identity of a rated (image, question, answer) sample.
std::string SampleKey(std::string_view image_id, std::string_view question,
                      std::string_view answer);

enum class Role { kHuman, kAssistant };

struct Turn {
  Role role = Role::kHuman;
  std::string text;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct InstructionRecord {
  std::string id;
  std::string image;
  Domain domain = Domain::kCXR;
  std::vector<Turn> conversations;

  friend bool operator==(const InstructionRecord&, const InstructionRecord&) = default;
};

inline constexpr std::size_t kMinTurns = 2;
inline constexpr std::size_t kMaxTurns = 12;

/// Returns the first violated invariant, or nullopt when valid.
std::optional<std::string> ValidateRecord(const InstructionRecord& record);

/// Builds a record from question/answer rounds.
InstructionRecord MakeRecord(std::string id, std::string image, Domain domain,
                             const std::vector<std::pair<std::string, std::string>>& rounds);

struct DatasetManifest {
  std::string name;
  std::size_t size = 0;
  std::vector<std::string> record_ids;
  Json provenance = Json::object();
};

OrderedJson ToJson(const DatasetManifest& manifest);
DatasetManifest ManifestFromJson(const Json& json);

OrderedJson ToJson(const InstructionRecord& record);

/// Writes the released-dataset JSON array (keys id, image, domain,
/// conversations in that order). Throws InvalidRecord before touching the
/// file if any record is invalid or an id repeats.
DatasetManifest WriteDataset(const std::vector<InstructionRecord>& records,
                             const std::filesystem::path& path,
                             std::string name = "dataset",
                             Json provenance = Json::object());

std::vector<InstructionRecord> LoadDataset(const std::filesystem::path& path);

}  // namespace curate::corpus
