#include "curate/corpus.hpp"

#include <cmath>
#include <set>

#include "curate/error.hpp"
#include "curate/hash.hpp"

namespace curate::corpus {
namespace {

constexpr std::array<std::string_view, 5> kDomainNames = {"CXR", "MRI", "Histology",
                                                          "Gross", "CT"};

[[noreturn]] void Malformed(std::size_t line_no, const std::string& reason) {
  throw Error(Errc::kMalformedRecord, "line " + std::to_string(line_no) + ": " + reason);
}

std::string RequireString(const Json& obj, const char* key, std::size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end()) Malformed(line_no, std::string("missing field '") + key + "'");
  if (!it->is_string()) Malformed(line_no, std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

}  // namespace

std::string_view DomainName(Domain domain) {
  return kDomainNames[static_cast<std::size_t>(domain)];
}

std::optional<Domain> ParseDomain(std::string_view name) {
  for (std::size_t i = 0; i < kDomainNames.size(); ++i) {
    if (kDomainNames[i] == name) return static_cast<Domain>(i);
  }
  return std::nullopt;
}

std::string ImageTextPair::ContextText() const {
  std::string text = caption;
  for (const auto& mention : inline_mentions) {
    text.push_back('\n');
    text += mention;
  }
  return text;
}

std::vector<ImageTextPair> LoadCorpus(const std::filesystem::path& path) {
  static const std::set<std::string> kKnown = {"id", "image_ref", "caption",
                                               "inline_mentions", "domain"};
  std::vector<ImageTextPair> pairs;
  std::set<std::string> seen;
  ForEachNdjson(path, [&](std::size_t line_no, const Json& obj) {
    ImageTextPair pair;
    pair.id = RequireString(obj, "id", line_no);
    if (pair.id.empty()) Malformed(line_no, "empty id");
    pair.image_ref = RequireString(obj, "image_ref", line_no);
    pair.caption = RequireString(obj, "caption", line_no);
    if (pair.caption.empty()) Malformed(line_no, "empty caption");
    auto mentions = obj.find("inline_mentions");
    if (mentions == obj.end()) Malformed(line_no, "missing field 'inline_mentions'");
    if (!mentions->is_array()) Malformed(line_no, "field 'inline_mentions' must be an array");
    for (const auto& m : *mentions) {
      if (!m.is_string()) Malformed(line_no, "inline mention must be a string");
      pair.inline_mentions.push_back(m.get<std::string>());
    }
    const auto domain = ParseDomain(RequireString(obj, "domain", line_no));
    if (!domain) Malformed(line_no, "unknown domain");
    pair.domain = *domain;
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (!kKnown.contains(it.key())) pair.extra[it.key()] = it.value();
    }
    if (!seen.insert(pair.id).second) {
      throw Error(Errc::kDuplicateId, "duplicate id '" + pair.id + "' at line " +
                                          std::to_string(line_no));
    }
    pairs.push_back(std::move(pair));
  });
  return pairs;
}

Json ToJson(const ImageTextPair& pair) {
  Json obj = {{"id", pair.id},
              {"image_ref", pair.image_ref},
              {"caption", pair.caption},
              {"inline_mentions", pair.inline_mentions},
              {"domain", DomainName(pair.domain)}};
  for (auto it = pair.extra.begin(); it != pair.extra.end(); ++it) obj[it.key()] = it.value();
  return obj;
}

void WriteCorpus(const std::filesystem::path& path, const std::vector<ImageTextPair>& pairs) {
  WriteNdjson(path, pairs, [](const ImageTextPair& p) { return ToJson(p); });
}

std::string_view KindName(EmbeddingKind kind) {
  return kind == EmbeddingKind::kImage ? "image" : "text";
}

void EmbeddingStore::Insert(EmbeddingVector embedding) {
  if (embedding.vector.empty()) {
    throw Error(Errc::kDimensionMismatch, "embedding '" + embedding.id + "' is empty");
  }
  for (double v : embedding.vector) {
    if (!std::isfinite(v)) {
      throw Error(Errc::kNonFiniteComponent,
                  "embedding '" + embedding.id + "' has a non-finite component");
    }
  }
  auto& dim = dims_[static_cast<std::size_t>(embedding.kind)];
  if (dim != 0 && dim != embedding.vector.size()) {
    throw Error(Errc::kDimensionMismatch,
                "embedding '" + embedding.id + "': expected dimension " +
                    std::to_string(dim) + ", got " + std::to_string(embedding.vector.size()));
  }
  Key key{embedding.id, embedding.kind};
  if (vectors_.contains(key)) {
    throw Error(Errc::kDuplicateId, "duplicate " + std::string(KindName(embedding.kind)) +
                                        " embedding '" + embedding.id + "'");
  }
  dim = embedding.vector.size();
  vectors_.emplace(std::move(key), std::move(embedding.vector));
}

void EmbeddingStore::Merge(const EmbeddingStore& other) {
  for (const auto& [key, vec] : other.vectors_) Insert({key.first, key.second, vec});
}

const std::vector<double>* EmbeddingStore::Find(std::string_view id,
                                                 EmbeddingKind kind) const {
  auto it = vectors_.find(Key{std::string(id), kind});
  return it == vectors_.end() ? nullptr : &it->second;
}

const std::vector<double>& EmbeddingStore::Get(std::string_view id, EmbeddingKind kind) const {
  if (const auto* v = Find(id, kind)) return *v;
  throw Error(Errc::kMissingEmbedding,
              "missing " + std::string(KindName(kind)) + " embedding for '" + std::string(id) + "'");
}

std::size_t EmbeddingStore::dimension(EmbeddingKind kind) const {
  return dims_[static_cast<std::size_t>(kind)];
}

std::vector<EmbeddingVector> EmbeddingStore::ToVectors() const {
  std::vector<EmbeddingVector> out;
  out.reserve(vectors_.size());
  for (const auto& [key, vec] : vectors_) out.push_back({key.first, key.second, vec});
  return out;
}

EmbeddingStore LoadEmbeddings(const std::filesystem::path& path) {
  EmbeddingStore store;
  std::size_t file_dim = 0;
  ForEachNdjson(path, [&](std::size_t line_no, const Json& obj) {
    EmbeddingVector emb;
    emb.id = RequireString(obj, "id", line_no);
    const std::string kind = RequireString(obj, "kind", line_no);
    if (kind == "image") {
      emb.kind = EmbeddingKind::kImage;
    } else if (kind == "text") {
      emb.kind = EmbeddingKind::kText;
    } else {
      Malformed(line_no, "unknown kind '" + kind + "'");
    }
    auto vec = obj.find("vector");
    if (vec == obj.end() || !vec->is_array()) Malformed(line_no, "field 'vector' must be an array");
    emb.vector.reserve(vec->size());
    for (const auto& v : *vec) {
      // NaN and infinities serialize as null in JSON.
      if (v.is_null()) {
        throw Error(Errc::kNonFiniteComponent,
                    "embedding '" + emb.id + "' has a non-finite component");
      }
      if (!v.is_number()) Malformed(line_no, "vector components must be numbers");
      emb.vector.push_back(v.get<double>());
    }
    if (file_dim == 0) file_dim = emb.vector.size();
    if (emb.vector.size() != file_dim) {
      throw Error(Errc::kDimensionMismatch,
                  "embedding '" + emb.id + "': expected dimension " + std::to_string(file_dim) +
                      ", got " + std::to_string(emb.vector.size()));
    }
    store.Insert(std::move(emb));
  });
  return store;
}

void WriteEmbeddings(const std::filesystem::path& path,
                     const std::vector<EmbeddingVector>& vectors) {
  WriteNdjson(path, vectors, [](const EmbeddingVector& e) {
    return Json{{"id", e.id}, {"kind", KindName(e.kind)}, {"vector", e.vector}};
  });
}

std::string TextKey(std::string_view question, std::string_view answer) {
  std::string material(question);
  material.push_back('\n');
  material.append(answer);
  return "t-" + Sha256Hex(material).substr(0, 32);
}

std::string SampleKey(std::string_view image_id, std::string_view question,
                      std::string_view answer) {
  std::string material(image_id);
  material.push_back('\x1f');
  material.append(question);
  material.push_back('\x1f');
  material.append(answer);
  return "s-" + Sha256Hex(material).substr(0, 32);
}

std::optional<std::string> ValidateRecord(const InstructionRecord& record) {
  if (record.id.empty()) return "empty id";
  if (record.image.empty()) return "empty image";
  const auto n = record.conversations.size();
  if (n < kMinTurns || n > kMaxTurns) {
    return "conversation has " + std::to_string(n) + " turns, expected 2..12";
  }
  if (n % 2 != 0) return "conversation has an odd number of turns";
  for (std::size_t i = 0; i < n; ++i) {
    const Role expected = i % 2 == 0 ? Role::kHuman : Role::kAssistant;
    if (record.conversations[i].role != expected) {
      return "turn " + std::to_string(i) + " breaks human/assistant alternation";
    }
  }
  return std::nullopt;
}

InstructionRecord MakeRecord(std::string id, std::string image, Domain domain,
                             const std::vector<std::pair<std::string, std::string>>& rounds) {
  InstructionRecord record{std::move(id), std::move(image), domain, {}};
  record.conversations.reserve(rounds.size() * 2);
  for (const auto& [q, a] : rounds) {
    record.conversations.push_back({Role::kHuman, q});
    record.conversations.push_back({Role::kAssistant, a});
  }
  return record;
}

OrderedJson ToJson(const DatasetManifest& manifest) {
  OrderedJson out;
  out["name"] = manifest.name;
  out["size"] = manifest.size;
  out["record_ids"] = manifest.record_ids;
  out["provenance"] = manifest.provenance;
  return out;
}

DatasetManifest ManifestFromJson(const Json& json) {
  DatasetManifest m;
  m.name = json.at("name").get<std::string>();
  m.size = json.at("size").get<std::size_t>();
  m.record_ids = json.at("record_ids").get<std::vector<std::string>>();
  m.provenance = json.value("provenance", Json::object());
  return m;
}

OrderedJson ToJson(const InstructionRecord& record) {
  OrderedJson obj;
  obj["id"] = record.id;
  obj["image"] = record.image;
  obj["domain"] = DomainName(record.domain);
  OrderedJson turns = OrderedJson::array();
  for (const auto& turn : record.conversations) {
    OrderedJson t;
    t["from"] = turn.role == Role::kHuman ? "human" : "assistant";
    t["value"] = turn.text;
    turns.push_back(std::move(t));
  }
  obj["conversations"] = std::move(turns);
  return obj;
}

DatasetManifest WriteDataset(const std::vector<InstructionRecord>& records,
                             const std::filesystem::path& path, std::string name,
                             Json provenance) {
  std::set<std::string> ids;
  OrderedJson array = OrderedJson::array();
  DatasetManifest manifest{std::move(name), records.size(), {}, std::move(provenance)};
  for (const auto& record : records) {
    if (auto reason = ValidateRecord(record)) {
      throw Error(Errc::kInvalidRecord, "record '" + record.id + "': " + *reason);
    }
    if (!ids.insert(record.id).second) {
      throw Error(Errc::kInvalidRecord, "record '" + record.id + "': duplicate id");
    }
    array.push_back(ToJson(record));
    manifest.record_ids.push_back(record.id);
  }
  WriteTextFile(path, array.dump(2) + "\n");
  return manifest;
}

std::vector<InstructionRecord> LoadDataset(const std::filesystem::path& path) {
  Json array;
  try {
    array = Json::parse(ReadTextFile(path));
  } catch (const Json::parse_error&) {
    throw Error(Errc::kMalformedRecord, path.string() + ": invalid JSON");
  }
  if (!array.is_array()) throw Error(Errc::kMalformedRecord, path.string() + ": expected an array");
  std::vector<InstructionRecord> records;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < array.size(); ++i) {
    const Json& obj = array[i];
    auto bad = [&](const std::string& reason) -> Error {
      return Error(Errc::kMalformedRecord, "record " + std::to_string(i) + ": " + reason);
    };
    if (!obj.is_object() || obj.size() != 4) throw bad("expected exactly id, image, domain, conversations");
    InstructionRecord record;
    try {
      record.id = obj.at("id").get<std::string>();
      record.image = obj.at("image").get<std::string>();
      const auto domain = ParseDomain(obj.at("domain").get<std::string>());
      if (!domain) throw bad("unknown domain");
      record.domain = *domain;
      for (const auto& t : obj.at("conversations")) {
        const auto from = t.at("from").get<std::string>();
        if (from != "human" && from != "assistant") throw bad("unknown role '" + from + "'");
        if (t.size() != 2) throw bad("turn must have exactly from and value");
        record.conversations.push_back(
            {from == "human" ? Role::kHuman : Role::kAssistant, t.at("value").get<std::string>()});
      }
    } catch (const Json::exception& e) {
      throw bad(e.what());
    }
    if (auto reason = ValidateRecord(record)) throw bad(*reason);
    if (!ids.insert(record.id).second) {
      throw Error(Errc::kDuplicateId, "duplicate record id '" + record.id + "'");
    }
    records.push_back(std::move(record));
  }
  return records;
}

}  // namespace curate::corpus
