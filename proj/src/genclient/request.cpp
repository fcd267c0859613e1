#include "curate/genclient/request.hpp"

#include <filesystem>

#include "curate/error.hpp"
#include "curate/hash.hpp"

namespace curate::genclient {
namespace {

std::string_view KindName(PromptKind kind) {
  switch (kind) {
    case PromptKind::kGeneration: return "generation";
    case PromptKind::kAnswerVariant: return "answer_variant";
    case PromptKind::kRating: return "rating";
    case PromptKind::kWinRate: return "winrate";
    case PromptKind::kChatScore: return "chat_score";
    case PromptKind::kOther: return "other";
  }
  return "other";
}

std::string MimeFor(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "application/octet-stream";
}

}  // namespace

std::string ChatMessage::Text() const {
  std::string out;
  for (const auto& p : parts) {
    if (p.type == ContentPart::Type::kText) out += p.value;
  }
  return out;
}

std::size_t ChatMessage::ImageCount() const {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.type == ContentPart::Type::kImage ? 1 : 0;
  return n;
}

std::string ChatRequest::ContentHash() const {
  Json j;
  j["system"] = system;
  Json msgs = Json::array();
  for (const auto& m : messages) {
    Json parts = Json::array();
    for (const auto& p : m.parts) {
      parts.push_back({p.type == ContentPart::Type::kText ? "text" : "image", p.value});
    }
    msgs.push_back({{"role", m.role}, {"parts", parts}});
  }
  j["messages"] = msgs;
  j["temperature"] = temperature;
  j["max_tokens"] = max_tokens;
  j["model"] = model_id;
  j["seed"] = seed ? Json(*seed) : Json(nullptr);
  j["kind"] = KindName(kind);
  j["fields"] = fields;
  return Sha256Hex(j.dump());
}

Json ToWireJson(const ChatRequest& request, const ImageResolver& resolve) {
  Json messages = Json::array();
  if (!request.system.empty()) {
    messages.push_back({{"role", "system"}, {"content", request.system}});
  }
  for (const auto& m : request.messages) {
    if (m.ImageCount() == 0) {
      messages.push_back({{"role", m.role}, {"content", m.Text()}});
      continue;
    }
    Json content = Json::array();
    for (const auto& p : m.parts) {
      if (p.type == ContentPart::Type::kText) {
        content.push_back({{"type", "text"}, {"text", p.value}});
      } else {
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", resolve(p.value)}}}});
      }
    }
    messages.push_back({{"role", m.role}, {"content", content}});
  }
  Json body = {{"model", request.model_id},
               {"messages", messages},
               {"temperature", request.temperature},
               {"max_tokens", request.max_tokens}};
  if (request.seed) body["seed"] = *request.seed;
  return body;
}

ImageResolver FileImageResolver(std::string image_root) {
  return [root = std::move(image_root)](const std::string& ref) -> std::string {
    if (ref.starts_with("http://") || ref.starts_with("https://") || ref.starts_with("data:")) {
      return ref;
    }
    const std::filesystem::path path = root.empty() ? std::filesystem::path(ref)
                                                    : std::filesystem::path(root) / ref;
    if (!std::filesystem::exists(path)) {
      throw Error(Errc::kIoError, "image not found: " + path.string());
    }
    return "data:" + MimeFor(path) + ";base64," + Base64Encode(ReadTextFile(path));
  };
}

}  // namespace curate::genclient
