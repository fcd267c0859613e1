#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "curate/ndjson.hpp"

namespace curate::genclient {

/// What a request asks for. Not sent on the wire; lets offline backends
/// answer in the right format.
enum class PromptKind { kGeneration, kAnswerVariant, kRating, kWinRate, kChatScore, kOther };

struct ContentPart {
  enum class Type { kText, kImage };
  Type type = Type::kText;
  /// Text, or an image reference (path, http(s) URL or data URI).
  std::string value;

  static ContentPart Text(std::string text) { return {Type::kText, std::move(text)}; }
  static ContentPart Image(std::string ref) { return {Type::kImage, std::move(ref)}; }
};

struct ChatMessage {
  std::string role;  // "user" or "assistant"
  std::vector<ContentPart> parts;

  /// Concatenation of the text parts.
  std::string Text() const;
  std::size_t ImageCount() const;
};

struct ChatRequest {
  std::string system;
  std::vector<ChatMessage> messages;
  double temperature = 0.7;
  int max_tokens = 2048;
  std::string model_id;
  std::optional<std::uint64_t> seed;
  PromptKind kind = PromptKind::kOther;
  /// Placeholder values the prompt was rendered from.
  std::map<std::string, std::string> fields;

  /// SHA-256 over every field that affects the answer.
  std::string ContentHash() const;
};

using ImageResolver = std::function<std::string(const std::string& ref)>;

/// OpenAI chat-completions request body. Image parts go through `resolve` to
/// become URLs.
Json ToWireJson(const ChatRequest& request, const ImageResolver& resolve);

/// http(s) and data: refs pass through; anything else is read from
/// `image_root / ref` and inlined as a base64 data URI.
ImageResolver FileImageResolver(std::string image_root);

}  // namespace curate::genclient
