#include "curate/genclient/prompt.hpp"

#include <set>
#include <sstream>

#include "curate/error.hpp"

namespace curate::genclient {
namespace {

std::string TrimNewlines(const std::string& s) {
  const auto first = s.find_first_not_of('\n');
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of('\n');
  return s.substr(first, last - first + 1);
}

std::string Substitute(const std::string& text, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find("{{", pos);
    if (open == std::string::npos) break;
    const auto close = text.find("}}", open + 2);
    if (close == std::string::npos) break;
    const std::string name = text.substr(open + 2, close - open - 2);
    auto it = values.find(name);
    if (it == values.end()) {
      throw Error(Errc::kTemplateError, "template uses unknown placeholder {{" + name + "}}");
    }
    out.append(text, pos, open - pos);
    out += it->second;
    pos = close + 2;
  }
  out.append(text, pos, std::string::npos);
  return out;
}

}  // namespace

PromptTemplate PromptTemplate::Parse(const std::string& text) {
  PromptTemplate tmpl;
  std::istringstream in(text);
  std::string line;
  Section* current = nullptr;
  while (std::getline(in, line)) {
    std::string trimmed = line;
    while (!trimmed.empty() && (trimmed.back() == '\r' || trimmed.back() == ' ')) trimmed.pop_back();
    if (trimmed == "@@system" || trimmed == "@@user" || trimmed == "@@assistant") {
      tmpl.sections_.push_back({trimmed.substr(2), ""});
      current = &tmpl.sections_.back();
      continue;
    }
    if (current == nullptr) {
      if (trimmed.find_first_not_of(" \t") != std::string::npos) {
        throw Error(Errc::kTemplateError, "template text before the first section marker");
      }
      continue;
    }
    current->text += line;
    current->text.push_back('\n');
  }
  if (tmpl.sections_.empty()) throw Error(Errc::kTemplateError, "template has no sections");
  for (std::size_t i = 0; i < tmpl.sections_.size(); ++i) {
    auto& s = tmpl.sections_[i];
    s.text = TrimNewlines(s.text);
    if (s.role == "system" && i != 0) {
      throw Error(Errc::kTemplateError, "@@system must be the first section");
    }
  }
  if (tmpl.sections_.back().role != "user") {
    throw Error(Errc::kTemplateError, "the last template section must be @@user");
  }
  return tmpl;
}

PromptTemplate PromptTemplate::Load(const std::filesystem::path& path) {
  return Parse(ReadTextFile(path));
}

bool PromptTemplate::Mentions(const std::string& placeholder) const {
  const std::string needle = "{{" + placeholder + "}}";
  for (const auto& s : sections_) {
    if (s.text.find(needle) != std::string::npos) return true;
  }
  return false;
}

ChatRequest PromptTemplate::Render(const std::map<std::string, std::string>& values,
                                   const std::vector<std::string>& required) const {
  for (const auto& name : required) {
    if (!Mentions(name)) throw Error(Errc::kTemplateError, "missing placeholder {{" + name + "}}");
  }
  ChatRequest request;
  for (const auto& s : sections_) {
    const std::string text = Substitute(s.text, values);
    if (s.role == "system") {
      request.system = text;
    } else {
      request.messages.push_back({s.role, {ContentPart::Text(text)}});
    }
  }
  request.fields = values;
  return request;
}

std::vector<std::string> DefaultCriteria() {
  return {"missing information", "recognition errors", "lack of medical precision",
          "insufficient depth", "valueless questions"};
}

std::string RenderDemos(const std::vector<diversity::Demonstration>& demos) {
  std::string out;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    if (i > 0) out += "\n\n";
    out += "context:\n" + demos[i].context + "\nresponse:\n" + demos[i].response;
  }
  return out;
}

std::string RenderMentions(const std::vector<std::string>& mentions) {
  std::string out;
  for (std::size_t i = 0; i < mentions.size(); ++i) {
    if (i > 0) out.push_back('\n');
    out += mentions[i];
  }
  return out;
}

std::string RenderCriteria(const std::vector<std::string>& criteria) {
  std::string out;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (i > 0) out.push_back('\n');
    out += std::to_string(i + 1) + ". " + criteria[i];
  }
  return out;
}

ChatRequest BuildGenerationPrompt(const corpus::ImageTextPair& target,
                                  const std::vector<diversity::Demonstration>& demos,
                                  const PromptTemplate& tmpl) {
  std::map<std::string, std::string> values = {{"demos", RenderDemos(demos)},
                                               {"caption", target.caption},
                                               {"mentions", RenderMentions(target.inline_mentions)}};
  ChatRequest request = tmpl.Render(values, {"demos", "caption", "mentions"});
  auto& last = request.messages.back();
  last.parts.push_back(ContentPart::Text(std::string("\n\n") + kGenerationContract));
  last.parts.push_back(ContentPart::Image(target.image_ref));
  request.kind = PromptKind::kGeneration;
  request.fields["id"] = target.id;
  request.fields["domain"] = corpus::DomainName(target.domain);
  return request;
}

ChatRequest BuildAnswerVariantPrompt(const ChatRequest& generation, const std::string& first_raw,
                                     const std::vector<std::string>& questions) {
  ChatRequest request = generation;
  request.messages.push_back({"assistant", {ContentPart::Text(first_raw)}});
  request.messages.push_back(
      {"user",
       {ContentPart::Text("Write an alternative answer to each question above. Keep the questions "
                          "unchanged and use the same JSON list format.")}});
  request.kind = PromptKind::kAnswerVariant;
  request.fields["questions"] = Json(questions).dump();
  return request;
}

ChatRequest BuildRatingPrompt(const RatedSample& sample, const std::vector<std::string>& criteria,
                              const PromptTemplate& tmpl) {
  if (criteria.empty()) throw Error(Errc::kTemplateError, "criteria list is empty");
  std::map<std::string, std::string> values = {{"criteria", RenderCriteria(criteria)},
                                               {"caption", sample.caption},
                                               {"question", sample.question},
                                               {"answer", sample.answer}};
  ChatRequest request = tmpl.Render(values, {"criteria", "question", "answer"});
  auto& last = request.messages.back();
  last.parts.push_back(ContentPart::Text(std::string("\n\n") + kRatingContract));
  if (!sample.image_ref.empty()) last.parts.push_back(ContentPart::Image(sample.image_ref));
  request.kind = PromptKind::kRating;
  request.temperature = 0.0;
  return request;
}

}  // namespace curate::genclient
