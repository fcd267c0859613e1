#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "curate/corpus.hpp"
#include "curate/diversity.hpp"
#include "curate/genclient/request.hpp"

namespace curate::genclient {

/// A prompt template file. Sections start with a marker line `@@system`,
/// `@@user` or `@@assistant`; the last section must be `@@user`.
/// Placeholders are `{{name}}` and are substituted in one pass, so values
/// are never re-expanded.
class PromptTemplate {
 public:
  struct Section {
    std::string role;
    std::string text;
  };

  static PromptTemplate Parse(const std::string& text);
  static PromptTemplate Load(const std::filesystem::path& path);

  const std::vector<Section>& sections() const { return sections_; }
  bool Mentions(const std::string& placeholder) const;

  /// Throws TemplateError when a placeholder in `required` is absent or the
  /// template uses a name missing from `values`.
  ChatRequest Render(const std::map<std::string, std::string>& values,
                     const std::vector<std::string>& required) const;

 private:
  std::vector<Section> sections_;
};

/// Clinician-curated quality factors used when no list is configured.
std::vector<std::string> DefaultCriteria();

/// Instruction appended to every rating prompt.
inline constexpr const char* kRatingContract =
    "Rate the answer on a scale from 0 to 10 using the criteria above. "
    "End your reply with a line of the form SCORE: <integer from 0 to 10>.";

/// Instruction appended to every generation prompt.
inline constexpr const char* kGenerationContract =
    "Return the conversation as a JSON list of objects with the keys \"question\" and "
    "\"answer\", one object per round, and 4-5 rounds in total.";

std::string RenderDemos(const std::vector<diversity::Demonstration>& demos);
std::string RenderMentions(const std::vector<std::string>& mentions);
std::string RenderCriteria(const std::vector<std::string>& criteria);

/// Few-shot generation prompt for one corpus sample. The final user message
/// carries the sample's image.
ChatRequest BuildGenerationPrompt(const corpus::ImageTextPair& target,
                                  const std::vector<diversity::Demonstration>& demos,
                                  const PromptTemplate& tmpl);

/// Follow-up request asking for an alternative answer to each question of a
/// first generation, used to produce the second candidate answer.
ChatRequest BuildAnswerVariantPrompt(const ChatRequest& generation, const std::string& first_raw,
                                     const std::vector<std::string>& questions);

struct RatedSample {
  std::string image_ref;
  std::string caption;
  std::string question;
  std::string answer;
};

/// Judge prompt asking for a 0-10 quality score. Throws TemplateError on an
/// empty criteria list.
ChatRequest BuildRatingPrompt(const RatedSample& sample, const std::vector<std::string>& criteria,
                              const PromptTemplate& tmpl);

}  // namespace curate::genclient
