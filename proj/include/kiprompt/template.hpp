#pragma once

#include <filesystem>
#include <string>

namespace kiprompt {

/// A reusable prompt template. The four shipped templates are:
///   req_k  - knowledge discovery over labeled example batches
///   req_s  - summarization of extracted knowledge
///   req_fu - fusion of extracted and curated knowledge
///   req_di - detection of a single post
///
/// For req_di, user_pattern controls how the user message is rendered from
/// the {knowledge}, {question}, and {text} placeholders; each must appear
/// exactly once and in that order. When no knowledge is supplied the
/// knowledge block and its separator are dropped.
struct PromptTemplate {
  std::string name;
  std::string version = "1";
  std::string system_text;
  std::string question_text;
  std::string user_pattern = "{knowledge}\n\n{question}\n\n{text}";
};

inline const char* default_user_pattern() {
  return "{knowledge}\n\n{question}\n\n{text}";
}

/// Throws ValidationError when the template is malformed (unknown name,
/// empty question, or a bad req_di pattern).
void validate_template(const PromptTemplate& tmpl);

PromptTemplate make_template(const std::string& name,
                             const std::string& version,
                             const std::string& system_text,
                             const std::string& question_text,
                             const std::string& user_pattern =
                                 default_user_pattern());

/// Load a template from JSON: {"name","version","system_text",
/// "question_text"} plus optional "user_pattern".
PromptTemplate load_template(const std::filesystem::path& path);

struct TemplateSet {
  PromptTemplate req_k, req_s, req_fu, req_di;
};

/// Load req_k.json, req_s.json, req_fu.json, req_di.json from a directory.
TemplateSet load_template_set(const std::filesystem::path& dir);

/// The built-in templates (identical content ships under templates/).
TemplateSet default_templates();

}  // namespace kiprompt
