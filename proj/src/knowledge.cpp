#include "kiprompt/knowledge.hpp"

#include <fstream>

#include "json.hpp"
#include "kiprompt/errors.hpp"
#include "kiprompt/textutil.hpp"

namespace kiprompt {

const char* to_string(KnowledgeOrigin origin) {
  switch (origin) {
    case KnowledgeOrigin::Domain: return "Domain";
    case KnowledgeOrigin::Extracted: return "Extracted";
    case KnowledgeOrigin::Summarized: return "Summarized";
    case KnowledgeOrigin::Fused: return "Fused";
    case KnowledgeOrigin::Optimized: return "Optimized";
  }
  return "Domain";
}

KnowledgeOrigin parse_knowledge_origin(const std::string& name) {
  std::string s = to_lower(trim(name));
  if (s == "domain") return KnowledgeOrigin::Domain;
  if (s == "extracted") return KnowledgeOrigin::Extracted;
  if (s == "summarized") return KnowledgeOrigin::Summarized;
  if (s == "fused") return KnowledgeOrigin::Fused;
  if (s == "optimized") return KnowledgeOrigin::Optimized;
  throw ValidationError("unknown knowledge origin \"" + name + "\"");
}

KnowledgeDocument::KnowledgeDocument(const std::string& text,
                                     KnowledgeOrigin origin)
    : words_(split_words(text)), origin_(origin) {
  text_ = join_words(words_);
}

KnowledgeDocument KnowledgeDocument::from_words(
    const std::vector<std::string>& words, KnowledgeOrigin origin) {
  return KnowledgeDocument(join_words(words), origin);
}

const char* to_string(KnowledgeCategory category) {
  switch (category) {
    case KnowledgeCategory::Hashtag: return "Hashtag";
    case KnowledgeCategory::ContactInformation: return "ContactInformation";
    case KnowledgeCategory::SpecialSymbol: return "SpecialSymbol";
  }
  return "Hashtag";
}

KnowledgeCategory parse_knowledge_category(const std::string& name) {
  std::string s = to_lower(trim(name));
  if (s == "hashtag") return KnowledgeCategory::Hashtag;
  if (s == "contactinformation" || s == "contact_information")
    return KnowledgeCategory::ContactInformation;
  if (s == "specialsymbol" || s == "special_symbol")
    return KnowledgeCategory::SpecialSymbol;
  throw ValidationError("unknown knowledge category \"" + name + "\"");
}

namespace {

void validate_entry(const DomainKnowledgeEntry& entry) {
  if (trim(entry.meaning).empty())
    throw ValidationError("domain knowledge entry has empty meaning");
  if (entry.examples.empty())
    throw ValidationError("domain knowledge entry has no examples");
}

void check_role(const PromptTemplate& tmpl, const char* expected) {
  validate_template(tmpl);
  if (tmpl.name != expected)
    throw ValidationError("expected template " + std::string(expected) +
                          ", got " + tmpl.name);
}

ChatRequest build_request(const PromptTemplate& tmpl, std::string user_content,
                          const CompletionParams& params) {
  ChatRequest req;
  req.model = params.model;
  req.temperature = params.temperature;
  req.max_tokens = params.max_tokens;
  if (!tmpl.system_text.empty())
    req.messages.push_back({Role::System, tmpl.system_text});
  req.messages.push_back({Role::User, std::move(user_content)});
  return req;
}

}  // namespace

std::vector<DomainKnowledgeEntry> load_domain_knowledge(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
  if (!j.is_array() || j.empty())
    throw ValidationError(path.string() +
                          ": expected a non-empty JSON array of entries");
  std::vector<DomainKnowledgeEntry> entries;
  for (const auto& item : j) {
    DomainKnowledgeEntry entry;
    try {
      entry.category =
          parse_knowledge_category(item.at("category").get<std::string>());
      entry.meaning = item.at("meaning").get<std::string>();
      for (const auto& ex : item.at("examples"))
        entry.examples.push_back(ex.get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ": bad entry: " + e.what());
    }
    validate_entry(entry);
    entries.push_back(std::move(entry));
  }
  return entries;
}

std::vector<DomainKnowledgeEntry> default_domain_knowledge() {
  return {
      {KnowledgeCategory::Hashtag,
       "Drug sale-related hashtags",
       {"#MDMA", "#Cocaine", "#LSD"}},
      {KnowledgeCategory::ContactInformation,
       "Telephone numbers, email addresses, and other private social media "
       "accounts",
       {"Txt/WhatsApp +1 7**.***.9414", "Wickr/Snapchat james*****52",
        "Kik james*****52"}},
      {KnowledgeCategory::SpecialSymbol,
       "Punctuation, special characters, and emojis used to obfuscate drug "
       "names and evade detection",
       {"M.D.M.A", "C.O.C.A.I.N.E", "L.s.d", "M.o.l.l.y",
        "SHR\xCE\x98\xCE\x98MS", "C\xCE\x98KE"}},
  };
}

KnowledgeDocument render_domain_knowledge(
    const std::vector<DomainKnowledgeEntry>& entries) {
  if (entries.empty())
    throw ValidationError("no domain knowledge entries to render");
  std::string text =
      "Drug trafficking posts often reveal themselves through the following "
      "indicator categories.";
  for (const auto& entry : entries) {
    validate_entry(entry);
    const char* label = "";
    switch (entry.category) {
      case KnowledgeCategory::Hashtag:
        label = "Hashtags";
        break;
      case KnowledgeCategory::ContactInformation:
        label = "Contact information";
        break;
      case KnowledgeCategory::SpecialSymbol:
        label = "Special symbols";
        break;
    }
    text += " ";
    text += label;
    text += ": ";
    text += trim(entry.meaning);
    text += ". Examples: ";
    for (std::size_t i = 0; i < entry.examples.size(); ++i) {
      if (i) text += ", ";
      text += entry.examples[i];
    }
    text += ".";
  }
  return KnowledgeDocument(text, KnowledgeOrigin::Domain);
}

CompletionParams knowledge_params() {
  return CompletionParams{"gpt-3.5-turbo", 0.7, 512};
}

CompletionParams detection_params() {
  return CompletionParams{"gpt-3.5-turbo", 0.0, 16};
}

std::vector<KnowledgeDocument> discover_knowledge(
    Oracle& oracle, const std::vector<LabeledPost>& shots,
    const PromptTemplate& req_k, const KnowledgePipelineConfig& cfg,
    const CompletionParams& params) {
  check_role(req_k, "req_k");
  if (shots.empty())
    throw ValidationError("knowledge discovery needs at least one shot");
  if (cfg.batch_size < 1)
    throw ValidationError("batch_size must be >= 1");

  const std::size_t batch =
      static_cast<std::size_t>(cfg.batch_size);
  const std::size_t batches = (shots.size() + batch - 1) / batch;
  std::vector<KnowledgeDocument> docs;
  docs.reserve(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    std::string content = req_k.question_text;
    const std::size_t lo = b * batch;
    const std::size_t hi = std::min(shots.size(), lo + batch);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& shot = shots[i];
      content += "\n\nExample " + std::to_string(i - lo + 1) + " (label: ";
      content += shot.label == Label::Positive ? "drug trafficking"
                                               : "not drug trafficking";
      content += "): " + shot.post.text;
    }
    try {
      ChatResponse res =
          oracle.complete(build_request(req_k, std::move(content), params));
      docs.emplace_back(res.content, KnowledgeOrigin::Extracted);
    } catch (const OracleError& e) {
      throw OracleError(e.kind(), "knowledge discovery batch " +
                                      std::to_string(b + 1) + "/" +
                                      std::to_string(batches) + ": " +
                                      e.what());
    }
  }
  return docs;
}

KnowledgeDocument summarize_knowledge(Oracle& oracle,
                                      const std::vector<KnowledgeDocument>& docs,
                                      const PromptTemplate& req_s,
                                      const KnowledgePipelineConfig& cfg,
                                      const CompletionParams& params) {
  check_role(req_s, "req_s");
  if (docs.empty())
    throw ValidationError("nothing to summarize: no extracted documents");
  if (cfg.max_knowledge_words < 1)
    throw ValidationError("max_knowledge_words must be >= 1");
  std::string content = req_s.question_text;
  for (const auto& doc : docs) {
    content += "\n\n" + doc.text();
  }
  ChatResponse res =
      oracle.complete(build_request(req_s, std::move(content), params));
  return KnowledgeDocument(truncate_words(res.content, cfg.max_knowledge_words),
                           KnowledgeOrigin::Summarized);
}

KnowledgeDocument fuse_knowledge(Oracle& oracle,
                                 const KnowledgeDocument& extracted,
                                 const KnowledgeDocument& domain,
                                 const PromptTemplate& req_fu,
                                 const KnowledgePipelineConfig& cfg,
                                 const CompletionParams& params) {
  check_role(req_fu, "req_fu");
  if (extracted.empty())
    throw ValidationError("fusion needs non-empty extracted knowledge");
  if (domain.empty())
    throw ValidationError("fusion needs non-empty domain knowledge");
  if (cfg.max_knowledge_words < 1)
    throw ValidationError("max_knowledge_words must be >= 1");
  std::string content = req_fu.question_text;
  content += "\n\nLearned indicators: " + extracted.text();
  content += "\n\nCurated indicators: " + domain.text();
  ChatResponse res =
      oracle.complete(build_request(req_fu, std::move(content), params));
  return KnowledgeDocument(truncate_words(res.content, cfg.max_knowledge_words),
                           KnowledgeOrigin::Fused);
}

std::string truncate_words(const std::string& text, int max_words) {
  if (max_words < 1) throw ValidationError("max_words must be >= 1");
  auto words = split_words(text);
  if (words.size() <= static_cast<std::size_t>(max_words)) return text;
  words.resize(static_cast<std::size_t>(max_words));
  return join_words(words);
}

void save_knowledge(const KnowledgeDocument& doc,
                    const std::filesystem::path& path,
                    const std::string& parent_digest) {
  nlohmann::json j;
  j["text"] = doc.text();
  j["origin"] = to_string(doc.origin());
  j["parent_digest"] = parent_digest;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

KnowledgeDocument load_knowledge(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
  if (!j.contains("text") || !j["text"].is_string())
    throw ValidationError(path.string() + ": missing \"text\" field");
  KnowledgeOrigin origin =
      j.contains("origin") ? parse_knowledge_origin(j["origin"].get<std::string>())
                           : KnowledgeOrigin::Domain;
  return KnowledgeDocument(j["text"].get<std::string>(), origin);
}

}  // namespace kiprompt
