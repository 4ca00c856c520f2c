#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kiprompt/corpus.hpp"
#include "kiprompt/oracle.hpp"
#include "kiprompt/template.hpp"

namespace kiprompt {

enum class KnowledgeOrigin { Domain, Extracted, Summarized, Fused, Optimized };

const char* to_string(KnowledgeOrigin origin);
KnowledgeOrigin parse_knowledge_origin(const std::string& name);

/// A knowledge paragraph plus its word decomposition. Construction
/// canonicalizes whitespace (runs of blanks/newlines collapse to single
/// spaces), so text() == words() joined by single spaces always holds and
/// word indices are stable for the optimizer.
class KnowledgeDocument {
 public:
  KnowledgeDocument() = default;
  KnowledgeDocument(const std::string& text, KnowledgeOrigin origin);
  static KnowledgeDocument from_words(const std::vector<std::string>& words,
                                      KnowledgeOrigin origin);

  const std::string& text() const { return text_; }
  const std::vector<std::string>& words() const { return words_; }
  KnowledgeOrigin origin() const { return origin_; }
  bool empty() const { return words_.empty(); }

 private:
  std::string text_;
  std::vector<std::string> words_;
  KnowledgeOrigin origin_ = KnowledgeOrigin::Domain;
};

enum class KnowledgeCategory { Hashtag, ContactInformation, SpecialSymbol };

const char* to_string(KnowledgeCategory category);
KnowledgeCategory parse_knowledge_category(const std::string& name);

struct DomainKnowledgeEntry {
  KnowledgeCategory category;
  std::string meaning;
  std::vector<std::string> examples;
};

/// Load curated domain knowledge from a JSON array of
/// {"category", "meaning", "examples": [...]} objects.
std::vector<DomainKnowledgeEntry> load_domain_knowledge(
    const std::filesystem::path& path);

/// The built-in curated entries (same content as data/domain_knowledge.json).
std::vector<DomainKnowledgeEntry> default_domain_knowledge();

/// Render curated entries as one deterministic knowledge paragraph. Every
/// category's meaning and examples appear verbatim, in input order.
KnowledgeDocument render_domain_knowledge(
    const std::vector<DomainKnowledgeEntry>& entries);

struct KnowledgePipelineConfig {
  int batch_size = 10;           // shots per discovery request
  int max_knowledge_words = 250; // word cap on summarized/fused paragraphs
};

/// Completion parameters shared by every oracle call a pipeline makes.
struct CompletionParams {
  std::string model = "gpt-3.5-turbo";
  double temperature = 0.0;
  int max_tokens = 256;
};

CompletionParams knowledge_params();  // temperature 0.7, roomy max_tokens
CompletionParams detection_params();  // temperature 0.0, short answers

/// Knowledge discovery: the labeled shots are sent to the oracle in batches
/// of cfg.batch_size (ceil(|shots|/batch_size) requests, in order), each
/// batch listing every example's text with its label spelled out. Each
/// response becomes one Extracted document. Oracle failures propagate as
/// OracleError with the failing batch index attached.
std::vector<KnowledgeDocument> discover_knowledge(
    Oracle& oracle, const std::vector<LabeledPost>& shots,
    const PromptTemplate& req_k, const KnowledgePipelineConfig& cfg,
    const CompletionParams& params);

/// One summarization request over all extracted documents; the reply is
/// truncated to cfg.max_knowledge_words words.
KnowledgeDocument summarize_knowledge(Oracle& oracle,
                                      const std::vector<KnowledgeDocument>& docs,
                                      const PromptTemplate& req_s,
                                      const KnowledgePipelineConfig& cfg,
                                      const CompletionParams& params);

/// One fusion request merging the extracted summary with curated domain
/// knowledge; the reply is truncated to cfg.max_knowledge_words words.
/// Both inputs must be non-empty.
KnowledgeDocument fuse_knowledge(Oracle& oracle,
                                 const KnowledgeDocument& extracted,
                                 const KnowledgeDocument& domain,
                                 const PromptTemplate& req_fu,
                                 const KnowledgePipelineConfig& cfg,
                                 const CompletionParams& params);

/// Cut text at a word boundary after max_words words (no-op when already
/// within the cap). max_words must be positive.
std::string truncate_words(const std::string& text, int max_words);

/// Serialize a knowledge document to JSON:
///   {"text": ..., "origin": ..., "parent_digest": ...}
/// parent_digest records the SHA-256 of the text the document was derived
/// from (empty for root documents).
void save_knowledge(const KnowledgeDocument& doc,
                    const std::filesystem::path& path,
                    const std::string& parent_digest = "");
KnowledgeDocument load_knowledge(const std::filesystem::path& path);

}  // namespace kiprompt
