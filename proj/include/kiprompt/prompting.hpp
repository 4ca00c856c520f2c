#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kiprompt/corpus.hpp"
#include "kiprompt/knowledge.hpp"
#include "kiprompt/oracle.hpp"
#include "kiprompt/template.hpp"

namespace kiprompt {

/// A knowledge-informed detection prompt: the user message is the knowledge
/// paragraph, the fixed question, and the post text in that order, joined
/// by blank lines (knowledge omitted entirely when absent). The system
/// message comes from the template.
struct ComposedPrompt {
  std::optional<KnowledgeDocument> knowledge;
  std::string question;
  std::string text;
  std::vector<ChatMessage> rendered;

  /// Content of the user message.
  const std::string& user_content() const;
};

/// Render a detection prompt from a req_di template. Throws
/// ValidationError when the template is not req_di, a placeholder is
/// missing, or the post text is empty.
ComposedPrompt compose(const std::optional<KnowledgeDocument>& knowledge,
                       const PromptTemplate& req_di, const Post& post);

struct DetectionVerdict {
  Label prediction = Label::Negative;
  std::string raw;         // verbatim oracle reply
  std::string parse_rule;  // "R1" | "R2" | "R3" | "fallback"
};

/// Map an oracle reply onto a label:
///   R1: the trimmed reply equals "P" or "N" (case-insensitive);
///   R2: the first standalone P/N/YES/NO token decides;
///   R3: the phrase "drug trafficking" decides positively unless negated
///       within the six words before it;
///   fallback: Negative, with a warning on stderr.
/// Identical replies always parse identically.
DetectionVerdict parse_verdict(const ChatResponse& response);

/// Compose, query the oracle once, parse. Oracle errors propagate.
DetectionVerdict classify(Oracle& oracle, const PromptTemplate& req_di,
                          const std::optional<KnowledgeDocument>& knowledge,
                          const Post& post, const CompletionParams& params);

struct ClassifyOutcome {
  std::optional<DetectionVerdict> verdict;
  std::string error;  // non-empty when the oracle failed for this post

  bool ok() const { return verdict.has_value(); }
};

/// Classify every post with the same knowledge and template. Results line
/// up with the input order regardless of parallelism. A post whose oracle
/// call fails gets an error slot instead of aborting the batch; if every
/// post fails, the batch throws. posts must be non-empty, parallelism >= 1.
std::vector<ClassifyOutcome> classify_batch(
    Oracle& oracle, const PromptTemplate& req_di,
    const std::optional<KnowledgeDocument>& knowledge,
    const std::vector<Post>& posts, const CompletionParams& params,
    int parallelism = 1);

}  // namespace kiprompt
