#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "kiprompt/corpus.hpp"
#include "kiprompt/knowledge.hpp"
#include "kiprompt/oracle.hpp"
#include "kiprompt/template.hpp"

namespace kiprompt {

/// One iteration's dropout decisions: the indices of the words replaced by
/// "MASK". Indices are strictly increasing and < word count.
struct MaskPlan {
  int iteration = 0;
  std::vector<std::size_t> dropout_list;
};

/// Replace the planned words with "MASK"; word count is preserved.
KnowledgeDocument mask_words(const KnowledgeDocument& knowledge,
                             const MaskPlan& plan);

struct WordScore {
  std::size_t word_index = 0;
  std::string word;
  double score = 0.0;
};

/// Accumulated per-word importance. A word appears in entries once it has
/// been masked at least once; its score is the sum of every iteration's
/// score_change (baseline F1 minus masked F1) it took part in.
struct WordImportanceTable {
  std::map<std::size_t, WordScore> entries;
  double baseline_f1 = 0.0;
  int iterations_run = 0;
  int eval_calls = 0;          // baseline plus one per non-empty iteration
  std::size_t word_count = 0;  // |knowledge.words| the table was built from
  double attributed_total = 0.0;  // sum of score_change * |dropout_list|

  /// Entries ordered by descending score; ties break toward the lower
  /// word index.
  std::vector<WordScore> sorted_descending() const;

  double entry_score_sum() const;
};

struct ImportanceRunConfig {
  int num_iterations = 100;
  double dropout_prob = 0.3;
  std::uint64_t seed = 0;
  /// Credit each masked word with score_change / |dropout_list| instead of
  /// the full score_change (off by default: full credit, which produces
  /// attribution bleed onto co-masked words by design).
  bool mean_attribution = false;
  /// Development set F1 is measured on during optimize_prompt.
  const Dataset* dev_set = nullptr;
  /// Ids reserved for final evaluation; optimize_prompt refuses to run when
  /// the dev set intersects them.
  std::unordered_set<std::string> reserved_test_ids;
};

using EvalF1 = std::function<double(const KnowledgeDocument&)>;

/// Monte Carlo dropout word importance. Per iteration, each word index in
/// order 0..n-1 draws one uniform double from a SplitMix64 seeded with
/// cfg.seed and joins the dropout list when the draw is < dropout_prob; an
/// iteration with an empty list consumes its draws but no eval call. The
/// baseline F1 is evaluated exactly once, before the iterations.
/// eval_f1 failures propagate with the iteration index attached. The
/// accounting invariant (sum of word scores == attributed_total) is checked
/// on every run.
WordImportanceTable importance_scores(const KnowledgeDocument& knowledge,
                                      const EvalF1& eval_f1,
                                      const ImportanceRunConfig& cfg);

/// Delete (not mask) up to top_k_negative words whose scores are negative,
/// most negative first, ties toward the lower index. The result has origin
/// Optimized; with no negative words or top_k_negative == 0 the text is
/// unchanged. The table must have been built from this knowledge document.
KnowledgeDocument prune_negative(const KnowledgeDocument& knowledge,
                                 const WordImportanceTable& table,
                                 int top_k_negative);

struct OptimizeResult {
  KnowledgeDocument optimized;
  WordImportanceTable table;
};

/// Full prompt optimization: F1 over cfg.dev_set (classified through the
/// oracle with the masked knowledge) drives importance_scores, then the
/// top negative words are pruned. Throws LeakageError when the dev set
/// intersects cfg.reserved_test_ids.
OptimizeResult optimize_prompt(Oracle& oracle,
                               const KnowledgeDocument& knowledge,
                               const PromptTemplate& req_di,
                               const ImportanceRunConfig& cfg,
                               int top_k_negative,
                               const CompletionParams& params,
                               int parallelism = 1);

/// Full ranking as CSV: rank,word_index,word,score (descending score).
std::string importance_table_csv(const WordImportanceTable& table);

/// Two-column Markdown ranking: TopK positive words next to TopK negative
/// words (negative column ordered most-harmful first).
std::string importance_table_markdown(const WordImportanceTable& table,
                                      int top_k = 10);

}  // namespace kiprompt
