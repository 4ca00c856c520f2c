#include "kiprompt/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "kiprompt/errors.hpp"
#include "kiprompt/evaluation.hpp"
#include "kiprompt/prompting.hpp"
#include "kiprompt/rng.hpp"
#include "kiprompt/textutil.hpp"

namespace kiprompt {

KnowledgeDocument mask_words(const KnowledgeDocument& knowledge,
                             const MaskPlan& plan) {
  std::vector<std::string> words = knowledge.words();
  std::size_t prev = 0;
  bool first = true;
  for (std::size_t idx : plan.dropout_list) {
    if (!first && idx <= prev)
      throw ValidationError("dropout_list indices must be strictly increasing");
    if (idx >= words.size())
      throw ValidationError("dropout index " + std::to_string(idx) +
                            " out of range (word count " +
                            std::to_string(words.size()) + ")");
    words[idx] = "MASK";
    prev = idx;
    first = false;
  }
  return KnowledgeDocument::from_words(words, knowledge.origin());
}

std::vector<WordScore> WordImportanceTable::sorted_descending() const {
  std::vector<WordScore> out;
  out.reserve(entries.size());
  for (const auto& [idx, ws] : entries) out.push_back(ws);
  std::stable_sort(out.begin(), out.end(),
                   [](const WordScore& a, const WordScore& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.word_index < b.word_index;
                   });
  return out;
}

double WordImportanceTable::entry_score_sum() const {
  double sum = 0.0;
  for (const auto& [idx, ws] : entries) sum += ws.score;
  return sum;
}

WordImportanceTable importance_scores(const KnowledgeDocument& knowledge,
                                      const EvalF1& eval_f1,
                                      const ImportanceRunConfig& cfg) {
  if (knowledge.empty())
    throw ValidationError("cannot score an empty knowledge paragraph");
  if (!(cfg.dropout_prob >= 0.0 && cfg.dropout_prob <= 1.0))
    throw ValidationError("dropout_prob must be in [0, 1]");
  if (cfg.num_iterations < 0)
    throw ValidationError("num_iterations must be >= 0");
  if (!eval_f1) throw ValidationError("eval_f1 is not callable");

  const auto& words = knowledge.words();
  WordImportanceTable table;
  table.word_count = words.size();
  table.baseline_f1 = eval_f1(knowledge);
  table.eval_calls = 1;

  SplitMix64 rng(cfg.seed);
  for (int iter = 1; iter <= cfg.num_iterations; ++iter) {
    MaskPlan plan;
    plan.iteration = iter;
    for (std::size_t wi = 0; wi < words.size(); ++wi) {
      if (rng.next_double() < cfg.dropout_prob) plan.dropout_list.push_back(wi);
    }
    ++table.iterations_run;
    if (plan.dropout_list.empty()) continue;  // draws consumed, no eval

    double masked_f1;
    try {
      masked_f1 = eval_f1(mask_words(knowledge, plan));
    } catch (const OracleError& e) {
      throw OracleError(e.kind(), "importance iteration " +
                                      std::to_string(iter) + ": " + e.what());
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error("importance iteration " + std::to_string(iter) + ": " +
                  e.what());
    }
    ++table.eval_calls;

    const double change = table.baseline_f1 - masked_f1;
    const auto count = plan.dropout_list.size();
    if (cfg.mean_attribution) {
      const double credit = change / static_cast<double>(count);
      for (std::size_t wi : plan.dropout_list) {
        auto& entry = table.entries[wi];
        entry.word_index = wi;
        entry.word = words[wi];
        entry.score += credit;
      }
      table.attributed_total += change;
    } else {
      for (std::size_t wi : plan.dropout_list) {
        auto& entry = table.entries[wi];
        entry.word_index = wi;
        entry.word = words[wi];
        entry.score += change;
      }
      table.attributed_total += change * static_cast<double>(count);
    }
  }

  const double sum = table.entry_score_sum();
  const double scale = std::max(1.0, std::abs(table.attributed_total));
  if (std::abs(sum - table.attributed_total) > 1e-9 * scale)
    throw Error("importance accounting mismatch: word scores sum to " +
                std::to_string(sum) + " but attributed total is " +
                std::to_string(table.attributed_total));
  return table;
}

KnowledgeDocument prune_negative(const KnowledgeDocument& knowledge,
                                 const WordImportanceTable& table,
                                 int top_k_negative) {
  if (top_k_negative < 0)
    throw ValidationError("top_k_negative must be >= 0");
  if (table.word_count != knowledge.words().size())
    throw ValidationError(
        "importance table was built from a different paragraph (word count " +
        std::to_string(table.word_count) + " vs " +
        std::to_string(knowledge.words().size()) + ")");

  std::vector<WordScore> negatives;
  for (const auto& [idx, ws] : table.entries) {
    if (ws.score < 0.0) negatives.push_back(ws);
  }
  std::stable_sort(negatives.begin(), negatives.end(),
                   [](const WordScore& a, const WordScore& b) {
                     if (a.score != b.score) return a.score < b.score;
                     return a.word_index < b.word_index;
                   });
  if (negatives.size() > static_cast<std::size_t>(top_k_negative))
    negatives.resize(static_cast<std::size_t>(top_k_negative));

  std::unordered_set<std::size_t> drop;
  for (const auto& ws : negatives) drop.insert(ws.word_index);
  std::vector<std::string> kept;
  kept.reserve(knowledge.words().size());
  for (std::size_t i = 0; i < knowledge.words().size(); ++i) {
    if (!drop.count(i)) kept.push_back(knowledge.words()[i]);
  }
  return KnowledgeDocument::from_words(kept, KnowledgeOrigin::Optimized);
}

OptimizeResult optimize_prompt(Oracle& oracle,
                               const KnowledgeDocument& knowledge,
                               const PromptTemplate& req_di,
                               const ImportanceRunConfig& cfg,
                               int top_k_negative,
                               const CompletionParams& params,
                               int parallelism) {
  if (cfg.dev_set == nullptr || cfg.dev_set->empty())
    throw ValidationError("optimize_prompt needs a non-empty dev set");
  if (!cfg.reserved_test_ids.empty()) {
    for (const auto& item : cfg.dev_set->items()) {
      if (cfg.reserved_test_ids.count(item.post.id))
        throw LeakageError("dev post \"" + item.post.id +
                           "\" is reserved for the test set");
    }
  }

  std::vector<Post> posts;
  std::vector<Label> labels;
  posts.reserve(cfg.dev_set->size());
  for (const auto& item : cfg.dev_set->items()) {
    posts.push_back(item.post);
    labels.push_back(item.label);
  }

  EvalF1 eval = [&](const KnowledgeDocument& candidate) -> double {
    auto outcomes =
        classify_batch(oracle, req_di, candidate, posts, params, parallelism);
    std::vector<Label> preds, golds;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      if (!outcomes[i].ok()) continue;
      preds.push_back(outcomes[i].verdict->prediction);
      golds.push_back(labels[i]);
    }
    return compute_metrics(preds, golds).second.f1;
  };

  OptimizeResult result;
  result.table = importance_scores(knowledge, eval, cfg);
  result.optimized = prune_negative(knowledge, result.table, top_k_negative);
  return result;
}

std::string importance_table_csv(const WordImportanceTable& table) {
  std::string out = "rank,word_index,word,score\n";
  int rank = 1;
  for (const auto& ws : table.sorted_descending()) {
    out += std::to_string(rank++) + "," + std::to_string(ws.word_index) +
           "," + csv_field(ws.word) + "," + fmt_fixed(ws.score, 6) + "\n";
  }
  return out;
}

std::string importance_table_markdown(const WordImportanceTable& table,
                                      int top_k) {
  if (top_k < 1) throw ValidationError("top_k must be >= 1");
  auto sorted = table.sorted_descending();
  std::vector<const WordScore*> pos, neg;
  for (const auto& ws : sorted) {
    if (ws.score > 0.0) pos.push_back(&ws);
  }
  for (auto it = sorted.rbegin(); it != sorted.rend(); ++it) {
    if (it->score < 0.0) neg.push_back(&*it);
  }
  // Negative column: most harmful first, ties toward the lower index.
  std::stable_sort(neg.begin(), neg.end(),
                   [](const WordScore* a, const WordScore* b) {
                     if (a->score != b->score) return a->score < b->score;
                     return a->word_index < b->word_index;
                   });

  std::string out = "| Rank | P Words | N Words |\n|---|---|---|\n";
  for (int i = 0; i < top_k; ++i) {
    auto cell = [&](const std::vector<const WordScore*>& v) -> std::string {
      if (static_cast<std::size_t>(i) >= v.size()) return "";
      return v[static_cast<std::size_t>(i)]->word;
    };
    std::string p = cell(pos);
    std::string n = cell(neg);
    if (p.empty() && n.empty()) break;
    out += "| Top" + std::to_string(i + 1) + " | " + p + " | " + n + " |\n";
  }
  return out;
}

}  // namespace kiprompt
