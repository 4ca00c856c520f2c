// Acceptance harness: one line per criterion, nonzero exit on any failure.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "kiprompt/cli.hpp"
#include "kiprompt/corpus.hpp"
#include "kiprompt/errors.hpp"
#include "kiprompt/evaluation.hpp"
#include "kiprompt/knowledge.hpp"
#include "kiprompt/optimizer.hpp"
#include "kiprompt/oracle.hpp"
#include "kiprompt/prompting.hpp"
#include "kiprompt/rng.hpp"
#include "kiprompt/template.hpp"
#include "support.hpp"

using namespace kiprompt;
using namespace testsupport;

namespace {

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define ACHECK(cond)                                                        \
  do {                                                                      \
    if (!(cond)) {                                                          \
      std::ostringstream os_;                                               \
      os_ << __FILE__ << ":" << __LINE__ << ": check failed: " << #cond;    \
      throw CheckFailure(os_.str());                                        \
    }                                                                       \
  } while (0)

#define ACHECK_MSG(cond, msg)                                               \
  do {                                                                      \
    if (!(cond)) {                                                          \
      std::ostringstream os_;                                               \
      os_ << __FILE__ << ":" << __LINE__ << ": " << msg;                    \
      throw CheckFailure(os_.str());                                        \
    }                                                                       \
  } while (0)

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

// --- criterion 1: published precision/recall rows against their F1 --------

void check_f1_identity() {
  struct Row {
    double precision, recall, f1;
  };
  // Fourteen published rows: the headline result, the five shot-count rows,
  // and the eight knowledge-ablation rows.
  const std::vector<Row> rows = {
      {0.9660, 0.9342, 0.9498}, {0.9063, 0.8354, 0.8694},
      {0.9177, 0.8724, 0.8945}, {0.9091, 0.8642, 0.8861},
      {0.9515, 0.8066, 0.8731}, {0.9541, 0.8560, 0.9024},
      {0.9021, 0.8724, 0.8870}, {0.9276, 0.8436, 0.8836},
      {0.9746, 0.7901, 0.8727}, {0.8911, 0.9424, 0.9160},
      {0.9810, 0.8477, 0.9095}, {0.9541, 0.8560, 0.9024},
      {0.9952, 0.8560, 0.9204}, {0.9660, 0.9342, 0.9498},
  };
  for (const auto& row : rows) {
    const double f1 = f1_from_precision_recall(row.precision, row.recall);
    ACHECK_MSG(std::abs(f1 - row.f1) < 0.0005,
               "precision " << row.precision << " recall " << row.recall
                            << " gives f1 " << f1 << ", expected " << row.f1);
  }
}

// --- criterion 2: dropout importance vs a straight-line reference ---------

double dyadic_eval(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return static_cast<double>(h % 65) / 64.0;
}

struct RefResult {
  std::map<std::size_t, double> scores;
  double baseline = 0.0;
  double attributed = 0.0;
  int eval_calls = 0;
};

RefResult ref_importance(const std::vector<std::string>& words, int iters,
                         double p, std::uint64_t seed) {
  std::uint64_t state = seed;
  auto next = [&]() {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  auto next_double = [&]() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  };
  RefResult r;
  r.baseline = dyadic_eval(join_words(words));
  r.eval_calls = 1;
  for (int it = 0; it < iters; ++it) {
    std::vector<std::size_t> drop;
    for (std::size_t w = 0; w < words.size(); ++w)
      if (next_double() < p) drop.push_back(w);
    if (drop.empty()) continue;
    std::vector<std::string> masked = words;
    for (std::size_t i : drop) masked[i] = "MASK";
    const double f = dyadic_eval(join_words(masked));
    ++r.eval_calls;
    const double change = r.baseline - f;
    for (std::size_t i : drop) r.scores[i] += change;
    r.attributed += change * static_cast<double>(drop.size());
  }
  return r;
}

void check_reference_equivalence() {
  std::vector<std::string> words;
  for (int i = 0; i < 20; ++i) words.push_back("word" + std::to_string(i));
  const KnowledgeDocument doc(join_words(words), KnowledgeOrigin::Fused);
  for (std::uint64_t seed : {3ull, 11ull, 42ull, 1234ull, 0xfeedull}) {
    ImportanceRunConfig cfg;
    cfg.num_iterations = 1000;
    cfg.dropout_prob = 0.3;
    cfg.seed = seed;
    const auto table = importance_scores(
        doc, [](const KnowledgeDocument& d) { return dyadic_eval(d.text()); },
        cfg);
    const auto ref = ref_importance(words, 1000, 0.3, seed);
    ACHECK(table.baseline_f1 == ref.baseline);
    ACHECK(table.eval_calls == ref.eval_calls);
    ACHECK(table.entries.size() == ref.scores.size());
    for (const auto& [idx, score] : ref.scores) {
      auto it = table.entries.find(idx);
      ACHECK(it != table.entries.end());
      ACHECK_MSG(it->second.score == score,
                 "seed " << seed << " word " << idx << ": " << it->second.score
                         << " != " << score);
    }
    ACHECK(table.attributed_total == ref.attributed);
  }
}

// --- criterion 3: score accounting invariant over random configs ----------

void check_accounting_invariant() {
  SplitMix64 meta(77);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + meta.next_below(30);
    std::vector<std::string> words;
    for (std::size_t i = 0; i < n; ++i)
      words.push_back("t" + std::to_string(i));
    const KnowledgeDocument doc(join_words(words), KnowledgeOrigin::Fused);
    ImportanceRunConfig cfg;
    cfg.num_iterations = 1 + static_cast<int>(meta.next_below(60));
    cfg.dropout_prob = 0.05 + 0.9 * meta.next_double();
    cfg.seed = meta.next();
    int evals = 0;
    const auto table = importance_scores(
        doc,
        [&](const KnowledgeDocument& d) {
          ++evals;
          return dyadic_eval(d.text());
        },
        cfg);
    // Dyadic eval values make both sides exactly representable.
    ACHECK_MSG(table.entry_score_sum() == table.attributed_total,
               "trial " << trial << ": " << table.entry_score_sum()
                        << " != " << table.attributed_total);
    ACHECK(table.eval_calls == evals);
    ACHECK(table.iterations_run == cfg.num_iterations);
  }
}

// --- criterion 4: planted word is recovered with the expected score -------

void check_planted_importance() {
  std::vector<std::string> words;
  for (int i = 0; i < 15; ++i) words.push_back("w" + std::to_string(i));
  const KnowledgeDocument doc(join_words(words), KnowledgeOrigin::Fused);
  // Masking word 7 drops the score by 0.3; nothing else matters.
  auto eval = [](const KnowledgeDocument& d) {
    return d.words()[7] == "MASK" ? 0.6 : 0.9;
  };
  ImportanceRunConfig cfg;
  cfg.num_iterations = 500;
  cfg.dropout_prob = 0.3;
  cfg.seed = 4;
  const auto table = importance_scores(doc, eval, cfg);
  // Masked count is Binomial(500, 0.3): mean 150, sd ~10.25. Score adds 0.3
  // per masking, so expect 45 within 3 sd (~9.22).
  const double score = table.entries.at(7).score;
  ACHECK_MSG(std::abs(score - 45.0) <= 3.0 * std::sqrt(500 * 0.3 * 0.7) * 0.3,
             "planted word score " << score << " outside 45 +- 9.22");
  const auto sorted = table.sorted_descending();
  ACHECK_MSG(sorted.front().word_index == 7,
             "planted word ranked " << sorted.front().word_index);
  // Everyone else only ever bleeds: no other word outscores half the plant.
  for (const auto& ws : sorted) {
    if (ws.word_index == 7) continue;
    ACHECK(ws.score < score / 2.0);
  }
}

// --- criterion 5: composed prompts match the committed goldens ------------

void check_prompt_goldens() {
  const auto req_di = default_templates().req_di;
  const std::vector<std::pair<std::string, KnowledgeOrigin>> variants = {
      {"none", KnowledgeOrigin::Domain},  // origin unused for "none"
      {"domain", KnowledgeOrigin::Domain},
      {"extracted", KnowledgeOrigin::Extracted},
      {"fused", KnowledgeOrigin::Fused},
  };
  const std::vector<std::string> cases = {"case1", "case2", "case4"};
  int checked = 0;
  for (const auto& [variant, origin] : variants) {
    std::optional<KnowledgeDocument> knowledge;
    if (variant != "none") {
      const auto text =
          slurp(test_dir() / "fixtures" / "knowledge" / (variant + ".txt"));
      knowledge = KnowledgeDocument(text, origin);
    }
    for (const auto& c : cases) {
      const auto post_text =
          slurp(test_dir() / "fixtures" / "posts" / (c + ".txt"));
      const auto golden = slurp(test_dir() / "golden" / "compose" /
                                (variant + "_" + c + ".txt"));
      const auto prompt = compose(knowledge, req_di, Post{c, post_text});
      ACHECK_MSG(prompt.user_content() == golden,
                 variant << "_" << c << " diverges from its golden file");
      ++checked;
    }
  }
  ACHECK(checked == 12);
}

// --- criterion 6: knowledge lift and pruning recovery, zero network -------

double accuracy_of(Oracle& oracle,
                   const std::optional<KnowledgeDocument>& knowledge,
                   const Dataset& test) {
  const auto report = evaluate(oracle, default_templates().req_di, knowledge,
                               test, detection_params(), 4);
  return report.metrics.accuracy;
}

void check_directional() {
  RuleBasedMockOracle oracle;
  const Dataset corpus = generate_synthetic_corpus(400, 0.5, 2023);
  SplitSpec spec;
  spec.shot_count = 100;
  spec.seed = 6;
  const SplitResult sr = split(corpus, spec);
  const Dataset dev(sr.shots, "dev");
  const Dataset& test = sr.test;

  ChatRequest ask;
  ask.model = "mock";
  ask.messages = {{Role::User, "Summarize the signals."}};
  const std::string paragraph = oracle.complete(ask).content;
  const KnowledgeDocument fused(paragraph, KnowledgeOrigin::Fused);

  const double acc_none = accuracy_of(oracle, std::nullopt, test);
  const double acc_fused = accuracy_of(oracle, fused, test);
  ACHECK_MSG(acc_fused - acc_none >= 0.10,
             "fused " << acc_fused << " vs bare " << acc_none
                      << ": lift under 10 points");

  // A poisoned paragraph loses part of that lift; pruning the poison word
  // must win at least half of the loss back.
  const KnowledgeDocument poisoned(paragraph + " banana",
                                   KnowledgeOrigin::Fused);
  const double acc_poisoned = accuracy_of(oracle, poisoned, test);
  ACHECK_MSG(acc_poisoned < acc_fused,
             "poisoning did not hurt: " << acc_poisoned);

  ImportanceRunConfig cfg;
  cfg.num_iterations = 60;
  cfg.dropout_prob = 0.3;
  cfg.seed = 9;
  cfg.dev_set = &dev;
  cfg.reserved_test_ids = test.id_set();
  const auto result = optimize_prompt(oracle, poisoned,
                                      default_templates().req_di, cfg, 1,
                                      detection_params(), 4);
  const double acc_optimized = accuracy_of(oracle, result.optimized, test);
  const double gap = acc_fused - acc_poisoned;
  ACHECK_MSG(acc_optimized - acc_poisoned >= gap / 2.0,
             "optimized " << acc_optimized << " recovered less than half of "
                          << gap);
}

// --- criterion 7: warm cache serves repeat runs without the network -------

struct StubServer {
  httplib::Server server;
  std::thread thread;
  std::atomic<int> hits{0};
  int port = 0;

  StubServer() {
    server.Post("/chat/completions",
                [this](const httplib::Request&, httplib::Response& res) {
                  ++hits;
                  nlohmann::json body;
                  body["choices"] = {{{"message", {{"role", "assistant"},
                                                   {"content", "N"}}},
                                      {"finish_reason", "stop"}}};
                  body["usage"] = {{"prompt_tokens", 7},
                                   {"completion_tokens", 1},
                                   {"total_tokens", 8}};
                  res.set_content(body.dump(), "application/json");
                });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~StubServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
};

int run_cli_checked(const std::vector<std::string>& args) {
  std::istringstream in;
  std::ostringstream out, err;
  const int code = run_cli(args, in, out, err);
  ACHECK_MSG(code == 0, "exit " << code << ": " << err.str());
  return code;
}

void check_cache_determinism() {
  TempDir dir("acc-cache");
  const auto data = dir / "posts.jsonl";
  save_dataset(generate_synthetic_corpus(8, 0.5, 41), data,
               DatasetFormat::Jsonl);
  setenv("KIPROMPT_ACCEPT_KEY", "test-key", 1);
  StubServer stub;
  const std::string endpoint = "http://127.0.0.1:" + std::to_string(stub.port);

  auto run_once = [&](const std::string& tag) {
    run_cli_checked({"evaluate", "--data", data.string(), "--oracle", "live",
                     "--endpoint", endpoint, "--api-key-env",
                     "KIPROMPT_ACCEPT_KEY", "--cache-dir",
                     (dir / "cache").string(), "--output",
                     (dir / tag).string()});
  };
  run_once("cold");
  const int cold_hits = stub.hits.load();
  ACHECK_MSG(cold_hits == 8, "expected 8 cold calls, saw " << cold_hits);

  run_once("warm1");
  run_once("warm2");
  ACHECK_MSG(stub.hits.load() == cold_hits,
             "warm runs reached the network: " << stub.hits.load());
  for (const char* name : {"report.csv", "report.json", "report.md",
                           "metrics.csv"}) {
    const auto cold = slurp(dir / "cold" / name);
    ACHECK_MSG(cold == slurp(dir / "warm1" / name) &&
                   cold == slurp(dir / "warm2" / name),
               name << " differs across cache runs");
  }
}

// --- criterion 8: metric edge cases ----------------------------------------

void check_metric_edges() {
  ConfusionCounts all_neg;
  all_neg.tn = 5;
  const auto m1 = metrics_from_counts(all_neg);
  ACHECK(m1.precision == 0.0 && m1.recall == 0.0 && m1.f1 == 0.0);
  ACHECK(m1.accuracy == 1.0);
  ACHECK(!std::isnan(m1.precision) && !std::isnan(m1.f1));

  ConfusionCounts all_missed;
  all_missed.fn = 4;
  const auto m2 = metrics_from_counts(all_missed);
  ACHECK(m2.precision == 0.0 && m2.recall == 0.0 && m2.f1 == 0.0);
  ACHECK(m2.accuracy == 0.0);

  ConfusionCounts perfect;
  perfect.tp = 6;
  perfect.tn = 6;
  const auto m3 = metrics_from_counts(perfect);
  ACHECK(m3.accuracy == 1.0 && m3.precision == 1.0 && m3.recall == 1.0 &&
         m3.f1 == 1.0);

  ConfusionCounts hand;
  hand.tp = 3;
  hand.fp = 1;
  hand.fn = 1;
  hand.tn = 5;
  const auto m4 = metrics_from_counts(hand);
  ACHECK(m4.accuracy == 0.8 && m4.precision == 0.75 && m4.recall == 0.75 &&
         m4.f1 == 0.75);

  bool threw = false;
  try {
    metrics_from_counts(ConfusionCounts{});
  } catch (const ValidationError&) {
    threw = true;
  }
  ACHECK(threw);
}

struct Criterion {
  int number;
  const char* name;
  std::function<void()> body;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "f1-harmonic-identity", check_f1_identity},
      {2, "dropout-reference-equivalence", check_reference_equivalence},
      {3, "score-accounting-invariant", check_accounting_invariant},
      {4, "planted-importance-recovery", check_planted_importance},
      {5, "prompt-golden-files", check_prompt_goldens},
      {6, "end-to-end-directional", check_directional},
      {7, "cache-determinism", check_cache_determinism},
      {8, "metrics-edge-cases", check_metric_edges},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    try {
      c.body();
      std::cout << "ACCEPTANCE PASS: " << c.number << " " << c.name << "\n";
    } catch (const std::exception& e) {
      ++failures;
      std::cout << "ACCEPTANCE FAIL: " << c.number << " " << c.name << ": "
                << e.what() << "\n";
    }
  }
  return failures == 0 ? 0 : 1;
}
