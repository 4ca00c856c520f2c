#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kiprompt/corpus.hpp"
#include "kiprompt/knowledge.hpp"
#include "kiprompt/oracle.hpp"
#include "kiprompt/template.hpp"

namespace kiprompt {

struct ConfusionCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  long tn = 0;
  long parse_fallbacks = 0;  // scored items that hit the parse fallback
  long errored = 0;          // items excluded because the oracle failed

  long total() const { return tp + fp + fn + tn; }
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Harmonic mean; 0 when precision + recall == 0 (never NaN).
double f1_from_precision_recall(double precision, double recall);

/// Derive metrics from counts. The positive class is drug trafficking.
/// Zero denominators yield 0. Requires at least one scored item.
Metrics metrics_from_counts(const ConfusionCounts& counts);

/// Score aligned prediction/label vectors (equal length, non-empty).
std::pair<ConfusionCounts, Metrics> compute_metrics(
    const std::vector<Label>& predictions, const std::vector<Label>& labels);

struct PerItemRecord {
  std::string id;
  Label label = Label::Negative;
  Label prediction = Label::Negative;
  std::string parse_rule;
  std::string error;  // non-empty means the item was excluded from counts
};

struct EvalReport {
  std::string config_digest;  // SHA-256 over the run configuration
  ConfusionCounts counts;
  Metrics metrics;
  std::vector<PerItemRecord> per_item;  // test order
};

/// Classify the whole test set with one knowledge variant and score it.
/// Deterministic given (oracle behavior, template, knowledge, test).
EvalReport evaluate(Oracle& oracle, const PromptTemplate& req_di,
                    const std::optional<KnowledgeDocument>& knowledge,
                    const Dataset& test, const CompletionParams& params,
                    int parallelism = 1);

enum class KnowledgeSource {
  None,
  DomainHashtag,
  DomainContact,
  DomainSymbol,
  DomainAll,
  Extracted,
  Fused,
  FusedOptimized
};

const char* to_string(KnowledgeSource source);
KnowledgeSource parse_knowledge_source(const std::string& name);

struct AblationVariant {
  std::string name;
  KnowledgeSource source = KnowledgeSource::None;
};

struct AblationSpec {
  std::vector<AblationVariant> variants;

  /// The eight standard rows: none, the four domain-expert variants, the
  /// extracted summary, the fused paragraph, and the optimized fusion.
  static AblationSpec default_spec();
};

struct AblationRow {
  std::string variant;
  KnowledgeSource source = KnowledgeSource::None;
  Metrics metrics;
};

/// One evaluate call per variant, all on the same test set. The "none"
/// variant composes with no knowledge block; every other variant looks up
/// its document in sources (missing -> ValidationError). Variant names
/// must be unique.
std::vector<AblationRow> run_ablation(
    Oracle& oracle, const AblationSpec& spec, const PromptTemplate& req_di,
    const Dataset& test,
    const std::map<KnowledgeSource, KnowledgeDocument>& sources,
    const CompletionParams& params, int parallelism = 1);

struct SweepRow {
  std::size_t shots = 0;
  Metrics metrics;
  std::string test_digest;  // SHA-256 over the sorted test ids
};

/// Shot-count sweep sharing one test set: the dataset is split once at the
/// largest count; each row uses the first `count` drawn shots (so smaller
/// pools nest inside larger ones), runs the discover/summarize/fuse
/// pipeline, and evaluates on the common test remainder. A count of 0 is
/// the no-knowledge row. Rows come back ordered by shot count.
std::vector<SweepRow> sweep_shots(Oracle& oracle,
                                  std::vector<std::size_t> counts,
                                  const Dataset& base,
                                  const TemplateSet& templates,
                                  const KnowledgePipelineConfig& cfg,
                                  const KnowledgeDocument& domain,
                                  std::uint64_t seed,
                                  const CompletionParams& knowledge_params,
                                  const CompletionParams& detection_params,
                                  int parallelism = 1);

enum class ReportFormat { Csv, Markdown, Json };

ReportFormat parse_report_format(const std::string& name);

std::string render_metrics(const Metrics& metrics, ReportFormat format);
std::string render_eval_report(const EvalReport& report, ReportFormat format);
std::string render_ablation(const std::vector<AblationRow>& rows,
                            ReportFormat format);
std::string render_sweep(const std::vector<SweepRow>& rows,
                         ReportFormat format);

/// Write rendered report bytes to a file. Rendering carries no timestamps
/// or machine state, so identical inputs give byte-identical files.
void emit_report(const std::string& rendered,
                 const std::filesystem::path& path);
void emit_report(const EvalReport& report, ReportFormat format,
                 const std::filesystem::path& path);
void emit_report(const std::vector<AblationRow>& rows, ReportFormat format,
                 const std::filesystem::path& path);
void emit_report(const std::vector<SweepRow>& rows, ReportFormat format,
                 const std::filesystem::path& path);

}  // namespace kiprompt
