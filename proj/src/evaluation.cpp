#include "kiprompt/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"
#include "kiprompt/errors.hpp"
#include "kiprompt/prompting.hpp"
#include "kiprompt/textutil.hpp"

namespace kiprompt {

double f1_from_precision_recall(double precision, double recall) {
  const double denom = precision + recall;
  if (denom <= 0.0) return 0.0;
  return 2.0 * precision * recall / denom;
}

Metrics metrics_from_counts(const ConfusionCounts& counts) {
  const long total = counts.total();
  if (total <= 0) throw ValidationError("no scored items to derive metrics");
  Metrics m;
  m.accuracy = static_cast<double>(counts.tp + counts.tn) /
               static_cast<double>(total);
  const long predicted_pos = counts.tp + counts.fp;
  const long actual_pos = counts.tp + counts.fn;
  m.precision = predicted_pos > 0 ? static_cast<double>(counts.tp) /
                                        static_cast<double>(predicted_pos)
                                  : 0.0;
  m.recall = actual_pos > 0 ? static_cast<double>(counts.tp) /
                                  static_cast<double>(actual_pos)
                            : 0.0;
  m.f1 = f1_from_precision_recall(m.precision, m.recall);
  return m;
}

std::pair<ConfusionCounts, Metrics> compute_metrics(
    const std::vector<Label>& predictions, const std::vector<Label>& labels) {
  if (predictions.size() != labels.size())
    throw ValidationError("predictions and labels differ in length");
  if (predictions.empty())
    throw ValidationError("cannot compute metrics over zero items");
  ConfusionCounts counts;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool pred_pos = predictions[i] == Label::Positive;
    const bool gold_pos = labels[i] == Label::Positive;
    if (pred_pos && gold_pos) ++counts.tp;
    else if (pred_pos && !gold_pos) ++counts.fp;
    else if (!pred_pos && gold_pos) ++counts.fn;
    else ++counts.tn;
  }
  return {counts, metrics_from_counts(counts)};
}

namespace {

std::string run_config_digest(const PromptTemplate& req_di,
                              const std::optional<KnowledgeDocument>& knowledge,
                              const Dataset& test,
                              const CompletionParams& params) {
  nlohmann::json j;
  j["model"] = params.model;
  j["temperature"] = params.temperature;
  j["max_tokens"] = params.max_tokens;
  j["template"] = {{"name", req_di.name},
                   {"version", req_di.version},
                   {"system_text", req_di.system_text},
                   {"question_text", req_di.question_text},
                   {"user_pattern", req_di.user_pattern}};
  if (knowledge.has_value() && !knowledge->empty()) {
    j["knowledge"] = {{"origin", to_string(knowledge->origin())},
                      {"text", knowledge->text()}};
  } else {
    j["knowledge"] = nullptr;
  }
  auto ids = nlohmann::json::array();
  for (const auto& item : test.items()) ids.push_back(item.post.id);
  j["test_ids"] = std::move(ids);
  return sha256_hex(j.dump());
}

std::string ids_digest(const Dataset& ds) {
  std::vector<std::string> ids;
  ids.reserve(ds.size());
  for (const auto& item : ds.items()) ids.push_back(item.post.id);
  std::sort(ids.begin(), ids.end());
  std::string joined;
  for (const auto& id : ids) {
    joined += id;
    joined += '\n';
  }
  return sha256_hex(joined);
}

}  // namespace

EvalReport evaluate(Oracle& oracle, const PromptTemplate& req_di,
                    const std::optional<KnowledgeDocument>& knowledge,
                    const Dataset& test, const CompletionParams& params,
                    int parallelism) {
  if (test.empty()) throw ValidationError("test set is empty");

  std::vector<Post> posts;
  posts.reserve(test.size());
  for (const auto& item : test.items()) posts.push_back(item.post);
  auto outcomes =
      classify_batch(oracle, req_di, knowledge, posts, params, parallelism);

  EvalReport report;
  report.config_digest = run_config_digest(req_di, knowledge, test, params);
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    PerItemRecord rec;
    rec.id = test[i].post.id;
    rec.label = test[i].label;
    if (outcomes[i].ok()) {
      rec.prediction = outcomes[i].verdict->prediction;
      rec.parse_rule = outcomes[i].verdict->parse_rule;
      if (rec.parse_rule == "fallback") ++report.counts.parse_fallbacks;
      const bool pred_pos = rec.prediction == Label::Positive;
      const bool gold_pos = rec.label == Label::Positive;
      if (pred_pos && gold_pos) ++report.counts.tp;
      else if (pred_pos && !gold_pos) ++report.counts.fp;
      else if (!pred_pos && gold_pos) ++report.counts.fn;
      else ++report.counts.tn;
    } else {
      rec.error = outcomes[i].error;
      ++report.counts.errored;
    }
    report.per_item.push_back(std::move(rec));
  }
  report.metrics = metrics_from_counts(report.counts);
  return report;
}

const char* to_string(KnowledgeSource source) {
  switch (source) {
    case KnowledgeSource::None: return "none";
    case KnowledgeSource::DomainHashtag: return "domain_hashtag";
    case KnowledgeSource::DomainContact: return "domain_contact";
    case KnowledgeSource::DomainSymbol: return "domain_symbol";
    case KnowledgeSource::DomainAll: return "domain_all";
    case KnowledgeSource::Extracted: return "extracted";
    case KnowledgeSource::Fused: return "fused";
    case KnowledgeSource::FusedOptimized: return "fused_optimized";
  }
  return "none";
}

KnowledgeSource parse_knowledge_source(const std::string& name) {
  const std::string s = to_lower(trim(name));
  for (auto src : {KnowledgeSource::None, KnowledgeSource::DomainHashtag,
                   KnowledgeSource::DomainContact, KnowledgeSource::DomainSymbol,
                   KnowledgeSource::DomainAll, KnowledgeSource::Extracted,
                   KnowledgeSource::Fused, KnowledgeSource::FusedOptimized}) {
    if (s == to_string(src)) return src;
  }
  throw ValidationError("unknown knowledge source \"" + name + "\"");
}

AblationSpec AblationSpec::default_spec() {
  AblationSpec spec;
  for (auto src : {KnowledgeSource::None, KnowledgeSource::DomainHashtag,
                   KnowledgeSource::DomainContact, KnowledgeSource::DomainSymbol,
                   KnowledgeSource::DomainAll, KnowledgeSource::Extracted,
                   KnowledgeSource::Fused, KnowledgeSource::FusedOptimized}) {
    spec.variants.push_back({to_string(src), src});
  }
  return spec;
}

std::vector<AblationRow> run_ablation(
    Oracle& oracle, const AblationSpec& spec, const PromptTemplate& req_di,
    const Dataset& test,
    const std::map<KnowledgeSource, KnowledgeDocument>& sources,
    const CompletionParams& params, int parallelism) {
  if (spec.variants.empty())
    throw ValidationError("ablation spec has no variants");
  std::set<std::string> names;
  for (const auto& v : spec.variants) {
    if (!names.insert(v.name).second)
      throw ValidationError("duplicate ablation variant name \"" + v.name +
                            "\"");
  }
  std::vector<AblationRow> rows;
  for (const auto& v : spec.variants) {
    std::optional<KnowledgeDocument> knowledge;
    if (v.source != KnowledgeSource::None) {
      auto it = sources.find(v.source);
      if (it == sources.end())
        throw ValidationError("variant \"" + v.name +
                              "\" needs knowledge source " +
                              to_string(v.source) + ", which was not provided");
      knowledge = it->second;
    }
    EvalReport report =
        evaluate(oracle, req_di, knowledge, test, params, parallelism);
    rows.push_back({v.name, v.source, report.metrics});
  }
  return rows;
}

std::vector<SweepRow> sweep_shots(Oracle& oracle,
                                  std::vector<std::size_t> counts,
                                  const Dataset& base,
                                  const TemplateSet& templates,
                                  const KnowledgePipelineConfig& cfg,
                                  const KnowledgeDocument& domain,
                                  std::uint64_t seed,
                                  const CompletionParams& knowledge_params,
                                  const CompletionParams& detection_params,
                                  int parallelism) {
  if (counts.empty()) throw ValidationError("sweep needs shot counts");
  std::sort(counts.begin(), counts.end());
  counts.erase(std::unique(counts.begin(), counts.end()), counts.end());
  const std::size_t max_count = counts.back();
  if (max_count >= base.size())
    throw ValidationError("largest shot count " + std::to_string(max_count) +
                          " leaves no test items (dataset size " +
                          std::to_string(base.size()) + ")");

  SplitResult sr = split(base, SplitSpec{max_count, seed, false});
  const std::string digest = ids_digest(sr.test);

  std::vector<SweepRow> rows;
  for (std::size_t count : counts) {
    std::optional<KnowledgeDocument> knowledge;
    if (count > 0) {
      std::vector<LabeledPost> shots(sr.shots.begin(),
                                     sr.shots.begin() +
                                         static_cast<long>(count));
      auto extracted = discover_knowledge(oracle, shots, templates.req_k, cfg,
                                          knowledge_params);
      auto summary = summarize_knowledge(oracle, extracted, templates.req_s,
                                         cfg, knowledge_params);
      knowledge = fuse_knowledge(oracle, summary, domain, templates.req_fu,
                                 cfg, knowledge_params);
    }
    EvalReport report = evaluate(oracle, templates.req_di, knowledge, sr.test,
                                 detection_params, parallelism);
    rows.push_back({count, report.metrics, digest});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::string pct(double v) { return fmt_fixed(v * 100.0, 2) + "%"; }

nlohmann::json metrics_json(const Metrics& m) {
  return {{"accuracy", m.accuracy},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1}};
}

nlohmann::json counts_json(const ConfusionCounts& c) {
  return {{"tp", c.tp},
          {"fp", c.fp},
          {"fn", c.fn},
          {"tn", c.tn},
          {"parse_fallbacks", c.parse_fallbacks},
          {"errored", c.errored}};
}

struct SourceLabels {
  const char* prompt_source;
  const char* knowledge;
};

SourceLabels source_labels(KnowledgeSource source) {
  switch (source) {
    case KnowledgeSource::None: return {"No prompt", "No knowledge"};
    case KnowledgeSource::DomainHashtag: return {"Domain expert", "Hashtag"};
    case KnowledgeSource::DomainContact:
      return {"Domain expert", "Contact information"};
    case KnowledgeSource::DomainSymbol:
      return {"Domain expert", "Special symbol"};
    case KnowledgeSource::DomainAll: return {"Domain expert", "All knowledge"};
    case KnowledgeSource::Extracted:
      return {"Few-shot extraction", "Extracted knowledge"};
    case KnowledgeSource::Fused:
      return {"Fusion w/o dropout", "Extracted + domain knowledge"};
    case KnowledgeSource::FusedOptimized:
      return {"Fusion w/ dropout", "Extracted + domain knowledge"};
  }
  return {"", ""};
}

}  // namespace

ReportFormat parse_report_format(const std::string& name) {
  const std::string s = to_lower(trim(name));
  if (s == "csv") return ReportFormat::Csv;
  if (s == "markdown" || s == "md") return ReportFormat::Markdown;
  if (s == "json") return ReportFormat::Json;
  throw ValidationError("unknown report format \"" + name + "\"");
}

std::string render_metrics(const Metrics& m, ReportFormat format) {
  switch (format) {
    case ReportFormat::Csv:
      return "accuracy,precision,recall,f1\n" + fmt_fixed(m.accuracy, 4) +
             "," + fmt_fixed(m.precision, 4) + "," + fmt_fixed(m.recall, 4) +
             "," + fmt_fixed(m.f1, 4) + "\n";
    case ReportFormat::Markdown:
      return "| Accuracy | Precision | Recall | F1 Score |\n"
             "|---|---|---|---|\n| " +
             pct(m.accuracy) + " | " + pct(m.precision) + " | " +
             pct(m.recall) + " | " + pct(m.f1) + " |\n";
    case ReportFormat::Json:
      return metrics_json(m).dump(2) + "\n";
  }
  return "";
}

std::string render_eval_report(const EvalReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::Csv: {
      std::string out = "id,label,prediction,parse_rule,error\n";
      for (const auto& rec : report.per_item) {
        out += csv_field(rec.id);
        out += ',';
        out += label_letter(rec.label);
        out += ',';
        out += rec.error.empty() ? label_letter(rec.prediction) : "";
        out += ',';
        out += rec.parse_rule;
        out += ',';
        out += csv_field(rec.error);
        out += '\n';
      }
      return out;
    }
    case ReportFormat::Markdown: {
      const auto& c = report.counts;
      std::string out = "## Evaluation report\n\n";
      out += "Config digest: `" + report.config_digest + "`\n\n";
      out += render_metrics(report.metrics, ReportFormat::Markdown);
      out += "\nCounts: tp=" + std::to_string(c.tp) +
             ", fp=" + std::to_string(c.fp) + ", fn=" + std::to_string(c.fn) +
             ", tn=" + std::to_string(c.tn) +
             ", parse_fallbacks=" + std::to_string(c.parse_fallbacks) +
             ", errored=" + std::to_string(c.errored) + "\n";
      return out;
    }
    case ReportFormat::Json: {
      nlohmann::json j;
      j["config_digest"] = report.config_digest;
      j["counts"] = counts_json(report.counts);
      j["metrics"] = metrics_json(report.metrics);
      auto items = nlohmann::json::array();
      for (const auto& rec : report.per_item) {
        nlohmann::json r;
        r["id"] = rec.id;
        r["label"] = label_letter(rec.label);
        if (rec.error.empty()) {
          r["prediction"] = label_letter(rec.prediction);
          r["parse_rule"] = rec.parse_rule;
        } else {
          r["error"] = rec.error;
        }
        items.push_back(std::move(r));
      }
      j["per_item"] = std::move(items);
      return j.dump(2) + "\n";
    }
  }
  return "";
}

std::string render_ablation(const std::vector<AblationRow>& rows,
                            ReportFormat format) {
  switch (format) {
    case ReportFormat::Csv: {
      std::string out =
          "variant,prompt_source,knowledge,accuracy,precision,recall,f1\n";
      for (const auto& row : rows) {
        auto labels = source_labels(row.source);
        out += csv_field(row.variant);
        out += ',';
        out += csv_field(labels.prompt_source);
        out += ',';
        out += csv_field(labels.knowledge);
        out += ',';
        out += fmt_fixed(row.metrics.accuracy, 4) + "," +
               fmt_fixed(row.metrics.precision, 4) + "," +
               fmt_fixed(row.metrics.recall, 4) + "," +
               fmt_fixed(row.metrics.f1, 4) + "\n";
      }
      return out;
    }
    case ReportFormat::Markdown: {
      std::string out =
          "| Prompt source | Knowledge | Accuracy | Precision | Recall | F1 "
          "Score |\n|---|---|---|---|---|---|\n";
      for (const auto& row : rows) {
        auto labels = source_labels(row.source);
        out += std::string("| ") + labels.prompt_source + " | " +
               labels.knowledge + " | " + pct(row.metrics.accuracy) + " | " +
               pct(row.metrics.precision) + " | " + pct(row.metrics.recall) +
               " | " + pct(row.metrics.f1) + " |\n";
      }
      return out;
    }
    case ReportFormat::Json: {
      auto arr = nlohmann::json::array();
      for (const auto& row : rows) {
        auto labels = source_labels(row.source);
        arr.push_back({{"variant", row.variant},
                       {"source", to_string(row.source)},
                       {"prompt_source", labels.prompt_source},
                       {"knowledge", labels.knowledge},
                       {"metrics", metrics_json(row.metrics)}});
      }
      return arr.dump(2) + "\n";
    }
  }
  return "";
}

std::string render_sweep(const std::vector<SweepRow>& rows,
                         ReportFormat format) {
  switch (format) {
    case ReportFormat::Csv: {
      std::string out = "shots,accuracy,precision,recall,f1,test_digest\n";
      for (const auto& row : rows) {
        out += std::to_string(row.shots) + "," +
               fmt_fixed(row.metrics.accuracy, 4) + "," +
               fmt_fixed(row.metrics.precision, 4) + "," +
               fmt_fixed(row.metrics.recall, 4) + "," +
               fmt_fixed(row.metrics.f1, 4) + "," + row.test_digest + "\n";
      }
      return out;
    }
    case ReportFormat::Markdown: {
      std::string out =
          "| Shot number | Accuracy | Precision | Recall | F1 Score |\n"
          "|---|---|---|---|---|\n";
      for (const auto& row : rows) {
        out += "| " + std::to_string(row.shots) + " | " +
               pct(row.metrics.accuracy) + " | " + pct(row.metrics.precision) +
               " | " + pct(row.metrics.recall) + " | " + pct(row.metrics.f1) +
               " |\n";
      }
      return out;
    }
    case ReportFormat::Json: {
      auto arr = nlohmann::json::array();
      for (const auto& row : rows) {
        arr.push_back({{"shots", row.shots},
                       {"metrics", metrics_json(row.metrics)},
                       {"test_digest", row.test_digest}});
      }
      return arr.dump(2) + "\n";
    }
  }
  return "";
}

void emit_report(const std::string& rendered,
                 const std::filesystem::path& path) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  out << rendered;
  if (!out) throw IoError("report write failed: " + path.string());
}

void emit_report(const EvalReport& report, ReportFormat format,
                 const std::filesystem::path& path) {
  emit_report(render_eval_report(report, format), path);
}

void emit_report(const std::vector<AblationRow>& rows, ReportFormat format,
                 const std::filesystem::path& path) {
  emit_report(render_ablation(rows, format), path);
}

void emit_report(const std::vector<SweepRow>& rows, ReportFormat format,
                 const std::filesystem::path& path) {
  emit_report(render_sweep(rows, format), path);
}

}  // namespace kiprompt
