#include "kiprompt/cli.hpp"

#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <unordered_set>

#include "CLI11.hpp"
#include "json.hpp"

#include "kiprompt/errors.hpp"
#include "kiprompt/evaluation.hpp"
#include "kiprompt/optimizer.hpp"
#include "kiprompt/prompting.hpp"
#include "kiprompt/textutil.hpp"

namespace kiprompt {
namespace {

using nlohmann::json;

template <typename T>
void read_key(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

void read_path(const json& j, const char* key, std::filesystem::path& into) {
  if (j.contains(key)) into = std::filesystem::path(j.at(key).get<std::string>());
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config file must hold a JSON object");

  static const std::unordered_set<std::string> known = {
      "dataset_path", "dataset_format", "shots", "seed", "stratified",
      "oracle_mode", "endpoint_url", "api_key_env_var", "max_in_flight",
      "timeout_ms", "requests_per_minute", "retry_max_attempts",
      "retry_base_backoff_ms", "model", "templates_dir",
      "domain_knowledge_path", "batch_size", "max_knowledge_words",
      "detection_temperature", "detection_max_tokens",
      "generation_temperature", "generation_max_tokens", "iterations",
      "dropout_prob", "opt_seed", "top_k_negative", "mean_attribution",
      "ablation_variants", "sweep_counts", "dedup_threshold", "output_dir",
      "cache_dir", "no_cache", "parallelism"};
  for (const auto& item : j.items()) {
    if (!known.count(item.key()))
      throw ValidationError("config file: unknown key \"" + item.key() + "\"");
  }

  RunConfig rc;
  read_path(j, "dataset_path", rc.dataset_path);
  if (j.contains("dataset_format"))
    rc.dataset_format = parse_dataset_format(j.at("dataset_format").get<std::string>());
  read_key(j, "shots", rc.split.shot_count);
  read_key(j, "seed", rc.split.seed);
  read_key(j, "stratified", rc.split.stratified);
  read_key(j, "oracle_mode", rc.oracle_mode);
  read_key(j, "endpoint_url", rc.oracle.endpoint_url);
  read_key(j, "api_key_env_var", rc.oracle.api_key_env_var);
  read_key(j, "max_in_flight", rc.oracle.max_in_flight);
  read_key(j, "timeout_ms", rc.oracle.timeout_ms);
  read_key(j, "requests_per_minute", rc.oracle.requests_per_minute);
  read_key(j, "retry_max_attempts", rc.oracle.retry.max_attempts);
  read_key(j, "retry_base_backoff_ms", rc.oracle.retry.base_backoff_ms);
  read_key(j, "model", rc.model);
  read_path(j, "templates_dir", rc.templates_dir);
  read_path(j, "domain_knowledge_path", rc.domain_knowledge_path);
  read_key(j, "batch_size", rc.pipeline.batch_size);
  read_key(j, "max_knowledge_words", rc.pipeline.max_knowledge_words);
  read_key(j, "detection_temperature", rc.detection_temperature);
  read_key(j, "detection_max_tokens", rc.detection_max_tokens);
  read_key(j, "generation_temperature", rc.generation_temperature);
  read_key(j, "generation_max_tokens", rc.generation_max_tokens);
  read_key(j, "iterations", rc.iterations);
  read_key(j, "dropout_prob", rc.dropout_prob);
  read_key(j, "opt_seed", rc.opt_seed);
  read_key(j, "top_k_negative", rc.top_k_negative);
  read_key(j, "mean_attribution", rc.mean_attribution);
  read_key(j, "ablation_variants", rc.ablation_variants);
  read_key(j, "sweep_counts", rc.sweep_counts);
  read_key(j, "dedup_threshold", rc.dedup_threshold);
  read_path(j, "output_dir", rc.output_dir);
  read_path(j, "cache_dir", rc.cache_dir);
  read_key(j, "no_cache", rc.no_cache);
  read_key(j, "parallelism", rc.parallelism);
  return rc;
}

namespace {

/// Flags shared by most subcommands. std::optional distinguishes "given on
/// the command line" from "left at default" so flags override config values
/// without clobbering them with defaults.
struct CommonFlags {
  std::optional<std::string> config;
  std::optional<std::string> data;
  std::optional<std::string> format;
  std::optional<std::size_t> shots;
  std::optional<std::uint64_t> seed;
  bool stratified = false;
  std::optional<std::string> oracle_mode;
  std::optional<std::string> endpoint;
  std::optional<std::string> api_key_env;
  std::optional<std::string> model;
  std::optional<std::string> templates_dir;
  std::optional<std::string> domain_knowledge;
  std::optional<std::string> output_dir;
  std::optional<std::string> cache_dir;
  bool no_cache = false;
  std::optional<int> parallelism;
  std::optional<int> batch_size;
  std::optional<std::size_t> max_knowledge_words;
  std::optional<double> gen_temperature;
  std::optional<double> det_temperature;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run-config file; flags override its values");
  // The dataset may come from --data or from the config file, so the flag is
  // never required at parse time; require_dataset enforces it after merging.
  cmd->add_option("--data", f.data, "dataset file (jsonl or csv)");
  cmd->add_option("--format", f.format, "dataset format: jsonl or csv (default jsonl)");
  cmd->add_option("--shots", f.shots, "number of labeled posts drawn as the shot pool");
  cmd->add_option("--seed", f.seed, "RNG seed for splits");
  cmd->add_flag("--stratified", f.stratified, "preserve the label ratio when drawing shots");
  cmd->add_option("--oracle", f.oracle_mode,
                  "oracle backend: live, rule-mock, or mock:<script.json>");
  cmd->add_option("--endpoint", f.endpoint, "chat-completion endpoint base URL");
  cmd->add_option("--api-key-env", f.api_key_env,
                  "name of the environment variable holding the API key");
  cmd->add_option("--model", f.model, "model name sent with every request");
  cmd->add_option("--templates", f.templates_dir, "directory holding the four prompt templates");
  cmd->add_option("--domain-knowledge", f.domain_knowledge, "domain knowledge JSON file");
  cmd->add_option("--output", f.output_dir, "directory for generated reports and artifacts");
  cmd->add_option("--cache-dir", f.cache_dir, "oracle response cache directory");
  cmd->add_flag("--no-cache", f.no_cache, "bypass the response cache");
  cmd->add_option("--parallelism", f.parallelism, "worker threads for detection calls");
  cmd->add_option("--batch-size", f.batch_size, "shots per knowledge-discovery request");
  cmd->add_option("--max-knowledge-words", f.max_knowledge_words,
                  "word cap applied to summarized and fused knowledge");
  cmd->add_option("--generation-temperature", f.gen_temperature,
                  "sampling temperature for knowledge-building requests");
  cmd->add_option("--detection-temperature", f.det_temperature,
                  "sampling temperature for detection requests");
}

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig rc;
  if (f.config) rc = load_run_config(*f.config);
  if (f.data) rc.dataset_path = *f.data;
  if (f.format) rc.dataset_format = parse_dataset_format(*f.format);
  if (f.shots) rc.split.shot_count = *f.shots;
  if (f.seed) rc.split.seed = *f.seed;
  if (f.stratified) rc.split.stratified = true;
  if (f.oracle_mode) rc.oracle_mode = *f.oracle_mode;
  if (f.endpoint) rc.oracle.endpoint_url = *f.endpoint;
  if (f.api_key_env) rc.oracle.api_key_env_var = *f.api_key_env;
  if (f.model) rc.model = *f.model;
  if (f.templates_dir) rc.templates_dir = *f.templates_dir;
  if (f.domain_knowledge) rc.domain_knowledge_path = *f.domain_knowledge;
  if (f.output_dir) rc.output_dir = *f.output_dir;
  if (f.cache_dir) rc.cache_dir = *f.cache_dir;
  if (f.no_cache) rc.no_cache = true;
  if (f.parallelism) rc.parallelism = *f.parallelism;
  if (f.batch_size) rc.pipeline.batch_size = *f.batch_size;
  if (f.max_knowledge_words) rc.pipeline.max_knowledge_words = *f.max_knowledge_words;
  if (f.gen_temperature) rc.generation_temperature = *f.gen_temperature;
  if (f.det_temperature) rc.detection_temperature = *f.det_temperature;
  if (rc.parallelism < 1) throw ValidationError("parallelism must be at least 1");
  return rc;
}

/// Owns the oracle chain for one command. top() is what callers talk to;
/// with caching enabled that is a CachedOracle wrapping the real backend.
struct OracleStack {
  std::unique_ptr<Oracle> base;
  std::unique_ptr<CachedOracle> cached;

  Oracle& top() { return cached ? static_cast<Oracle&>(*cached) : *base; }
};

OracleStack make_oracle_stack(const RunConfig& rc) {
  OracleStack stack;
  if (rc.oracle_mode == "live") {
    stack.base = std::make_unique<HttpOracle>(rc.oracle);
  } else if (rc.oracle_mode == "rule-mock") {
    stack.base = std::make_unique<RuleBasedMockOracle>();
  } else if (rc.oracle_mode.rfind("mock:", 0) == 0) {
    stack.base = load_mock_script(rc.oracle_mode.substr(5));
  } else {
    throw ValidationError("unknown oracle mode \"" + rc.oracle_mode +
                          "\" (expected live, rule-mock, or mock:<script.json>)");
  }
  if (!rc.no_cache) stack.cached = std::make_unique<CachedOracle>(*stack.base, rc.cache_dir);
  return stack;
}

TemplateSet resolve_templates(const RunConfig& rc) {
  if (std::filesystem::exists(rc.templates_dir / "req_di.json"))
    return load_template_set(rc.templates_dir);
  return default_templates();
}

std::vector<DomainKnowledgeEntry> resolve_domain_entries(const RunConfig& rc) {
  if (std::filesystem::exists(rc.domain_knowledge_path))
    return load_domain_knowledge(rc.domain_knowledge_path);
  return default_domain_knowledge();
}

CompletionParams detection_params_for(const RunConfig& rc) {
  return CompletionParams{rc.model, rc.detection_temperature, rc.detection_max_tokens};
}

CompletionParams generation_params_for(const RunConfig& rc) {
  return CompletionParams{rc.model, rc.generation_temperature, rc.generation_max_tokens};
}

Dataset require_dataset(const RunConfig& rc) {
  if (rc.dataset_path.empty())
    throw ValidationError("no dataset given; pass --data or set dataset_path in the config");
  return load_dataset(rc.dataset_path, rc.dataset_format);
}

Dataset shots_as_dataset(const SplitResult& sr) {
  return Dataset(sr.shots, "shot-pool");
}

std::filesystem::path ensure_output_dir(const RunConfig& rc) {
  std::error_code ec;
  std::filesystem::create_directories(rc.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + rc.output_dir.string());
  return rc.output_dir;
}

std::string metrics_line(const Metrics& m) {
  std::ostringstream os;
  os << "accuracy=" << fmt_fixed(m.accuracy, 4) << " precision=" << fmt_fixed(m.precision, 4)
     << " recall=" << fmt_fixed(m.recall, 4) << " f1=" << fmt_fixed(m.f1, 4);
  return os.str();
}

// --- subcommand bodies -----------------------------------------------------

int cmd_ingest(const RunConfig& rc, const std::optional<std::string>& save_path,
               std::ostream& out) {
  Dataset raw = require_dataset(rc);
  Dataset clean = dedup(raw, rc.dedup_threshold);
  out << clean.size() << " total, " << clean.positive_count() << " positive, "
      << clean.negative_count() << " negative\n";
  out << "near-duplicates removed: " << (raw.size() - clean.size()) << " (jaccard >= "
      << fmt_fixed(rc.dedup_threshold, 2) << ")\n";
  if (save_path) {
    DatasetFormat fmt = rc.dataset_format;
    std::string ext = std::filesystem::path(*save_path).extension().string();
    if (ext == ".csv") fmt = DatasetFormat::Csv;
    if (ext == ".jsonl") fmt = DatasetFormat::Jsonl;
    save_dataset(clean, *save_path, fmt);
    out << "wrote " << *save_path << "\n";
  }
  return 0;
}

int cmd_build_knowledge(const RunConfig& rc, bool domain_only, std::ostream& out) {
  TemplateSet templates = resolve_templates(rc);
  std::vector<DomainKnowledgeEntry> entries = resolve_domain_entries(rc);
  KnowledgeDocument domain = render_domain_knowledge(entries);
  std::filesystem::path dir = ensure_output_dir(rc);

  save_knowledge(domain, dir / "domain.json", "");
  out << "domain knowledge: " << domain.words().size() << " words -> "
      << (dir / "domain.json").string() << "\n";
  if (domain_only) return 0;

  Dataset ds = require_dataset(rc);
  if (rc.split.shot_count == 0)
    throw ValidationError("build-knowledge needs --shots > 0 to draw labeled examples");
  SplitResult sr = split(ds, rc.split);

  OracleStack oracle = make_oracle_stack(rc);
  CompletionParams gen = generation_params_for(rc);

  std::vector<KnowledgeDocument> extracted =
      discover_knowledge(oracle.top(), sr.shots, templates.req_k, rc.pipeline, gen);
  std::string joined;
  for (std::size_t i = 0; i < extracted.size(); ++i) {
    if (i) joined += "\n\n";
    joined += extracted[i].text();
    std::ostringstream name;
    name << "extracted_" << (i < 9 ? "0" : "") << (i + 1) << ".json";
    save_knowledge(extracted[i], dir / name.str(), "");
  }
  out << "extracted " << extracted.size() << " knowledge batch(es) from " << sr.shots.size()
      << " shots\n";

  KnowledgeDocument summarized =
      summarize_knowledge(oracle.top(), extracted, templates.req_s, rc.pipeline, gen);
  save_knowledge(summarized, dir / "summarized.json", sha256_hex(joined));
  out << "summarized knowledge: " << summarized.words().size() << " words -> "
      << (dir / "summarized.json").string() << "\n";

  KnowledgeDocument fused =
      fuse_knowledge(oracle.top(), summarized, domain, templates.req_fu, rc.pipeline, gen);
  save_knowledge(fused, dir / "fused.json", sha256_hex(summarized.text()));
  out << "fused knowledge: " << fused.words().size() << " words -> "
      << (dir / "fused.json").string() << "\n";
  return 0;
}

int cmd_optimize(const RunConfig& rc, const std::string& knowledge_path, std::ostream& out) {
  Dataset ds = require_dataset(rc);
  if (rc.split.shot_count == 0)
    throw ValidationError("optimize needs --shots > 0; the shot pool is the dev set");
  SplitResult sr = split(ds, rc.split);
  Dataset dev = shots_as_dataset(sr);

  KnowledgeDocument knowledge = load_knowledge(knowledge_path);
  OracleStack oracle = make_oracle_stack(rc);
  TemplateSet templates = resolve_templates(rc);

  ImportanceRunConfig cfg;
  cfg.num_iterations = rc.iterations;
  cfg.dropout_prob = rc.dropout_prob;
  cfg.seed = rc.opt_seed;
  cfg.mean_attribution = rc.mean_attribution;
  cfg.dev_set = &dev;
  cfg.reserved_test_ids = sr.test.id_set();

  OptimizeResult result =
      optimize_prompt(oracle.top(), knowledge, templates.req_di, cfg, rc.top_k_negative,
                      detection_params_for(rc), rc.parallelism);

  std::filesystem::path dir = ensure_output_dir(rc);
  save_knowledge(result.optimized, dir / "optimized.json", sha256_hex(knowledge.text()));
  {
    std::ofstream csv(dir / "importance.csv");
    csv << importance_table_csv(result.table);
    std::ofstream md(dir / "importance.md");
    md << importance_table_markdown(result.table);
  }

  std::size_t pruned = knowledge.words().size() - result.optimized.words().size();
  out << "baseline f1=" << fmt_fixed(result.table.baseline_f1, 4) << " over " << dev.size()
      << " dev posts; " << result.table.eval_calls << " eval call(s)\n";
  out << "pruned " << pruned << " of " << knowledge.words().size() << " words -> "
      << (dir / "optimized.json").string() << "\n";
  out << "importance table -> " << (dir / "importance.csv").string() << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& rc, const std::optional<std::string>& knowledge_path,
                 std::ostream& out) {
  Dataset ds = require_dataset(rc);
  SplitResult sr = split(ds, rc.split);

  std::optional<KnowledgeDocument> knowledge;
  if (knowledge_path && *knowledge_path != "none") knowledge = load_knowledge(*knowledge_path);

  OracleStack oracle = make_oracle_stack(rc);
  TemplateSet templates = resolve_templates(rc);

  EvalReport report = evaluate(oracle.top(), templates.req_di, knowledge, sr.test,
                               detection_params_for(rc), rc.parallelism);

  std::filesystem::path dir = ensure_output_dir(rc);
  emit_report(report, ReportFormat::Json, dir / "report.json");
  emit_report(report, ReportFormat::Csv, dir / "report.csv");
  emit_report(report, ReportFormat::Markdown, dir / "report.md");
  {
    std::ofstream metrics(dir / "metrics.csv");
    metrics << render_metrics(report.metrics, ReportFormat::Csv);
  }

  out << metrics_line(report.metrics) << "\n";
  out << "test posts: " << sr.test.size() << "; parse fallbacks: "
      << report.counts.parse_fallbacks << "; errored: " << report.counts.errored << "\n";
  out << "reports -> " << (dir / "report.json").string() << ", " << (dir / "report.csv").string()
      << ", " << (dir / "report.md").string() << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& rc, std::ostream& out) {
  Dataset ds = require_dataset(rc);
  SplitResult sr = split(ds, rc.split);

  AblationSpec spec;
  if (rc.ablation_variants.empty()) {
    spec = AblationSpec::default_spec();
  } else {
    for (const std::string& name : rc.ablation_variants)
      spec.variants.push_back(AblationVariant{name, parse_knowledge_source(name)});
  }

  bool needs_pipeline = false;
  bool needs_optimized = false;
  for (const AblationVariant& v : spec.variants) {
    if (v.source == KnowledgeSource::Extracted || v.source == KnowledgeSource::Fused ||
        v.source == KnowledgeSource::FusedOptimized)
      needs_pipeline = true;
    if (v.source == KnowledgeSource::FusedOptimized) needs_optimized = true;
  }

  std::vector<DomainKnowledgeEntry> entries = resolve_domain_entries(rc);
  auto entry_for = [&](KnowledgeCategory cat) {
    for (const DomainKnowledgeEntry& e : entries)
      if (e.category == cat) return std::vector<DomainKnowledgeEntry>{e};
    throw ValidationError(std::string("domain knowledge file lacks the ") + to_string(cat) +
                          " category");
  };

  std::map<KnowledgeSource, KnowledgeDocument> sources;
  sources[KnowledgeSource::DomainHashtag] =
      render_domain_knowledge(entry_for(KnowledgeCategory::Hashtag));
  sources[KnowledgeSource::DomainContact] =
      render_domain_knowledge(entry_for(KnowledgeCategory::ContactInformation));
  sources[KnowledgeSource::DomainSymbol] =
      render_domain_knowledge(entry_for(KnowledgeCategory::SpecialSymbol));
  KnowledgeDocument domain_all = render_domain_knowledge(entries);
  sources[KnowledgeSource::DomainAll] = domain_all;

  OracleStack oracle = make_oracle_stack(rc);
  TemplateSet templates = resolve_templates(rc);
  CompletionParams det = detection_params_for(rc);

  if (needs_pipeline) {
    if (sr.shots.empty())
      throw ValidationError("the extracted/fused variants need --shots > 0");
    CompletionParams gen = generation_params_for(rc);
    std::vector<KnowledgeDocument> extracted =
        discover_knowledge(oracle.top(), sr.shots, templates.req_k, rc.pipeline, gen);
    KnowledgeDocument summarized =
        summarize_knowledge(oracle.top(), extracted, templates.req_s, rc.pipeline, gen);
    sources[KnowledgeSource::Extracted] = summarized;
    KnowledgeDocument fused =
        fuse_knowledge(oracle.top(), summarized, domain_all, templates.req_fu, rc.pipeline, gen);
    sources[KnowledgeSource::Fused] = fused;
    if (needs_optimized) {
      Dataset dev = shots_as_dataset(sr);
      ImportanceRunConfig cfg;
      cfg.num_iterations = rc.iterations;
      cfg.dropout_prob = rc.dropout_prob;
      cfg.seed = rc.opt_seed;
      cfg.mean_attribution = rc.mean_attribution;
      cfg.dev_set = &dev;
      cfg.reserved_test_ids = sr.test.id_set();
      OptimizeResult opt = optimize_prompt(oracle.top(), fused, templates.req_di, cfg,
                                           rc.top_k_negative, det, rc.parallelism);
      sources[KnowledgeSource::FusedOptimized] = opt.optimized;
    }
  }

  std::vector<AblationRow> rows = run_ablation(oracle.top(), spec, templates.req_di, sr.test,
                                               sources, det, rc.parallelism);

  std::filesystem::path dir = ensure_output_dir(rc);
  emit_report(rows, ReportFormat::Csv, dir / "ablation.csv");
  emit_report(rows, ReportFormat::Markdown, dir / "ablation.md");
  emit_report(rows, ReportFormat::Json, dir / "ablation.json");

  out << render_ablation(rows, ReportFormat::Markdown);
  out << "ablation tables -> " << (dir / "ablation.csv").string() << ", "
      << (dir / "ablation.md").string() << ", " << (dir / "ablation.json").string() << "\n";
  return 0;
}

int cmd_sweep(const RunConfig& rc, std::ostream& out) {
  Dataset ds = require_dataset(rc);
  if (rc.sweep_counts.empty()) throw ValidationError("sweep needs at least one shot count");

  OracleStack oracle = make_oracle_stack(rc);
  TemplateSet templates = resolve_templates(rc);
  std::vector<DomainKnowledgeEntry> entries = resolve_domain_entries(rc);
  KnowledgeDocument domain_all = render_domain_knowledge(entries);

  std::vector<SweepRow> rows =
      sweep_shots(oracle.top(), rc.sweep_counts, ds, templates, rc.pipeline, domain_all,
                  rc.split.seed, generation_params_for(rc), detection_params_for(rc),
                  rc.parallelism);

  std::filesystem::path dir = ensure_output_dir(rc);
  emit_report(rows, ReportFormat::Csv, dir / "sweep.csv");
  emit_report(rows, ReportFormat::Markdown, dir / "sweep.md");
  emit_report(rows, ReportFormat::Json, dir / "sweep.json");

  out << render_sweep(rows, ReportFormat::Markdown);
  out << "sweep tables -> " << (dir / "sweep.csv").string() << ", " << (dir / "sweep.md").string()
      << ", " << (dir / "sweep.json").string() << "\n";
  return 0;
}

int cmd_classify(const RunConfig& rc, const std::vector<std::string>& texts,
                 const std::optional<std::string>& input_path,
                 const std::optional<std::string>& knowledge_path, std::istream& in,
                 std::ostream& out) {
  std::vector<std::string> lines = texts;
  if (lines.empty()) {
    std::istream* src = &in;
    std::ifstream file;
    if (input_path) {
      file.open(*input_path);
      if (!file) throw IoError("cannot open input file: " + *input_path);
      src = &file;
    }
    std::string line;
    while (std::getline(*src, line)) {
      if (!trim(line).empty()) lines.push_back(line);
    }
  }
  if (lines.empty()) throw ValidationError("classify: no input texts (use --text, --input, or stdin)");

  std::optional<KnowledgeDocument> knowledge;
  if (knowledge_path && *knowledge_path != "none") knowledge = load_knowledge(*knowledge_path);

  OracleStack oracle = make_oracle_stack(rc);
  TemplateSet templates = resolve_templates(rc);
  CompletionParams det = detection_params_for(rc);

  for (const std::string& text : lines) {
    DetectionVerdict verdict =
        classify(oracle.top(), templates.req_di, knowledge, Post{"input", text}, det);
    out << label_letter(verdict.prediction) << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"knowledge-informed drug-trafficking post detection"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "print help for every subcommand");

  CommonFlags ingest_f, build_f, opt_f, eval_f, ablate_f, sweep_f, classify_f;

  auto* ingest = app.add_subcommand("ingest", "load a dataset, drop near-duplicates, report counts");
  add_common_flags(ingest, ingest_f);
  std::optional<std::string> ingest_save;
  ingest->add_option("--save", ingest_save, "write the cleaned dataset to this path");

  auto* build = app.add_subcommand("build-knowledge",
                                   "extract, summarize, and fuse knowledge from labeled shots");
  add_common_flags(build, build_f);
  bool domain_only = false;
  build->add_flag("--domain-only", domain_only, "render only the curated domain knowledge");

  auto* optimize = app.add_subcommand("optimize",
                                      "score knowledge words by dropout and prune harmful ones");
  add_common_flags(optimize, opt_f);
  std::string opt_knowledge;
  optimize->add_option("--knowledge", opt_knowledge, "knowledge JSON to optimize")->required();
  std::optional<int> opt_iterations;
  optimize->add_option("--iterations", opt_iterations, "dropout iterations");
  std::optional<double> opt_prob;
  optimize->add_option("--dropout-prob", opt_prob, "per-word mask probability");
  std::optional<std::uint64_t> opt_seed;
  optimize->add_option("--opt-seed", opt_seed, "dropout RNG seed");
  std::optional<int> opt_topk;
  optimize->add_option("--top-k-negative", opt_topk, "max negative-scoring words to prune");
  bool opt_mean = false;
  optimize->add_flag("--mean-attribution", opt_mean,
                     "divide each iteration's score change across its masked words");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "run detection over the test split");
  add_common_flags(evaluate_cmd, eval_f);
  std::optional<std::string> eval_knowledge;
  evaluate_cmd->add_option("--knowledge", eval_knowledge,
                           "knowledge JSON to prepend (or \"none\")");

  auto* ablate = app.add_subcommand("ablate", "compare knowledge variants on one test split");
  add_common_flags(ablate, ablate_f);
  std::vector<std::string> ablate_variants;
  ablate->add_option("--variants", ablate_variants,
                     "subset of variants to run (default: all eight)")
      ->delimiter(',');
  std::optional<int> ablate_iterations;
  ablate->add_option("--iterations", ablate_iterations, "dropout iterations for fused_optimized");

  auto* sweep = app.add_subcommand("sweep", "evaluate fused knowledge across shot counts");
  add_common_flags(sweep, sweep_f);
  std::vector<std::size_t> sweep_counts;
  sweep->add_option("--counts", sweep_counts, "shot counts to sweep")->delimiter(',');

  auto* classify_cmd = app.add_subcommand("classify", "label ad-hoc texts, one P/N line each");
  add_common_flags(classify_cmd, classify_f);
  std::vector<std::string> classify_texts;
  classify_cmd->add_option("--text", classify_texts, "text to classify (repeatable)");
  std::optional<std::string> classify_input;
  classify_cmd->add_option("--input", classify_input, "file with one text per line");
  std::optional<std::string> classify_knowledge;
  classify_cmd->add_option("--knowledge", classify_knowledge,
                           "knowledge JSON to prepend (or \"none\")");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("kiprompt");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      // app.exit prints help or the parse error to our streams.
      int code = app.exit(e, out, err);
      return code == 0 ? 0 : 2;
    }

    if (app.got_subcommand(ingest)) {
      return cmd_ingest(resolve_config(ingest_f), ingest_save, out);
    }
    if (app.got_subcommand(build)) {
      return cmd_build_knowledge(resolve_config(build_f), domain_only, out);
    }
    if (app.got_subcommand(optimize)) {
      RunConfig rc = resolve_config(opt_f);
      if (opt_iterations) rc.iterations = *opt_iterations;
      if (opt_prob) rc.dropout_prob = *opt_prob;
      if (opt_seed) rc.opt_seed = *opt_seed;
      if (opt_topk) rc.top_k_negative = *opt_topk;
      if (opt_mean) rc.mean_attribution = true;
      return cmd_optimize(rc, opt_knowledge, out);
    }
    if (app.got_subcommand(evaluate_cmd)) {
      return cmd_evaluate(resolve_config(eval_f), eval_knowledge, out);
    }
    if (app.got_subcommand(ablate)) {
      RunConfig rc = resolve_config(ablate_f);
      if (!ablate_variants.empty()) rc.ablation_variants = ablate_variants;
      if (ablate_iterations) rc.iterations = *ablate_iterations;
      return cmd_ablate(rc, out);
    }
    if (app.got_subcommand(sweep)) {
      RunConfig rc = resolve_config(sweep_f);
      if (!sweep_counts.empty()) rc.sweep_counts = sweep_counts;
      return cmd_sweep(rc, out);
    }
    if (app.got_subcommand(classify_cmd)) {
      return cmd_classify(resolve_config(classify_f), classify_texts, classify_input,
                          classify_knowledge, in, out);
    }
    err << "error: no subcommand selected\n";
    return 2;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const OracleError& e) {
    err << "oracle error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace kiprompt
