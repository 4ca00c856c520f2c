#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "kiprompt/corpus.hpp"
#include "kiprompt/knowledge.hpp"
#include "kiprompt/oracle.hpp"

namespace kiprompt {

/// Declarative run configuration. Every field can be set from a JSON config
/// file (--config) and overridden by the matching command-line flag.
/// Credentials are never part of this struct: live mode reads the API key
/// from the environment variable named in oracle.api_key_env_var.
struct RunConfig {
  std::filesystem::path dataset_path;
  DatasetFormat dataset_format = DatasetFormat::Jsonl;
  SplitSpec split;

  std::string oracle_mode = "live";  // "live" | "mock:<script>" | "rule-mock"
  OracleConfig oracle;
  std::string model = "gpt-3.5-turbo";

  std::filesystem::path templates_dir = "templates";
  std::filesystem::path domain_knowledge_path = "data/domain_knowledge.json";
  KnowledgePipelineConfig pipeline;

  double detection_temperature = 0.0;
  int detection_max_tokens = 16;
  double generation_temperature = 0.7;
  int generation_max_tokens = 512;

  int iterations = 100;
  double dropout_prob = 0.3;
  std::uint64_t opt_seed = 0;
  int top_k_negative = 10;
  bool mean_attribution = false;

  std::vector<std::string> ablation_variants;  // empty selects all eight
  std::vector<std::size_t> sweep_counts = {5, 10, 20, 30, 40};

  double dedup_threshold = 0.9;
  std::filesystem::path output_dir = "out";
  std::filesystem::path cache_dir = "cache";
  bool no_cache = false;
  int parallelism = 1;
};

/// Overlay a JSON config file onto the defaults. Unknown keys are rejected.
RunConfig load_run_config(const std::filesystem::path& path);

/// The binary's whole behavior, callable in-process for tests. args is the
/// argv tail (no program name). Exit codes: 0 success, 2 input validation,
/// 3 credential/oracle failure, 4 internal error.
int run_cli(const std::vector<std::string>& args, std::istream& in,
            std::ostream& out, std::ostream& err);

}  // namespace kiprompt
