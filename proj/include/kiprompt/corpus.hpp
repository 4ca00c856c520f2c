#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_set>
#include <vector>

namespace kiprompt {

enum class Label { Negative = 0, Positive = 1 };

/// Parse a label alias: one of {0, 1, P, N, positive, negative},
/// case-insensitive. Throws ValidationError on anything else.
Label parse_label(const std::string& raw);

inline const char* label_letter(Label l) {
  return l == Label::Positive ? "P" : "N";
}

struct Post {
  std::string id;
  std::string text;
};

struct LabeledPost {
  Post post;
  Label label = Label::Negative;
};

/// An ordered collection of labeled posts with unique ids and non-empty
/// texts; both invariants are enforced at construction.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<LabeledPost> items, std::string provenance);

  const std::vector<LabeledPost>& items() const { return items_; }
  const LabeledPost& operator[](std::size_t i) const { return items_[i]; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const std::string& provenance() const { return provenance_; }

  std::size_t positive_count() const { return positives_; }
  std::size_t negative_count() const { return items_.size() - positives_; }

  std::unordered_set<std::string> id_set() const;

 private:
  std::vector<LabeledPost> items_;
  std::string provenance_;
  std::size_t positives_ = 0;
};

enum class DatasetFormat { Jsonl, Csv };

DatasetFormat parse_dataset_format(const std::string& name);

/// Load a dataset. JSONL: one {"id","text","label"} object per line.
/// CSV: RFC 4180 with exact header "id,text,label"; quoted fields may
/// contain commas, quotes, and newlines. Errors name the offending line.
/// An input with zero records is a ValidationError ("empty dataset").
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format);

void save_dataset(const Dataset& ds, const std::filesystem::path& path,
                  DatasetFormat format);

/// Jaccard similarity between the 3-shingle sets of the lowercased word
/// sequences of a and b. Texts shorter than 3 words contribute their whole
/// word sequence as a single shingle.
double shingle_jaccard(const std::string& a, const std::string& b);

/// Remove near-duplicates: a post is dropped when its shingle Jaccard
/// similarity against an already-kept post is >= threshold. First
/// occurrence wins; surviving order is unchanged. threshold must be in
/// [0, 1]. Idempotent.
Dataset dedup(const Dataset& ds, double similarity_threshold = 0.9);

struct SplitSpec {
  std::size_t shot_count = 0;
  std::uint64_t seed = 0;
  bool stratified = false;
};

struct SplitResult {
  std::vector<LabeledPost> shots;  // in draw order
  Dataset test;                    // remaining items, original order
};

/// Seeded split into shot_count shots plus the rest. Unstratified draws are
/// a partial Fisher-Yates over item indices (see sample_indices). The
/// stratified variant allocates shots to classes proportionally (rounded,
/// then clamped to class sizes) and draws positives first, negatives
/// second, from the same generator.
SplitResult split(const Dataset& ds, const SplitSpec& spec);

/// Deterministic synthetic corpus: positive posts mimic trafficking posts
/// (plain drug mentions, drug hashtags, messenger contact handles, and
/// obfuscated spellings); negatives mimic benign health/recovery posts.
/// positive count = round(size * positive_fraction), clamped so both
/// classes are non-empty. size must be >= 2 and fraction in (0, 1).
/// Identical (size, fraction, seed) inputs produce byte-identical datasets.
Dataset generate_synthetic_corpus(std::size_t size, double positive_fraction,
                                  std::uint64_t seed);

/// Substrings such that every synthetic positive text contains at least one
/// (case-insensitive) and no synthetic negative text contains any.
const std::vector<std::string>& synthetic_cue_markers();

}  // namespace kiprompt
