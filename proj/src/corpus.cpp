#include "kiprompt/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "kiprompt/errors.hpp"
#include "kiprompt/rng.hpp"
#include "kiprompt/textutil.hpp"

namespace kiprompt {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

[[noreturn]] void line_error(const std::filesystem::path& path,
                             std::size_t line, const std::string& what) {
  throw ValidationError(path.string() + ":" + std::to_string(line) + ": " +
                        what);
}

Label label_from_json(const nlohmann::json& v) {
  if (v.is_number_integer()) {
    long n = v.get<long>();
    if (n == 0) return Label::Negative;
    if (n == 1) return Label::Positive;
    throw ValidationError("numeric label must be 0 or 1, got " +
                          std::to_string(n));
  }
  if (v.is_string()) return parse_label(v.get<std::string>());
  throw ValidationError("label must be an integer or string");
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<LabeledPost> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      line_error(path, lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) line_error(path, lineno, "record is not an object");
    for (const char* key : {"id", "text", "label"}) {
      if (!j.contains(key))
        line_error(path, lineno, std::string("missing field \"") + key + "\"");
    }
    LabeledPost item;
    try {
      if (!j["id"].is_string() || !j["text"].is_string())
        throw ValidationError("\"id\" and \"text\" must be strings");
      item.post.id = j["id"].get<std::string>();
      item.post.text = j["text"].get<std::string>();
      item.label = label_from_json(j["label"]);
    } catch (const ValidationError& e) {
      line_error(path, lineno, e.what());
    }
    items.push_back(std::move(item));
  }
  if (items.empty()) throw ValidationError(path.string() + ": empty dataset");
  return Dataset(std::move(items), path.string());
}

struct CsvRecord {
  std::vector<std::string> fields;
  std::size_t line = 0;  // physical line the record starts on
};

std::vector<CsvRecord> parse_csv_records(const std::string& content,
                                         const std::filesystem::path& path) {
  std::vector<CsvRecord> records;
  std::size_t i = 0;
  std::size_t lineno = 1;
  const std::size_t n = content.size();
  while (i < n) {
    CsvRecord rec;
    rec.line = lineno;
    bool at_record_end = false;
    while (!at_record_end) {
      std::string field;
      if (i < n && content[i] == '"') {
        ++i;
        for (;;) {
          if (i >= n)
            line_error(path, rec.line, "unterminated quoted field");
          char c = content[i];
          if (c == '"') {
            if (i + 1 < n && content[i + 1] == '"') {
              field += '"';
              i += 2;
            } else {
              ++i;
              break;
            }
          } else {
            if (c == '\n') ++lineno;
            field += c;
            ++i;
          }
        }
        if (i < n && content[i] != ',' && content[i] != '\n' &&
            content[i] != '\r')
          line_error(path, lineno, "unexpected character after closing quote");
      } else {
        while (i < n && content[i] != ',' && content[i] != '\n' &&
               content[i] != '\r') {
          if (content[i] == '"')
            line_error(path, lineno, "stray quote in unquoted field");
          field += content[i];
          ++i;
        }
      }
      rec.fields.push_back(std::move(field));
      if (i >= n) {
        at_record_end = true;
      } else if (content[i] == ',') {
        ++i;
      } else {
        if (content[i] == '\r' && i + 1 < n && content[i + 1] == '\n') ++i;
        ++i;
        ++lineno;
        at_record_end = true;
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::string content = read_file(path);
  auto records = parse_csv_records(content, path);
  // A trailing newline yields no extra record; blank lines do (and fail the
  // column check below), which keeps truncated files from loading silently.
  if (records.empty()) throw ValidationError(path.string() + ": empty dataset");
  const auto& header = records[0].fields;
  if (header != std::vector<std::string>{"id", "text", "label"})
    line_error(path, records[0].line, "header must be exactly id,text,label");
  std::vector<LabeledPost> items;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.fields.size() == 1 && rec.fields[0].empty()) continue;  // blank
    if (rec.fields.size() != 3)
      line_error(path, rec.line,
                 "expected 3 fields, got " + std::to_string(rec.fields.size()));
    LabeledPost item;
    item.post.id = rec.fields[0];
    item.post.text = rec.fields[1];
    try {
      item.label = parse_label(rec.fields[2]);
    } catch (const ValidationError& e) {
      line_error(path, rec.line, e.what());
    }
    items.push_back(std::move(item));
  }
  if (items.empty()) throw ValidationError(path.string() + ": empty dataset");
  return Dataset(std::move(items), path.string());
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << bytes;
  if (!out) throw IoError("write failed: " + path.string());
}

std::set<std::string> word_shingles(const std::string& text) {
  auto words = split_words(to_lower(text));
  std::set<std::string> out;
  const char sep = '\x1f';
  if (words.size() < 3) {
    std::string s;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) s += sep;
      s += words[i];
    }
    out.insert(std::move(s));
    return out;
  }
  for (std::size_t i = 0; i + 3 <= words.size(); ++i) {
    out.insert(words[i] + sep + words[i + 1] + sep + words[i + 2]);
  }
  return out;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  return static_cast<double>(inter) /
         static_cast<double>(a.size() + b.size() - inter);
}

}  // namespace

Label parse_label(const std::string& raw) {
  std::string s = to_lower(trim(raw));
  if (s == "0" || s == "n" || s == "negative") return Label::Negative;
  if (s == "1" || s == "p" || s == "positive") return Label::Positive;
  throw ValidationError("unrecognized label \"" + raw + "\"");
}

Dataset::Dataset(std::vector<LabeledPost> items, std::string provenance)
    : items_(std::move(items)), provenance_(std::move(provenance)) {
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& it = items_[i];
    if (it.post.id.empty())
      throw ValidationError("record " + std::to_string(i + 1) +
                            ": empty id");
    if (!seen.insert(it.post.id).second)
      throw ValidationError("duplicate id \"" + it.post.id + "\"");
    if (trim(it.post.text).empty())
      throw ValidationError("record \"" + it.post.id + "\": empty text");
    if (it.label == Label::Positive) ++positives_;
  }
}

std::unordered_set<std::string> Dataset::id_set() const {
  std::unordered_set<std::string> ids;
  ids.reserve(items_.size());
  for (const auto& it : items_) ids.insert(it.post.id);
  return ids;
}

DatasetFormat parse_dataset_format(const std::string& name) {
  std::string s = to_lower(trim(name));
  if (s == "jsonl") return DatasetFormat::Jsonl;
  if (s == "csv") return DatasetFormat::Csv;
  throw ValidationError("unknown dataset format \"" + name +
                        "\" (expected jsonl or csv)");
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
  return format == DatasetFormat::Jsonl ? load_jsonl(path) : load_csv(path);
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path,
                  DatasetFormat format) {
  std::string bytes;
  if (format == DatasetFormat::Jsonl) {
    for (const auto& it : ds.items()) {
      nlohmann::json j;
      j["id"] = it.post.id;
      j["text"] = it.post.text;
      j["label"] = it.label == Label::Positive ? 1 : 0;
      bytes += j.dump();
      bytes += '\n';
    }
  } else {
    bytes = "id,text,label\n";
    for (const auto& it : ds.items()) {
      bytes += csv_field(it.post.id);
      bytes += ',';
      bytes += csv_field(it.post.text);
      bytes += ',';
      bytes += it.label == Label::Positive ? '1' : '0';
      bytes += '\n';
    }
  }
  write_file(path, bytes);
}

double shingle_jaccard(const std::string& a, const std::string& b) {
  return jaccard(word_shingles(a), word_shingles(b));
}

Dataset dedup(const Dataset& ds, double similarity_threshold) {
  if (similarity_threshold < 0.0 || similarity_threshold > 1.0)
    throw ValidationError("similarity threshold must be in [0, 1]");
  std::vector<LabeledPost> kept;
  std::vector<std::set<std::string>> kept_shingles;
  for (const auto& it : ds.items()) {
    auto sh = word_shingles(it.post.text);
    bool duplicate = false;
    for (const auto& prev : kept_shingles) {
      if (jaccard(sh, prev) >= similarity_threshold) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) {
      kept.push_back(it);
      kept_shingles.push_back(std::move(sh));
    }
  }
  return Dataset(std::move(kept), ds.provenance());
}

SplitResult split(const Dataset& ds, const SplitSpec& spec) {
  if (spec.shot_count > ds.size())
    throw ValidationError("shot_count " + std::to_string(spec.shot_count) +
                          " exceeds dataset size " + std::to_string(ds.size()));
  SplitMix64 rng(spec.seed);
  std::vector<std::size_t> drawn;
  if (!spec.stratified) {
    drawn = sample_indices(ds.size(), spec.shot_count, rng);
  } else {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      (ds[i].label == Label::Positive ? pos : neg).push_back(i);
    }
    double frac = ds.empty() ? 0.0
                             : static_cast<double>(pos.size()) /
                                   static_cast<double>(ds.size());
    auto k = static_cast<std::size_t>(std::llround(
        static_cast<double>(spec.shot_count) * frac));
    std::size_t pos_k = std::min(k, pos.size());
    std::size_t neg_k = spec.shot_count - pos_k;
    if (neg_k > neg.size()) {
      neg_k = neg.size();
      pos_k = spec.shot_count - neg_k;
    }
    // Positives are drawn first, negatives second, from the same generator.
    for (std::size_t i : sample_indices(pos.size(), pos_k, rng))
      drawn.push_back(pos[i]);
    for (std::size_t i : sample_indices(neg.size(), neg_k, rng))
      drawn.push_back(neg[i]);
  }
  std::vector<bool> is_shot(ds.size(), false);
  SplitResult result;
  for (std::size_t i : drawn) {
    result.shots.push_back(ds[i]);
    is_shot[i] = true;
  }
  std::vector<LabeledPost> rest;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!is_shot[i]) rest.push_back(ds[i]);
  }
  result.test = Dataset(std::move(rest), ds.provenance());
  return result;
}

namespace {

const std::vector<std::string> kPlainDrugs = {
    "mdma", "lsd",  "shrooms", "coke",     "molly",
    "oxy",  "dmt",  "ketamine", "xanax",   "kush"};

const std::vector<std::string> kDrugTags = {
    "#mdma",   "#lsd",          "#shrooms", "#shroomforsale", "#magicshrooms",
    "#molly",  "#oxys",         "#tabs",    "#kush4sale",     "#cocaine"};

const std::vector<std::string> kHandleBases = {
    "plugking", "trippyjay", "nightowl", "greenmile", "silkvault", "mollyman"};

const std::vector<std::string> kObfuscated = {
    "m.d.m.a", "l.s.d",    "c.o.c.a.i.n.e", "m.o.l.l.y", "k.u.s.h",
    "a.c.i.d", "SHRΘΘMS",  "CΘKE",          "MΘLLY"};

const std::vector<std::string> kPosOpeners = {
    "Top shelf stock available right now.",
    "Fresh batch just landed in town.",
    "Quality you can trust, discreet always.",
    "Stealth packaging and overnight drops.",
    "Menu updated for the weekend.",
    "Direct from the source, lab tested.",
    "Bulk deals for returning customers.",
    "Restocked and ready to ship today."};

const std::vector<std::string> kPosClosers = {
    "DM before it runs out.",
    "Serious buyers only.",
    "Same day delivery in town.",
    "Shipping nationwide, tracked and sealed.",
    "Cash app or bitcoin accepted.",
    "First taste discount for new clients.",
    "Replies around the clock.",
    "No games, straight business."};

const std::vector<std::string> kNegOpeners = {
    "Day {n} of my recovery journey.",             // trigger-free
    "How to avoid reliance on pills?",             // naive trigger
    "Our clinic shares a new resource today.",
    "Pain management without medication is possible.",  // naive trigger
    "Proud of everyone at group therapy this week.",
    "Gentle reminder from your local pharmacist.",
    "New blog post on chronic pain care.",
    "Cutting back on pain medication takes support."};  // naive trigger

const std::vector<std::string> kNegMiddles = {
    "Physicians at {org} help patients overcome chronic pain through an "
    "interdisciplinary program.",
    "We focus on physical therapy, mindfulness, and better sleep routines.",
    "Ask your doctor before changing any prescription.",
    "Support groups meet twice a week and everyone is welcome.",
    "Recovery is not linear and that is okay.",
    "Celebrating {n} months free from opioids with my counselor.",  // trigger
    "Licensed counselors are available for teens and adults.",
    "Managing medication schedules is easier with a planner."};  // trigger

const std::vector<std::string> kNegClosers = {
    "#recovery #healthcare",      "#chronicpain #wellness",
    "#sober #onedayatatime",      "#health #selfcare",
    "#mindfulness #healing",      "#community #support",
    "#patientcare #awareness",    "#therapy #hope"};

const std::vector<std::string> kOrgs = {
    "Lakeside Medical Group", "Harborview Clinic",
    "Eastside Wellness Center", "Summit Health Collective"};

std::string pick(const std::vector<std::string>& pool, SplitMix64& rng) {
  return pool[static_cast<std::size_t>(rng.next_below(pool.size()))];
}

std::string replace_all(std::string s, const std::string& from,
                        const std::string& to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

std::string digits(SplitMix64& rng, int count) {
  std::string s;
  for (int i = 0; i < count; ++i)
    s += static_cast<char>('0' + rng.next_below(10));
  return s;
}

std::string cue_fragment(int kind, SplitMix64& rng) {
  switch (kind) {
    case 0: {
      static const std::vector<std::string> tmpl = {
          "We move {a} and {b} at fair prices.",
          "Got {a} plus {b} ready to go.",
          "{a} and {b} on deck tonight.",
          "Fresh {a} and clean {b} available."};
      std::string s = pick(tmpl, rng);
      s = replace_all(s, "{a}", pick(kPlainDrugs, rng));
      s = replace_all(s, "{b}", pick(kPlainDrugs, rng));
      return s;
    }
    case 1:
      return pick(kDrugTags, rng) + " " + pick(kDrugTags, rng) + " #forsale";
    case 2: {
      static const std::vector<std::string> tmpl = {
          "Hit my wickr {h} for the menu.",
          "Text or whatsapp +1 {d}-{e} anytime.",
          "Kik {h} for fast replies.",
          "Snapchat {h} to get connected.",
          "Telegram {h} is the secure line."};
      std::string s = pick(tmpl, rng);
      s = replace_all(s, "{h}", pick(kHandleBases, rng) + digits(rng, 2));
      s = replace_all(s, "{d}", digits(rng, 3));
      s = replace_all(s, "{e}", digits(rng, 4));
      return s;
    }
    default: {
      std::string a = pick(kObfuscated, rng);
      std::string b = pick(kObfuscated, rng);
      return a + " and " + b + " in stock.";
    }
  }
}

}  // namespace

const std::vector<std::string>& synthetic_cue_markers() {
  static const std::vector<std::string> markers = [] {
    std::vector<std::string> m = kPlainDrugs;
    m.insert(m.end(), {"wickr", "whatsapp", "kik", "snapchat", "telegram"});
    for (const auto& o : kObfuscated) m.push_back(to_lower(o));
    m.push_back("#tabs");
    m.push_back("#cocaine");
    return m;
  }();
  return markers;
}

Dataset generate_synthetic_corpus(std::size_t size, double positive_fraction,
                                  std::uint64_t seed) {
  if (size < 2) throw ValidationError("synthetic corpus size must be >= 2");
  if (!(positive_fraction > 0.0 && positive_fraction < 1.0))
    throw ValidationError("positive_fraction must be in (0, 1)");
  auto pos_n = static_cast<std::size_t>(
      std::llround(static_cast<double>(size) * positive_fraction));
  pos_n = std::max<std::size_t>(1, std::min(pos_n, size - 1));

  SplitMix64 rng(seed);
  std::vector<LabeledPost> items;
  items.reserve(size);
  // A serial token sits mid-text where it touches three shingles, so any
  // two posts differ in at least three shingles per side; a 0.9-Jaccard
  // dedup pass removes nothing for texts under ~58 words.
  for (std::size_t i = 0; i < size; ++i) {
    LabeledPost item;
    std::string text;
    if (i < pos_n) {
      item.label = Label::Positive;
      int k1 = static_cast<int>(rng.next_below(4));
      int k2 = (k1 + 1 + static_cast<int>(rng.next_below(3))) % 4;
      text = pick(kPosOpeners, rng) + " " + cue_fragment(k1, rng) + " " +
             cue_fragment(k2, rng) + " " + pick(kPosClosers, rng);
    } else {
      item.label = Label::Negative;
      std::string middle = pick(kNegMiddles, rng);
      middle = replace_all(middle, "{org}", pick(kOrgs, rng));
      middle = replace_all(middle, "{n}",
                           std::to_string(1 + rng.next_below(36)));
      std::string opener = replace_all(pick(kNegOpeners, rng), "{n}",
                                       std::to_string(1 + rng.next_below(365)));
      text = opener + " " + middle + " " + pick(kNegClosers, rng);
    }
    char serial[32];
    std::snprintf(serial, sizeof(serial), "ref%06zu", i + 1);
    std::vector<std::string> words = split_words(text);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(words.size() / 2),
                 serial);
    std::string spliced;
    for (std::size_t w = 0; w < words.size(); ++w) {
      if (w) spliced += ' ';
      spliced += words[w];
    }
    item.post.text = spliced;
    items.push_back(std::move(item));
  }
  shuffle(items, rng);
  for (std::size_t i = 0; i < items.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "syn-%06zu", i + 1);
    items[i].post.id = id;
  }
  std::string prov = "synthetic(size=" + std::to_string(size) +
                     ",fraction=" + fmt_fixed(positive_fraction, 4) +
                     ",seed=" + std::to_string(seed) + ")";
  return Dataset(std::move(items), prov);
}

}  // namespace kiprompt
