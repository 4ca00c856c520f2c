#include "kiprompt/prompting.hpp"

#include <atomic>
#include <cstring>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "kiprompt/errors.hpp"
#include "kiprompt/textutil.hpp"

namespace kiprompt {

namespace {

std::size_t count_occurrences(const std::string& s, const std::string& sub) {
  std::size_t count = 0;
  std::size_t pos = 0;
  while ((pos = s.find(sub, pos)) != std::string::npos) {
    ++count;
    pos += sub.size();
  }
  return count;
}

void replace_first(std::string& s, const std::string& from,
                   const std::string& to) {
  auto pos = s.find(from);
  if (pos != std::string::npos) s.replace(pos, from.size(), to);
}

bool known_template_name(const std::string& name) {
  return name == "req_k" || name == "req_s" || name == "req_fu" ||
         name == "req_di";
}

}  // namespace

void validate_template(const PromptTemplate& tmpl) {
  if (!known_template_name(tmpl.name))
    throw ValidationError("unknown template name \"" + tmpl.name +
                          "\" (expected req_k, req_s, req_fu, or req_di)");
  if (tmpl.version.empty())
    throw ValidationError("template " + tmpl.name + ": empty version");
  if (trim(tmpl.question_text).empty())
    throw ValidationError("template " + tmpl.name + ": empty question_text");
  if (tmpl.name == "req_di") {
    const std::string& p = tmpl.user_pattern;
    for (const char* ph : {"{knowledge}", "{question}", "{text}"}) {
      auto n = count_occurrences(p, ph);
      if (n == 0)
        throw ValidationError("template req_di: placeholder " +
                              std::string(ph) + " missing from user_pattern");
      if (n > 1)
        throw ValidationError("template req_di: placeholder " +
                              std::string(ph) + " appears more than once");
    }
    if (!(p.find("{knowledge}") < p.find("{question}") &&
          p.find("{question}") < p.find("{text}")))
      throw ValidationError(
          "template req_di: placeholders must appear in the order "
          "{knowledge}, {question}, {text}");
  }
}

PromptTemplate make_template(const std::string& name,
                             const std::string& version,
                             const std::string& system_text,
                             const std::string& question_text,
                             const std::string& user_pattern) {
  PromptTemplate tmpl{name, version, system_text, question_text, user_pattern};
  validate_template(tmpl);
  return tmpl;
}

PromptTemplate load_template(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open template " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
  for (const char* key : {"name", "version", "system_text", "question_text"}) {
    if (!j.contains(key) || !j[key].is_string())
      throw ValidationError(path.string() + ": missing string field \"" +
                            key + "\"");
  }
  PromptTemplate tmpl;
  tmpl.name = j["name"].get<std::string>();
  tmpl.version = j["version"].get<std::string>();
  tmpl.system_text = j["system_text"].get<std::string>();
  tmpl.question_text = j["question_text"].get<std::string>();
  if (j.contains("user_pattern"))
    tmpl.user_pattern = j["user_pattern"].get<std::string>();
  validate_template(tmpl);
  return tmpl;
}

TemplateSet load_template_set(const std::filesystem::path& dir) {
  TemplateSet set;
  set.req_k = load_template(dir / "req_k.json");
  set.req_s = load_template(dir / "req_s.json");
  set.req_fu = load_template(dir / "req_fu.json");
  set.req_di = load_template(dir / "req_di.json");
  return set;
}

TemplateSet default_templates() {
  TemplateSet set;
  set.req_k = make_template(
      "req_k", "1",
      "You are an expert content-moderation analyst for social media "
      "platforms.",
      "Each example below is a social-media comment labeled as drug "
      "trafficking or not drug trafficking. Study the examples and list the "
      "characteristics that distinguish drug trafficking comments, including "
      "hashtags, contact information, and special symbols or obfuscated "
      "spellings.");
  set.req_s = make_template(
      "req_s", "1",
      "You are an expert content-moderation analyst for social media "
      "platforms.",
      "Combine and summarize the following extracted observations into one "
      "concise paragraph describing how drug trafficking posts can be "
      "recognized.");
  set.req_fu = make_template(
      "req_fu", "1",
      "You are an expert content-moderation analyst for social media "
      "platforms.",
      "Merge the two indicator paragraphs below into a single fused "
      "paragraph that keeps every distinct indicator from both. The first "
      "paragraph was learned from labeled examples; the second comes from "
      "domain experts.");
  set.req_di = make_template(
      "req_di", "1", "You are a strict content-safety classifier.",
      "Based on the above knowledge, does the following social-media text "
      "indicate illicit drug trafficking? Answer with a single letter: P for "
      "yes, N for no.");
  return set;
}

const std::string& ComposedPrompt::user_content() const {
  return rendered.back().content;
}

ComposedPrompt compose(const std::optional<KnowledgeDocument>& knowledge,
                       const PromptTemplate& req_di, const Post& post) {
  validate_template(req_di);
  if (req_di.name != "req_di")
    throw ValidationError("compose needs a req_di template, got " +
                          req_di.name);
  if (trim(post.text).empty())
    throw ValidationError("post \"" + post.id + "\" has empty text");

  const bool has_knowledge = knowledge.has_value() && !knowledge->empty();
  std::string content = req_di.user_pattern;
  if (has_knowledge) {
    replace_first(content, "{knowledge}", knowledge->text());
  } else {
    // Drop the knowledge block entirely, separator included.
    auto pos = content.find("{knowledge}");
    std::size_t erase_len = std::strlen("{knowledge}");
    if (content.compare(pos + erase_len, 2, "\n\n") == 0) erase_len += 2;
    content.erase(pos, erase_len);
  }
  replace_first(content, "{question}", req_di.question_text);
  replace_first(content, "{text}", post.text);

  ComposedPrompt out;
  if (has_knowledge) out.knowledge = knowledge;
  out.question = req_di.question_text;
  out.text = post.text;
  if (!req_di.system_text.empty())
    out.rendered.push_back({Role::System, req_di.system_text});
  out.rendered.push_back({Role::User, std::move(content)});
  return out;
}

DetectionVerdict parse_verdict(const ChatResponse& response) {
  DetectionVerdict v;
  v.raw = response.content;
  const std::string trimmed = to_lower(trim(response.content));

  // R1: the whole reply is a single letter.
  if (trimmed == "p" || trimmed == "n") {
    v.prediction = trimmed == "p" ? Label::Positive : Label::Negative;
    v.parse_rule = "R1";
    return v;
  }

  // R2: first standalone P/N/YES/NO token decides.
  const std::string lower = to_lower(response.content);
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < lower.size();) {
    if (lower[i] >= 'a' && lower[i] <= 'z') {
      std::size_t start = i;
      while (i < lower.size() && lower[i] >= 'a' && lower[i] <= 'z') ++i;
      tokens.push_back(lower.substr(start, i - start));
    } else {
      ++i;
    }
  }
  for (const auto& t : tokens) {
    if (t == "p" || t == "yes") {
      v.prediction = Label::Positive;
      v.parse_rule = "R2";
      return v;
    }
    if (t == "n" || t == "no") {
      v.prediction = Label::Negative;
      v.parse_rule = "R2";
      return v;
    }
  }

  // R3: "drug trafficking" counts as positive unless negated within the
  // six words before its first occurrence.
  auto phrase = lower.find("drug trafficking");
  if (phrase != std::string::npos) {
    std::vector<std::string> before;
    for (std::size_t i = 0; i < phrase;) {
      if (lower[i] >= 'a' && lower[i] <= 'z') {
        std::size_t start = i;
        while (i < phrase && lower[i] >= 'a' && lower[i] <= 'z') ++i;
        before.push_back(lower.substr(start, i - start));
      } else {
        ++i;
      }
    }
    static const std::vector<std::string> negations = {
        "not",  "no",     "never",    "cannot", "isn",  "doesn",
        "don",  "won",    "without",  "unlikely", "denies", "lacks"};
    bool negated = false;
    std::size_t window = std::min<std::size_t>(6, before.size());
    for (std::size_t i = before.size() - window; i < before.size(); ++i) {
      for (const auto& neg : negations) {
        if (before[i] == neg) negated = true;
      }
    }
    v.prediction = negated ? Label::Negative : Label::Positive;
    v.parse_rule = "R3";
    return v;
  }

  std::cerr << "warning: unparseable oracle reply, defaulting to N: \""
            << response.content.substr(0, 80) << "\"\n";
  v.prediction = Label::Negative;
  v.parse_rule = "fallback";
  return v;
}

DetectionVerdict classify(Oracle& oracle, const PromptTemplate& req_di,
                          const std::optional<KnowledgeDocument>& knowledge,
                          const Post& post, const CompletionParams& params) {
  ComposedPrompt prompt = compose(knowledge, req_di, post);
  ChatRequest req;
  req.model = params.model;
  req.temperature = params.temperature;
  req.max_tokens = params.max_tokens;
  req.messages = prompt.rendered;
  return parse_verdict(oracle.complete(req));
}

std::vector<ClassifyOutcome> classify_batch(
    Oracle& oracle, const PromptTemplate& req_di,
    const std::optional<KnowledgeDocument>& knowledge,
    const std::vector<Post>& posts, const CompletionParams& params,
    int parallelism) {
  if (posts.empty()) throw ValidationError("classify_batch: no posts");
  if (parallelism < 1)
    throw ValidationError("classify_batch: parallelism must be >= 1");

  std::vector<ClassifyOutcome> out(posts.size());
  auto run_one = [&](std::size_t i) {
    try {
      out[i].verdict = classify(oracle, req_di, knowledge, posts[i], params);
    } catch (const OracleError& e) {
      out[i].error = e.what();
    }
  };

  if (parallelism == 1 || posts.size() == 1) {
    for (std::size_t i = 0; i < posts.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr fatal;
    std::mutex fatal_mu;
    auto worker = [&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= posts.size()) return;
        try {
          run_one(i);
        } catch (...) {
          std::lock_guard lock(fatal_mu);
          if (!fatal) fatal = std::current_exception();
          return;
        }
      }
    };
    std::size_t n = std::min<std::size_t>(
        static_cast<std::size_t>(parallelism), posts.size());
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (fatal) std::rethrow_exception(fatal);
  }

  bool any_ok = false;
  for (const auto& o : out) {
    if (o.ok()) any_ok = true;
  }
  if (!any_ok) {
    throw OracleError(OracleErrorKind::Transport,
                      "all " + std::to_string(posts.size()) +
                          " posts failed; first error: " + out[0].error);
  }
  return out;
}

}  // namespace kiprompt
