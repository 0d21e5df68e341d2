#include "rhetor/generation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <unordered_set>

#include "rhetor/util.hpp"

namespace rhetor {

namespace {

std::string trim_copy(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Extracts the outermost {...} object from a chat reply that may wrap JSON
// in prose or code fences.
std::optional<nlohmann::json> embedded_json(const std::string& content) {
  const size_t open = content.find('{');
  const size_t close = content.rfind('}');
  if (open == std::string::npos || close == std::string::npos || close < open) {
    return std::nullopt;
  }
  try {
    return nlohmann::json::parse(content.substr(open, close - open + 1));
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

std::string sanitize_token(std::string s) {
  for (char& c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) c = '_';
  }
  return s;
}

}  // namespace

RemoteAbstractGenerator::RemoteAbstractGenerator(
    std::shared_ptr<ChatBackend> chat, PromptTemplate tmpl)
    : chat_(std::move(chat)), template_(std::move(tmpl)) {
  if (!chat_) throw InvalidArgumentError("generator: null chat backend");
  template_.require_slots({"mr_text", "min_wc", "max_wc"});
}

std::string RemoteAbstractGenerator::generate(const Persona& persona,
                                              const PaperItem& paper,
                                              int min_words, int max_words,
                                              int attempt) {
  std::string prompt =
      persona.system_prompt + "\n\n" +
      template_.render({{"mr_text", paper.substantive_content},
                        {"min_wc", std::to_string(min_words)},
                        {"max_wc", std::to_string(max_words)}});
  if (attempt > 1) {
    prompt += "\n\nYour previous attempt violated the length requirement. "
              "The abstract must contain between " +
              std::to_string(min_words) + " and " +
              std::to_string(max_words) + " words.";
  }

  const std::string content = chat_->complete(prompt);
  const auto j = embedded_json(content);
  if (!j || !j->contains("abstract") || !(*j)["abstract"].is_string()) {
    throw GeneratorProtocolError(
        "generator reply for paper " + paper.id + " persona " + persona.id +
        " carries no JSON \"abstract\" key: " + content.substr(0, 200));
  }
  return (*j)["abstract"].get<std::string>();
}

std::string RemoteAbstractGenerator::id() const { return chat_->id(); }

std::string SyntheticAbstractGenerator::generate(const Persona& persona,
                                                 const PaperItem& paper,
                                                 int min_words, int max_words,
                                                 int attempt) {
  (void)attempt;
  const int target = std::max(1, (min_words + max_words) / 2);
  std::string out = sanitize_token(persona.id) + ":" + sanitize_token(paper.id);
  for (int i = 2; i <= target; ++i) {
    out += " w" + std::to_string(i);
  }
  return out;
}

CounterfactualAbstract generate_counterfactual(const PaperItem& paper,
                                               const Persona& persona,
                                               AbstractGenerator& generator,
                                               int max_attempts) {
  paper.validate();
  persona.validate();
  if (max_attempts < 1) {
    throw InvalidArgumentError("generate_counterfactual: max_attempts >= 1");
  }
  const int target = paper.abstract_word_count;
  if (target < 16) {
    throw InvalidArgumentError(
        "generate_counterfactual: paper " + paper.id + " abstract has only " +
        std::to_string(target) + " words; need >= 16 for a positive bound");
  }
  const int min_words = target - 15;
  const int max_words = target + 15;

  CounterfactualAbstract best;
  int best_distance = -1;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    const std::string text =
        generator.generate(persona, paper, min_words, max_words, attempt);
    const int wc = word_count(text);
    CounterfactualAbstract candidate{paper.id, persona.id, text, wc, attempt};
    if (wc >= min_words && wc <= max_words) {
      candidate.validate();
      return candidate;
    }
    const int distance = std::abs(wc - target);
    if (best_distance < 0 || distance < best_distance) {
      best_distance = distance;
      best = std::move(candidate);
    }
  }
  throw LengthConstraintError(
      "all " + std::to_string(max_attempts) + " generations for paper " +
          paper.id + " persona " + persona.id + " fell outside [" +
          std::to_string(min_words) + ", " + std::to_string(max_words) +
          "] words; closest had " + std::to_string(best.word_count),
      std::move(best));
}

GenerationReport generate_panel_abstracts(const std::vector<PaperItem>& papers,
                                          const std::vector<Persona>& panel,
                                          AbstractGenerator& generator,
                                          CorpusStore& store,
                                          int concurrency_limit,
                                          int max_attempts) {
  if (papers.empty() || panel.empty()) {
    throw InvalidArgumentError("generate_panel_abstracts: empty papers or panel");
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(papers.size() * panel.size());
  for (const auto& paper : papers) {
    for (const auto& persona : panel) {
      pairs.emplace_back(paper.id, persona.id);
    }
  }
  return generate_missing_counterfactuals(papers, panel, pairs, generator,
                                          store, concurrency_limit,
                                          max_attempts);
}

GenerationReport generate_missing_counterfactuals(
    const std::vector<PaperItem>& papers, const std::vector<Persona>& panel,
    const std::vector<std::pair<std::string, std::string>>& pairs,
    AbstractGenerator& generator, CorpusStore& store, int concurrency_limit,
    int max_attempts) {
  std::unordered_map<std::string, const PaperItem*> paper_by_id;
  for (const auto& p : papers) paper_by_id.emplace(p.id, &p);
  std::unordered_map<std::string, const Persona*> persona_by_id;
  for (const auto& p : panel) persona_by_id.emplace(p.id, &p);

  std::unordered_set<std::string> existing;
  for (const auto& c : store.read_counterfactuals()) {
    existing.insert(c.paper_id + '\x1f' + c.persona_id);
  }

  GenerationReport report;
  std::vector<std::pair<const PaperItem*, const Persona*>> tasks;
  std::unordered_set<std::string> planned;
  for (const auto& [paper_id, persona_id] : pairs) {
    const auto paper = paper_by_id.find(paper_id);
    const auto persona = persona_by_id.find(persona_id);
    if (paper == paper_by_id.end()) {
      throw InvalidArgumentError("generation: unknown paper id " + paper_id);
    }
    if (persona == persona_by_id.end()) {
      throw InvalidArgumentError("generation: unknown persona id " + persona_id);
    }
    const std::string key = paper_id + '\x1f' + persona_id;
    if (!planned.insert(key).second) continue;
    if (existing.count(key)) {
      ++report.skipped_existing;
      continue;
    }
    tasks.emplace_back(paper->second, persona->second);
  }

  std::mutex report_mutex;
  parallel_for(tasks.size(), concurrency_limit, [&](size_t i) {
    const auto& [paper, persona] = tasks[i];
    try {
      const CounterfactualAbstract cf =
          generate_counterfactual(*paper, *persona, generator, max_attempts);
      store.append_counterfactual(cf);
      std::lock_guard<std::mutex> lock(report_mutex);
      ++report.generated;
    } catch (const Error& e) {
      std::lock_guard<std::mutex> lock(report_mutex);
      report.failures.push_back({paper->id, persona->id, e.what()});
    }
  });
  return report;
}

RemoteSubstanceExtractor::RemoteSubstanceExtractor(
    std::shared_ptr<ChatBackend> chat, PromptTemplate tmpl)
    : chat_(std::move(chat)), template_(std::move(tmpl)) {
  if (!chat_) throw InvalidArgumentError("extractor: null chat backend");
  template_.require_slots({"full_text"});
}

std::string RemoteSubstanceExtractor::extract(const std::string& full_text) {
  const std::string content =
      chat_->complete(template_.render({{"full_text", full_text}}));
  const auto j = embedded_json(content);
  if (!j || !j->contains("substantive_content") ||
      !(*j)["substantive_content"].is_string()) {
    throw GeneratorProtocolError(
        "extractor reply carries no JSON \"substantive_content\" key: " +
        content.substr(0, 200));
  }
  return (*j)["substantive_content"].get<std::string>();
}

std::string RemoteSubstanceExtractor::id() const { return chat_->id(); }

std::string extract_substance(const std::string& full_text,
                              SubstanceExtractor& extractor) {
  if (trim_copy(full_text).empty()) {
    throw InvalidArgumentError("extract_substance: empty full text");
  }
  const std::string extracted = trim_copy(extractor.extract(full_text));
  if (extracted.empty()) {
    throw ExtractionFailedError(
        "extractor returned no substantive content; exclude the paper");
  }
  return extracted;
}

}  // namespace rhetor
