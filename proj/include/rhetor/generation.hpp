#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rhetor/judge.hpp"
#include "rhetor/prompts.hpp"
#include "rhetor/store.hpp"
#include "rhetor/types.hpp"

namespace rhetor {

// Produces one candidate abstract for (persona, paper) under the stated word
// bounds. attempt is 1-based; backends may use it to vary the sample.
class AbstractGenerator {
 public:
  virtual ~AbstractGenerator() = default;
  virtual std::string generate(const Persona& persona, const PaperItem& paper,
                               int min_words, int max_words, int attempt) = 0;
  virtual std::string id() const = 0;
};

// Chat-backed generator: persona system prompt + the generation template
// ({mr_text}, {min_wc}, {max_wc}); the reply must be JSON with an "abstract"
// key, else GeneratorProtocolError.
class RemoteAbstractGenerator : public AbstractGenerator {
 public:
  RemoteAbstractGenerator(std::shared_ptr<ChatBackend> chat, PromptTemplate tmpl);

  std::string generate(const Persona& persona, const PaperItem& paper,
                       int min_words, int max_words, int attempt) override;
  std::string id() const override;

 private:
  std::shared_ptr<ChatBackend> chat_;
  PromptTemplate template_;
};

// Deterministic offline generator for simulations and fixtures: emits a
// placeholder abstract of exactly the paper's original length.
class SyntheticAbstractGenerator : public AbstractGenerator {
 public:
  std::string generate(const Persona& persona, const PaperItem& paper,
                       int min_words, int max_words, int attempt) override;
  std::string id() const override { return "synthetic"; }
};

// All attempts fell outside the word bounds; carries the closest attempt for
// diagnostics.
class LengthConstraintError : public Error {
 public:
  LengthConstraintError(const std::string& message, CounterfactualAbstract best)
      : Error(message), best_attempt(std::move(best)) {}

  CounterfactualAbstract best_attempt;
};

// Generates one counterfactual whose word count lies within +/-15 words of
// the paper's original abstract, retrying out-of-bounds generations up to
// max_attempts. Requires abstract_word_count >= 16 so the lower bound stays
// positive.
CounterfactualAbstract generate_counterfactual(const PaperItem& paper,
                                               const Persona& persona,
                                               AbstractGenerator& generator,
                                               int max_attempts = 3);

struct GenerationFailure {
  std::string paper_id;
  std::string persona_id;
  std::string message;
};

struct GenerationReport {
  int generated = 0;
  int skipped_existing = 0;
  std::vector<GenerationFailure> failures;
};

// Fans papers x panel out over up to concurrency_limit workers, persisting
// each result through the store. Pairs already persisted are skipped, and
// per-item failures are collected rather than aborting the batch.
GenerationReport generate_panel_abstracts(const std::vector<PaperItem>& papers,
                                          const std::vector<Persona>& panel,
                                          AbstractGenerator& generator,
                                          CorpusStore& store,
                                          int concurrency_limit = 4,
                                          int max_attempts = 3);

// Same contract restricted to the given (paper_id, persona_id) pairs; ids
// must resolve within papers/panel.
GenerationReport generate_missing_counterfactuals(
    const std::vector<PaperItem>& papers, const std::vector<Persona>& panel,
    const std::vector<std::pair<std::string, std::string>>& pairs,
    AbstractGenerator& generator, CorpusStore& store, int concurrency_limit = 4,
    int max_attempts = 3);

class SubstanceExtractor {
 public:
  virtual ~SubstanceExtractor() = default;
  virtual std::string extract(const std::string& full_text) = 0;
  virtual std::string id() const = 0;
};

// Chat-backed extractor; the reply must be JSON with a "substantive_content"
// key.
class RemoteSubstanceExtractor : public SubstanceExtractor {
 public:
  RemoteSubstanceExtractor(std::shared_ptr<ChatBackend> chat, PromptTemplate tmpl);

  std::string extract(const std::string& full_text) override;
  std::string id() const override;

 private:
  std::shared_ptr<ChatBackend> chat_;
  PromptTemplate template_;
};

// Pulls the methods/experiments/results text out of a paper's full text.
// Empty extractions raise ExtractionFailedError so the paper can be excluded
// and logged.
std::string extract_substance(const std::string& full_text,
                              SubstanceExtractor& extractor);

}  // namespace rhetor
