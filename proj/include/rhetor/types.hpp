#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rhetor/errors.hpp"

namespace rhetor {

// Count of maximal whitespace-separated tokens. No punctuation handling:
// "x-ray imaging works" is 3 tokens.
int word_count(std::string_view text);

// Probability that an item with log-score s_a is judged stronger than one
// with log-score s_b: logistic(s_a - s_b). Depends only on the difference.
// Throws InvalidArgumentError on non-finite input.
double bt_win_probability(double s_a, double s_b);

// RFC 3339 UTC timestamp, second resolution ("2025-01-02T03:04:05Z").
std::string rfc3339_utc_now();

// A paper in the corpus: the extracted substantive content plus the original
// abstract it was published with.
struct PaperItem {
  std::string id;
  std::string substantive_content;
  std::string original_abstract;
  int abstract_word_count = 0;
  std::map<std::string, std::string> metadata;

  // Throws ValidationError when an invariant is broken (empty id/content,
  // word count not matching the abstract).
  void validate() const;
};

// A writer archetype on the panel. calibrated_score is log-strength (s_k)
// and is absent until calibration has run.
struct Persona {
  std::string id;
  std::string display_name;
  std::string system_prompt;
  std::optional<double> calibrated_score;

  void validate() const;
};

// A persona-conditioned rewrite of one paper's abstract.
struct CounterfactualAbstract {
  std::string paper_id;
  std::string persona_id;
  std::string text;
  int word_count = 0;
  int generation_attempt = 1;

  void validate() const;
};

// Reference to a judgeable item: a paper's original abstract when persona_id
// is absent, otherwise the counterfactual written by that persona.
struct ItemRef {
  std::string paper_id;
  std::optional<std::string> persona_id;

  bool is_original() const { return !persona_id.has_value(); }

  // Identity used by simulators and caches: personas are keyed panel-wide by
  // persona id, originals by paper id.
  const std::string& item_key() const {
    return persona_id ? *persona_id : paper_id;
  }

  static ItemRef original(std::string paper_id) {
    return ItemRef{std::move(paper_id), std::nullopt};
  }
  static ItemRef persona(std::string paper_id, std::string persona_id) {
    return ItemRef{std::move(paper_id), std::move(persona_id)};
  }

  friend bool operator==(const ItemRef&, const ItemRef&) = default;
};

enum class Winner { A, B };

inline Winner flipped(Winner w) { return w == Winner::A ? Winner::B : Winner::A; }

// One judged pairwise outcome. winner always refers to the caller's A/B
// labels; presented_order_swapped records which way the coin fell when the
// pair was shown to the backend.
struct ComparisonRecord {
  ItemRef item_a;
  ItemRef item_b;
  Winner winner = Winner::A;
  std::string judge_id;
  bool presented_order_swapped = false;
  std::string rationale;   // empty when the backend gives none
  std::string timestamp;   // RFC 3339 UTC

  const ItemRef& winning_item() const {
    return winner == Winner::A ? item_a : item_b;
  }

  void validate() const;
};

// Calibrated panel scale: s_k = log pi_k, re-centered so the scores sum to
// zero (the only identifiability constraint this artifact supports).
struct BTFit {
  std::map<std::string, double> scores;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;

  void validate() const;
};

// Gridded belief over a query score. log_density is normalized so that
// sum(exp(log_density)) * spacing == 1.
struct Posterior {
  std::vector<double> grid;
  std::vector<double> log_density;
  double mean = 0.0;
  double median = 0.0;
  double variance = 0.0;
  std::pair<double, double> credible_interval_95{0.0, 0.0};

  double stddev() const;
  double spacing() const;

  void validate() const;
};

// JSON bindings (nlohmann ADL). Canonical form: object keys sorted, no
// whitespace -- see store.hpp for content addressing built on top.
void to_json(nlohmann::json& j, const PaperItem& p);
void from_json(const nlohmann::json& j, PaperItem& p);
void to_json(nlohmann::json& j, const Persona& p);
void from_json(const nlohmann::json& j, Persona& p);
void to_json(nlohmann::json& j, const CounterfactualAbstract& c);
void from_json(const nlohmann::json& j, CounterfactualAbstract& c);
void to_json(nlohmann::json& j, const ItemRef& r);
void from_json(const nlohmann::json& j, ItemRef& r);
void to_json(nlohmann::json& j, const ComparisonRecord& r);
void from_json(const nlohmann::json& j, ComparisonRecord& r);
void to_json(nlohmann::json& j, const BTFit& f);
void from_json(const nlohmann::json& j, BTFit& f);
void to_json(nlohmann::json& j, const Posterior& p);
void from_json(const nlohmann::json& j, Posterior& p);

}  // namespace rhetor
